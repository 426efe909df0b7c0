from tclkg.coverage import MAP_PATH, REPO_ROOT, REQUIRED_ANCHORS, check_map_completeness, read_map


def _copy_with(tmp_path, edit):
    text = edit(MAP_PATH.read_text())
    path = tmp_path / "map.txt"
    path.write_text(text)
    return check_map_completeness(path, root=REPO_ROOT)


def test_shipped_map_is_complete():
    report = check_map_completeness()
    assert report.passed, report.problems
    assert {e.anchor for e in report.entries} >= set(REQUIRED_ANCHORS)


def test_every_entry_has_formula_and_tests():
    entries, problems = read_map()
    assert not problems
    for e in entries:
        assert e.formula and e.tests


def test_removed_test_is_reported_by_anchor(tmp_path):
    report = _copy_with(tmp_path, lambda s: s.replace("tests/test_ansatz.py::test_gibbs_renyi_collapse, ", ""))
    assert report.passed  # other tests still cover the anchor
    report = _copy_with(tmp_path, lambda s: s.replace("tests/test_linalg.py::test_restricted_inverse_contract", "tests/test_linalg.py::test_gone"))
    assert not report.passed
    assert any("'pseudo-inverse'" in p and "test_gone" in p for p in report.problems)


def test_missing_anchor_is_reported(tmp_path):
    drop = lambda s: "\n".join(line for line in s.splitlines() if not line.startswith("alpha0-error"))
    report = _copy_with(tmp_path, drop)
    assert any("'alpha0-error'" in p and "no map entry" in p for p in report.problems)


def test_duplicate_anchor_is_reported(tmp_path):
    report = _copy_with(tmp_path, lambda s: s + "hs-basis | x | linalg.gell_mann_basis | tests/test_coverage.py::test_shipped_map_is_complete\n")
    assert any("duplicate anchor 'hs-basis'" in p for p in report.problems)


def test_unresolvable_operation_is_reported(tmp_path):
    report = _copy_with(tmp_path, lambda s: s.replace("| tcl.compositions |", "| tcl.no_such_function |"))
    assert any("'compositions'" in p and "no_such_function" in p for p in report.problems)


def test_malformed_line_and_missing_file(tmp_path):
    report = _copy_with(tmp_path, lambda s: s + "broken | only two\n")
    assert any("expected 4" in p for p in report.problems)
    report = check_map_completeness(tmp_path / "absent.txt")
    assert not report.passed and "not found" in report.problems[0]
