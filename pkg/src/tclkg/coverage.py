"""Machine-checked map from implemented formulas to operations and tests.

Each non-comment line of the map file reads ``anchor | formula | op | tests``
where ``op`` is a dotted name inside :mod:`tclkg` and ``tests`` is a
comma-separated list of ``tests/<file>.py::<name>`` identifiers.
"""
from __future__ import annotations

import ast
import importlib
from dataclasses import dataclass, field
from pathlib import Path

MAP_PATH = Path(__file__).with_name("data") / "equation_map.txt"
REPO_ROOT = Path(__file__).resolve().parents[2]

REQUIRED_ANCHORS = (
    "pseudo-inverse",
    "hs-basis",
    "linear-equation",
    "free-dissipator",
    "drive-commutator",
    "interaction-representation",
    "resonance-fluorescence-model",
    "high-temperature-generator",
    "propagator-equation",
    "propagator-derivative",
    "dyson-series",
    "projector-family",
    "argyres-kelley-projector",
    "relevant-observables",
    "consistent-ansatz",
    "gibbs-family",
    "renyi-family",
    "linear-family",
    "biorthogonality",
    "two-level-family",
    "gibbs-renyi-collapse",
    "kg-parametric",
    "kg-nonlinear",
    "kg-time-dependent",
    "composition-law",
    "fixed-point-law",
    "robertson-condition",
    "linear-ansatz-constant-projector",
    "time-local-equation",
    "time-local-coefficients",
    "compositions",
    "m-terms",
    "k-expansion",
    "i-expansion",
    "average-equation",
    "first-order-averages",
    "second-order-averages",
    "consistent-mean-solve",
    "qubit-linear-projector",
    "linear-example-equations",
    "lambda4-error",
    "exact-solution",
    "scaled-limit-equations",
    "wick-rotation",
    "nonlinear-ansatz",
    "nonlinear-equation",
    "nonlinear-closed-form",
    "first-order-branches",
    "side-solution",
    "alpha0-error",
)


@dataclass(frozen=True)
class MapEntry:
    anchor: str
    formula: str
    op: str
    tests: tuple
    line: int


@dataclass
class CoverageReport:
    entries: list = field(default_factory=list)
    problems: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.problems

    def lines(self):
        status = "PASS" if self.passed else "FAIL"
        return [f"coverage map: {len(self.entries)} entries, {status}", *(f"  {p}" for p in self.problems)]


def read_map(path=MAP_PATH):
    entries, problems = [], []
    path = Path(path)
    if not path.is_file():
        return entries, [f"map file {path} not found"]
    for i, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 4:
            problems.append(f"line {i}: expected 4 '|'-separated fields, got {len(parts)}")
            continue
        anchor, formula, op, tests = parts
        entries.append(MapEntry(anchor, formula, op, tuple(t.strip() for t in tests.split(",") if t.strip()), i))
    return entries, problems


def _resolve(op):
    module, _, name = ("tclkg." + op).rpartition(".")
    try:
        obj = importlib.import_module(module)
    except ImportError:
        return False
    return hasattr(obj, name)


def _test_names(path, cache):
    if path not in cache:
        names = set()
        if path.is_file():
            tree = ast.parse(path.read_text())
            for node in tree.body:
                if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
                    names.add(node.name)
                elif isinstance(node, ast.ClassDef):
                    for sub in node.body:
                        if isinstance(sub, (ast.FunctionDef, ast.AsyncFunctionDef)):
                            names.add(f"{node.name}::{sub.name}")
        cache[path] = names
    return cache[path]


def check_map_completeness(path=MAP_PATH, root=REPO_ROOT, required=REQUIRED_ANCHORS):
    """Verify the map: resolvable ops, existing tests, unique anchors, all required anchors present."""
    entries, problems = read_map(path)
    report = CoverageReport(entries, problems)
    seen = {}
    cache = {}
    for e in entries:
        if e.anchor in seen:
            report.problems.append(f"duplicate anchor {e.anchor!r} (lines {seen[e.anchor]} and {e.line})")
            continue
        seen[e.anchor] = e.line
        if not _resolve(e.op):
            report.problems.append(f"anchor {e.anchor!r}: operation {e.op!r} not found")
        if not e.tests:
            report.problems.append(f"anchor {e.anchor!r} has no tests")
        for test in e.tests:
            file, _, name = test.partition("::")
            if name not in _test_names(Path(root) / file, cache):
                report.problems.append(f"anchor {e.anchor!r}: test {test!r} not found")
    for anchor in required:
        if anchor not in seen:
            report.problems.append(f"required anchor {anchor!r} has no map entry")
    return report
