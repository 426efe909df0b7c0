"""CSV output with fixed formatting (17 significant digits, ',' delimiter, header row)."""
from __future__ import annotations

import csv
from pathlib import Path


def fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, int)) and not isinstance(x, float):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=",", lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]
