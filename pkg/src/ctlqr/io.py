"""CSV serialization shared by the estimators, controllers and the harness.

Floats are written with ``repr`` so files round-trip exactly and are
byte-identical for identical inputs.
"""
from __future__ import annotations

import csv
import io
from typing import Iterable, Mapping, Sequence

import numpy as np


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def rows_to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def matrices_to_csv(matrices: Mapping[str, np.ndarray]) -> str:
    """``matrix,row,col,value`` rows for each named matrix, in mapping order."""
    rows = []
    for name, M in matrices.items():
        M = np.atleast_2d(np.asarray(M, dtype=float))
        for i in range(M.shape[0]):
            for j in range(M.shape[1]):
                rows.append((name, i, j, float(M[i, j])))
    return rows_to_csv(["matrix", "row", "col", "value"], rows)


def matrices_from_csv(text: str) -> dict:
    entries: dict = {}
    reader = csv.DictReader(io.StringIO(text))
    for r in reader:
        entries.setdefault(r["matrix"], []).append((int(r["row"]), int(r["col"]), float(r["value"])))
    out = {}
    for name, cells in entries.items():
        n = max(c[0] for c in cells) + 1
        m = max(c[1] for c in cells) + 1
        M = np.zeros((n, m))
        for i, j, v in cells:
            M[i, j] = v
        out[name] = M
    return out
