"""Deterministic CSV/JSON helpers.

All pipeline CSVs go through these writers so that a rerun with the same
seed produces byte-identical files: fixed ``%.17g`` float formatting
(lossless for float64), ``\\n`` newlines, sorted JSON keys.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def format_float(v: float) -> str:
    return "%.17g" % float(v)


def write_csv(path, header: list[str], rows: np.ndarray) -> None:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows.reshape(-1, 1)
    if rows.shape[1] != len(header):
        raise ValueError(
            f"{path}: {len(header)} header fields but {rows.shape[1]} columns"
        )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_float(v) for v in row) + "\n")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with open(path, "r") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2,
                      dtype=np.float64)
    if data.size == 0:
        data = data.reshape(0, len(header))
    return header, data


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path, "r") as fh:
        return json.load(fh)
