"""Schema-checked CSV readers for staircase-lab run directories.

Renderers consume only the documented CSV schemas and never recompute
physics; any missing file or column fails loudly with its name.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


class SchemaError(RuntimeError):
    """A run-directory artifact is missing or lacks a required column."""


def read_table(path: Path, required: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Read a CSV into named float columns (strings stay strings)."""
    if not path.exists():
        raise SchemaError(f"missing artifact {path.name}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path.name} is empty")
    header = rows[0]
    for col in required:
        if col not in header:
            raise SchemaError(f"{path.name}: missing column {col!r}")
    out: dict[str, np.ndarray] = {}
    body = rows[1:]
    for j, name in enumerate(header):
        vals = [r[j] for r in body]
        try:
            out[name] = np.array([float(v) for v in vals])
        except ValueError:
            out[name] = np.array(vals)
    return out


def split_curves(table: dict[str, np.ndarray], by: tuple[str, ...] = ("provenance", "tau")):
    """Split stacked staircase rows into per-(provenance, tau) blocks."""
    n = len(next(iter(table.values())))
    keys = [tuple(table[k][i] for k in by) for i in range(n)]
    blocks = []
    start = 0
    for i in range(1, n + 1):
        if i == n or keys[i] != keys[start]:
            blocks.append({k: v[start:i] for k, v in table.items()})
            start = i
    return blocks


def run_path(run_dir, name: str) -> Path:
    return Path(run_dir) / name
