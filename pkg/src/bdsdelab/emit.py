"""Artifact writers: full-precision CSV and JSON with stable bodies.

Floats are rendered with 17 significant digits so that reruns with identical
(config, seed) produce byte-identical files.
"""

from __future__ import annotations

import json
import os

import numpy as np


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path: str, header, rows) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=1, sort_keys=True)
        fh.write("\n")


def field_rows(est) -> list:
    rows = []
    for r in range(est.n_outer):
        for i, s in enumerate(est.s_nodes):
            for j, x in enumerate(est.x_nodes):
                rows.append((r, s, x, est.values[r, i, j], est.stderr[r, i, j]))
    return rows


def iteration_rows(log) -> list:
    rows = []
    for entry in log:
        it = entry.get("iter", entry.get("stage", 0))
        node = entry.get("window", (-1,))[0] if "window" in entry else -1
        for key, val in entry.items():
            if key in ("iter", "stage", "window", "n_trunc", "n_reg"):
                continue
            if isinstance(val, (int, float, np.floating)):
                rows.append((it, node, key, val))
    return rows
