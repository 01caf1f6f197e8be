"""Newline-delimited JSON trace files."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj, **kw) -> str:
    return json.dumps(clean(obj), sort_keys=True, allow_nan=False, **kw)


def write_trace(path, steps, summary) -> None:
    """One ``{"type": "step", ...}`` line per sim step, then a summary line."""
    with Path(path).open("w") as fh:
        for rec in steps:
            fh.write(dumps({"type": "step", **rec}) + "\n")
        fh.write(dumps({"type": "summary", **summary}) + "\n")


def read_trace(path) -> tuple[list, dict]:
    steps, summary = [], None
    with Path(path).open() as fh:
        for line in fh:
            rec = json.loads(line)
            kind = rec.pop("type")
            if kind == "step":
                steps.append(rec)
            elif kind == "summary":
                summary = rec
    return steps, summary
