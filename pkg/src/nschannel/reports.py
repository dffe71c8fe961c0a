"""Deterministic report writers: canonical JSON and fixed-format CSV.

Identical payloads produce byte-identical files: keys are sorted, floats go
through Python's shortest-roundtrip repr, CSV numbers use 17 significant
digits, and writes are atomic (temp file + rename).  Reports carry no
timestamps for the same reason.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

SCHEMA_VERSION = 1


def sanitize(obj):
    """Recursively convert numpy scalars/arrays so json emits plain Python."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):  # before int: bool subclasses int
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, complex):
        return {"re": float(obj.real), "im": float(obj.imag)}
    return obj


def _atomic_write(path, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, payload: dict) -> None:
    body = dict(sanitize(payload))
    body.setdefault("schema_version", SCHEMA_VERSION)
    _atomic_write(path, json.dumps(body, sort_keys=True, indent=2) + "\n")


def write_csv(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)
