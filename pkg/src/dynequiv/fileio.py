"""Atomic file writes and deterministic JSON/CSV serialization.

All artifacts are written via a temp-file-and-rename so a crashed run never
leaves a truncated file behind. Floats are serialized with shortest
round-trip repr, which keeps repeated seeded runs bit-identical.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Any, Iterable, Sequence

import numpy as np


def atomic_write_text(path: str, text: str) -> None:
    """Write text to path atomically (same-directory temp file + rename)."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def jsonable(obj: Any) -> Any:
    """Convert numpy containers/scalars to plain Python for json.dump."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dump_json(obj: Any) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path: str, obj: Any) -> None:
    atomic_write_text(path, dump_json(obj))


def read_json(path: str) -> Any:
    with open(path) as handle:
        return json.load(handle)


def format_float(value: float) -> str:
    # repr of a Python float is the shortest string that round-trips
    return repr(float(value))


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[float]]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_float(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path: str) -> tuple[list[str], np.ndarray]:
    """Read a numeric CSV written by write_csv; returns (header, data)."""
    with open(path) as handle:
        header = handle.readline().strip().split(",")
        data = np.loadtxt(handle, delimiter=",", ndmin=2)
    if data.size == 0:
        data = data.reshape(0, len(header))
    return header, data
