"""Header-row CSV tables and JSON helpers with 17-digit numbers."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .exceptions import InvalidInputError


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def read_table(path, required: list[str] | None = None) -> dict[str, np.ndarray]:
    """Read a numeric CSV with a header row into ``{column: float array}``."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InvalidInputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            data.append([float(c) for c in row])
        except ValueError as exc:
            raise InvalidInputError(f"{path}:{lineno}: {exc}") from None
    arr = np.array(data, dtype=float).reshape(-1, len(header))
    table = {h: arr[:, i] for i, h in enumerate(header)}
    missing = [c for c in (required or []) if c not in table]
    if missing:
        raise InvalidInputError(f"{path}: missing columns {missing}")
    return table


def read_matrix(path) -> np.ndarray:
    """Numeric CSV without header semantics beyond an optional non-numeric first row."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    out = []
    for lineno, row in enumerate(rows, start=1):
        try:
            out.append([float(c) for c in row])
        except ValueError as exc:
            if lineno == 1:
                continue
            raise InvalidInputError(f"{path}:{lineno}: {exc}") from None
    if not out:
        raise InvalidInputError(f"{path}: no numeric rows")
    widths = {len(r) for r in out}
    if len(widths) != 1:
        raise InvalidInputError(f"{path}: ragged rows")
    return np.array(out, dtype=float)


def write_table(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dump_json(obj, path=None) -> str:
    """Serialize to JSON; Python's float repr already round-trips (17 significant digits at most)."""
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
