"""CSV and JSON serialisation with byte-stable output."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .variations import StructureFunctionTable

MEASURE_COLUMNS = ("cell_index", "t_left", "mass")
PATH_COLUMNS = ("j", "t", "increment", "cumulative")
TABLE_COLUMNS = ("level", "tau", "p", "raw_mean", "count")
SERIES_COLUMNS = ("x", "y", "yerr")


def fmt(x) -> str:
    """Reals with 17 significant digits, integers verbatim."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    lines = [",".join(columns)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return path


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and tuples to JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_bytes(dumps_json(obj).encode("utf-8"))
    return path


# --------------------------------------------------------------------------
# domain objects

def measure_rows(measure):
    return zip(range(measure.n_cells), measure.t_left, measure.masses)


def path_rows(path):
    t = path.times[1:]
    return zip(range(1, path.m_n + 1), t, path.increments, path.cumulative[1:])


def table_rows(table: StructureFunctionTable):
    return table.rows()


def _read_rows(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not UTF-8 text") from exc
    reader = csv.reader(text.splitlines())
    rows = [(i + 1, r) for i, r in enumerate(reader) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: file is empty")
    return rows


def _floats(lineno: int, row) -> list[float]:
    try:
        vals = [float(c) for c in row]
    except ValueError:
        raise DataError(f"line {lineno}: non-numeric field in {row!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise DataError(f"line {lineno}: non-finite value")
    return vals


def read_series_csv(path) -> np.ndarray:
    """Read a path CSV (``j,t,increment,cumulative``) or a one-column series.

    A single column is taken as increments.  Returns the cumulative path
    starting at 0.
    """
    rows = _read_rows(path)
    head = [c.strip() for c in rows[0][1]]
    if head == list(PATH_COLUMNS):
        body, col = rows[1:], 2
    elif len(head) == 1:
        try:
            float(head[0])
            body = rows
        except ValueError:
            body = rows[1:]
        col = 0
    else:
        raise DataError(f"line 1: expected header {','.join(PATH_COLUMNS)} or one column")
    width = len(head)
    inc = []
    for lineno, row in body:
        if len(row) != width:
            raise DataError(f"line {lineno}: expected {width} fields, got {len(row)}")
        inc.append(_floats(lineno, row)[col])
    if not inc:
        raise DataError("series has no data rows")
    n = len(inc)
    if n & (n - 1):
        raise DataError(f"series length {n} is not a power of two")
    return np.concatenate(([0.0], np.cumsum(inc)))


def read_table_csv(path) -> StructureFunctionTable:
    rows = _read_rows(path)
    head = [c.strip() for c in rows[0][1]]
    if head != list(TABLE_COLUMNS):
        raise DataError(f"line 1: expected header {','.join(TABLE_COLUMNS)}")
    parsed = []
    for lineno, row in rows[1:]:
        if len(row) != len(TABLE_COLUMNS):
            raise DataError(f"line {lineno}: expected 5 fields, got {len(row)}")
        n, tau, p, raw, count = _floats(lineno, row)
        if n != int(n) or count != int(count):
            raise DataError(f"line {lineno}: level and count must be integers")
        parsed.append((int(n), tau, p, raw, int(count)))
    return StructureFunctionTable.from_rows(parsed)
