"""CSV and JSON emission with atomic writes, and the matching CSV reader."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ParameterError
from .evolve import SurvivalTrace

SCHEMA_VERSION = 1
TRACE_COLUMNS = ("t_mm", "p", "re_a", "im_a")
PROFILE_COLUMNS = ("t_mm", "p", "sigma_p", "sigma_t")


def atomic_write_bytes(path, data: bytes) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def _format(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    value = float(value)
    if math.isnan(value):
        return "nan"
    # repr is the shortest string that parses back to the same double
    return repr(value)


def csv_text(columns: Sequence[str], data: Mapping[str, Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    length = {len(data[c]) for c in columns}
    if len(length) != 1:
        raise ParameterError("CSV columns have different lengths")
    for row in zip(*(data[c] for c in columns)):
        writer.writerow(_format(v) for v in row)
    return buf.getvalue()


def write_csv(path, columns: Sequence[str], data: Mapping[str, Sequence]) -> None:
    atomic_write_text(path, csv_text(columns, data))


def read_csv(path, required: Sequence[str] = ()) -> dict[str, np.ndarray]:
    """Parse a numeric CSV with a header row; errors name the offending line."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParameterError(f"{path}: line 1: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise ParameterError(f"{path}: line 1: missing column(s) {', '.join(missing)}")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParameterError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values.append([float(x) for x in row])
        except ValueError:
            raise ParameterError(f"{path}: line {lineno}: non-numeric field in {row!r}") from None
    if not values:
        raise ParameterError(f"{path}: line 2: no data rows")
    table = np.array(values)
    return {name: table[:, i] for i, name in enumerate(header)}


def trace_to_csv(path, trace: SurvivalTrace) -> None:
    a = trace.a if trace.a is not None else np.full(trace.t.shape, np.nan)
    write_csv(path, TRACE_COLUMNS, {"t_mm": trace.t, "p": trace.p, "re_a": a.real, "im_a": a.imag})


def trace_from_csv(path) -> SurvivalTrace:
    table = read_csv(path, required=("t_mm", "p"))
    a = None
    if "re_a" in table and "im_a" in table and not np.isnan(table["re_a"]).all():
        a = table["re_a"] + 1j * table["im_a"]
    try:
        return SurvivalTrace(table["t_mm"], table["p"], a)
    except ParameterError as exc:
        if "increasing" in str(exc):
            bad = int(np.argmax(np.diff(table["t_mm"]) <= 0)) + 3
            raise ParameterError(f"{path}: line {bad}: t_mm not strictly increasing") from None
        raise


def jsonable(obj):
    """Recursively convert dataclasses, numpy scalars/arrays and complex numbers."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.repr}
    if isinstance(obj, Mapping):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": jsonable(obj.real), "im": jsonable(obj.imag)}
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path, payload: Mapping) -> None:
    body = dict(payload)
    body.setdefault("schema_version", SCHEMA_VERSION)
    atomic_write_text(path, json.dumps(jsonable(body), indent=2, sort_keys=True) + "\n")
