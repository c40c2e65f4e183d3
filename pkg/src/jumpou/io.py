"""CSV and JSON serialisation with 17-significant-digit numbers."""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
import os
from pathlib import Path
from typing import Any, TextIO

import numpy as np

from jumpou.core import DiscretePath, SamplingScheme


class CsvFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_path_csv(path: DiscretePath, out: TextIO) -> None:
    out.write("t,x\n")
    for t, x in zip(path.times(), path.values):
        out.write(f"{fmt(t)},{fmt(x)}\n")


def write_jumps_csv(path: DiscretePath, out: TextIO) -> None:
    """One row per jump: interval index k and absolute jump time s."""
    if path.latent is None:
        raise ValueError("path carries no latent jump record")
    out.write("k,s\n")
    for k, s in zip(*path.latent.jump_times()):
        out.write(f"{int(k)},{fmt(s)}\n")


def read_path_csv(source: TextIO, delta: float) -> DiscretePath:
    """Read a ``t,x`` CSV; only the x column is used, t is checked for monotonicity."""
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise CsvFormatError(1, "empty file") from None
    if [h.strip() for h in header] != ["t", "x"]:
        raise CsvFormatError(1, f"expected header 't,x', got {','.join(header)!r}")
    times, values = [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise CsvFormatError(line, f"expected 2 fields, got {len(row)}")
        try:
            t, x = float(row[0]), float(row[1])
        except ValueError:
            raise CsvFormatError(line, f"non-numeric field in {','.join(row)!r}") from None
        if not (math.isfinite(t) and math.isfinite(x)):
            raise CsvFormatError(line, "non-finite value")
        if times and t <= times[-1]:
            raise CsvFormatError(line, "times must be strictly increasing")
        times.append(t)
        values.append(x)
    if len(values) < 2:
        raise CsvFormatError(reader.line_num, "need at least two observations")
    scheme = SamplingScheme(len(values) - 1, delta, values[0])
    return DiscretePath(scheme, np.array(values))


def _encode(obj: Any) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj: Any) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _encode(obj) + "\n"


def timestamp() -> str:
    """ISO-8601 UTC time; honours SOURCE_DATE_EPOCH for reproducible output."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (
        dt.datetime.fromtimestamp(int(epoch), tz=dt.timezone.utc)
        if epoch
        else dt.datetime.now(dt.timezone.utc).replace(microsecond=0)
    )
    return when.isoformat()


def write_text(target: str | os.PathLike, text: str) -> None:
    Path(target).write_text(text, encoding="utf-8", newline="\n")


def load_schema(name: str) -> dict:
    """JSON schema shipped with the package for a CLI report (``density``, ``fit``, ...)."""
    from importlib.resources import files

    return json.loads(files("jumpou").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8"))
