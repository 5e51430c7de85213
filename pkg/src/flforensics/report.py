"""NDJSON records and plain-text tables.

Floats are written with 6 significant digits (``format(x, ".6g")``), which is
still a valid JSON number; NaN and infinities become ``null``. Keys keep
their insertion order so the same report always serializes to the same bytes.
"""
from __future__ import annotations

import json
import math
from typing import Iterable, Mapping

import numpy as np

SIG_DIGITS = 6


def fmt_num(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        return "null"
    s = format(x, f".{SIG_DIGITS}g")
    return "0" if s == "-0" else s


def _encode(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_num(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, Mapping):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple, set, frozenset, np.ndarray)):
        items = sorted(v) if isinstance(v, (set, frozenset)) else list(v)
        return "[" + ", ".join(_encode(x) for x in items) + "]"
    raise TypeError(f"cannot encode {type(v).__name__}")


def encode_record(record: Mapping) -> str:
    return _encode(record)


def write_ndjson(path, records: Iterable[Mapping]) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(encode_record(r) + "\n")


def read_ndjson(path) -> list[dict]:
    out = []
    with open(path) as f:
        for i, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{i}: bad record: {e}") from e
    return out


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return fmt_num(v) if math.isfinite(v) else "nan"
    return str(v)


def table(rows: list[Mapping], columns: list[str]) -> str:
    """Left-aligned text table of ``columns`` over ``rows``."""
    cells = [[_cell(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    line = "  ".join(c.ljust(w) for c, w in zip(columns, widths))
    out = [line, "  ".join("-" * w for w in widths)]
    out += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(line.rstrip() for line in out) + "\n"
