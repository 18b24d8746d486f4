"""Deterministic CSV/JSON emitters.

Floats are written with ``repr`` (shortest round-trip decimal); NaN is
written as ``nan`` and infinities as ``inf``/``-inf`` in both formats, so
identical inputs always give identical bytes.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class EmitError(OSError):
    """Failure writing an artifact; the message names the path."""


def format_float(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_encode_str(k)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if obj is None:
        return "null"
    return _encode_str(obj)


def _encode_str(s: str) -> str:
    return json.dumps(str(s), ensure_ascii=True)


def dumps_json(obj, indent: int = 2) -> str:
    """JSON text with shortest round-trip floats and literal ``nan``/``inf``.

    Key order is preserved (callers build dicts in a fixed order).
    """
    return _encode(_to_jsonable(obj), indent, 0) + "\n"


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise EmitError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def write_json(path: str | os.PathLike, obj) -> Path:
    return _write(Path(path), dumps_json(obj))


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
                cells.append(str(int(v)))
            elif isinstance(v, str):
                cells.append(v)
            else:
                cells.append(format_float(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return _write(Path(path), csv_text(header, rows))


def field_rows(nodes: np.ndarray, values: np.ndarray):
    """Rows ``x[, y], value`` in node order."""
    return [list(map(float, X)) + [float(v)] for X, v in zip(nodes, values)]


def field_header(dim: int) -> list[str]:
    return ["x", "value"] if dim == 1 else ["x", "y", "value"]


def write_field(path, nodes: np.ndarray, values: np.ndarray) -> Path:
    return write_csv(path, field_header(nodes.shape[1]), field_rows(nodes, values))


def write_trajectory_fields(directory, name: str, nodes: np.ndarray, series: np.ndarray) -> list[Path]:
    """One CSV per time node: ``<directory>/<name>_%04d.csv``."""
    d = Path(directory)
    return [write_field(d / f"{name}_{i:04d}.csv", nodes, w) for i, w in enumerate(series)]


def read_field_csv(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_field`: returns ``(coordinates, values)``."""
    p = Path(path)
    try:
        with open(p, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise EmitError(f"cannot read {p}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        raise ValueError(f"{p}: malformed CSV ({exc})") from exc
    if header not in (["x", "value"], ["x", "y", "value"]):
        raise ValueError(f"{p}: header must be 'x,value' or 'x,y,value', got {','.join(header)!r}")
    if data.shape[1] != len(header):
        raise ValueError(f"{p}: expected {len(header)} columns, got {data.shape[1]}")
    return data[:, :-1], data[:, -1]
