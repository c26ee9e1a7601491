"""On-disk formats.

MatrixFile (``.mvwm``)::

    b"MVWM1"  rows:uint64-le  cols:uint64-le  rows*cols float64-le, row-major

with an optional ``<file>.meta`` sidecar of ``key = value`` lines.

Model container::

    magic line (b"DMCCA1\\n" or b"LMCCA1\\n")  header_len:uint64-le
    header: UTF-8 JSON (sorted keys) listing array names and shapes
    payload: the arrays back to back, float64-le, row-major

Records are single lines of space-separated ``key=value`` pairs.
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import InvalidConfigError, ShapeError

MATRIX_MAGIC = b"MVWM1"
_DIMS = struct.Struct("<QQ")


def write_matrix(path, data, meta: Mapping | None = None) -> None:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeError(f"matrix files hold 2-D data, got shape {arr.shape}")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(_DIMS.pack(*arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    if meta:
        write_kv(Path(str(path) + ".meta"), meta)


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    head = len(MATRIX_MAGIC) + _DIMS.size
    if raw[:len(MATRIX_MAGIC)] != MATRIX_MAGIC or len(raw) < head:
        raise InvalidConfigError(f"{path}: not a matrix file (bad magic)")
    rows, cols = _DIMS.unpack(raw[len(MATRIX_MAGIC):head])
    if len(raw) - head != rows * cols * 8:
        raise InvalidConfigError(
            f"{path}: payload has {len(raw) - head} bytes, header promises {rows * cols * 8}")
    return np.frombuffer(raw, dtype="<f8", offset=head).reshape(rows, cols).astype(np.float64)


def read_matrix_meta(path) -> dict:
    side = Path(str(path) + ".meta")
    return read_kv(side) if side.exists() else {}


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def write_kv(path, values: Mapping) -> None:
    lines = [f"{k} = {format_value(v)}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_kv(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise InvalidConfigError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def parse_float(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    return float(t)


def parse_list(text: str, cast=float) -> list:
    return [cast(x) for x in text.replace(" ", "").split(",") if x]


def format_record(record: Mapping) -> str:
    return " ".join(f"{k}={format_value(v)}" for k, v in record.items())


def parse_record(line: str) -> dict[str, str]:
    out = {}
    for token in line.split():
        if "=" not in token:
            raise InvalidConfigError(f"malformed record token {token!r}")
        k, v = token.split("=", 1)
        out[k] = v
    return out


def write_records(path, records: Iterable[Mapping]) -> None:
    Path(path).write_text("".join(format_record(r) + "\n" for r in records))


def read_records(path) -> list[dict[str, str]]:
    return [parse_record(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_container(path, magic: str, header: Mapping, arrays: list[tuple[str, np.ndarray]]) -> None:
    header = dict(header)
    header["format"] = magic
    header["arrays"] = [[name, list(np.shape(a))] for name, a in arrays]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(magic.encode() + b"\n")
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_container(path, magic: str) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    tag = magic.encode() + b"\n"
    if not raw.startswith(tag):
        raise InvalidConfigError(f"{path}: expected a {magic} container")
    pos = len(tag)
    (hlen,) = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    header = json.loads(raw[pos:pos + hlen].decode())
    pos += hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += count * 8
    if pos != len(raw):
        raise InvalidConfigError(f"{path}: {len(raw) - pos} trailing bytes after payload")
    return header, arrays
