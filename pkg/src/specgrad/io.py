"""Serialization for harness outputs: CSV/JSON tables, logs, feature files.

Numbers are written in their shortest round-trip decimal form, switching to
scientific notation below 1e-3 or at 1e6 and above, so emitted tables diff
stably across platforms and parse back to the exact same floats. Every writer
embeds the resolved run configuration in a preamble or config object.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

FEATURE_MAGIC = b"GCPF"
_FEATURE_HEADER = struct.Struct("<4sIII")


def format_number(x) -> str:
    """Shortest decimal string that round-trips to the same float."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x != x:
        return "nan"
    if x == float("inf"):
        return "inf"
    if x == float("-inf"):
        return "-inf"
    if x == 0.0:
        return "0"
    ax = abs(x)
    if ax < 1e-3 or ax >= 1e6:
        return np.format_float_scientific(x, unique=True, trim="-")
    return np.format_float_positional(x, unique=True, trim="-")


def format_cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return format_number(x)


def write_csv(path, header, rows, preamble: dict | None = None) -> None:
    path = Path(path)
    lines = []
    for key, value in (preamble or {}).items():
        lines.append(f"# {key}={format_cell(value)}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(format_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple[dict, list, list]:
    """Parse a harness CSV back into (preamble, header, rows of strings)."""
    preamble: dict = {}
    header: list = []
    rows: list = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            preamble[key.strip()] = value
            continue
        cells = line.split(",")
        if not header:
            header = cells
        else:
            rows.append(cells)
    return preamble, header, rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2) + "\n")


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(_jsonable(rec)) + "\n")


def read_jsonl(path) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_feature_file(path, matrices) -> None:
    """Binary block of little-endian float64 feature matrices.

    Layout: 16-byte header (magic GCPF, u32 d, u32 N, u32 count) followed by
    ``count`` row-major d x N blocks.
    """
    matrices = [np.asarray(m, dtype=np.float64) for m in matrices]
    if not matrices:
        raise InvalidInputError("feature file needs at least one matrix")
    d, n = matrices[0].shape
    if any(m.shape != (d, n) for m in matrices):
        raise InvalidInputError("all feature matrices must share one shape")
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, d, n, len(matrices)))
        for m in matrices:
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def read_feature_file(path) -> list:
    raw = Path(path).read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise InvalidInputError(f"{path}: truncated feature file")
    magic, d, n, count = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise InvalidInputError(f"{path}: bad magic {magic!r}")
    expected = _FEATURE_HEADER.size + 8 * d * n * count
    if len(raw) != expected:
        raise InvalidInputError(
            f"{path}: expected {expected} bytes for {count} blocks of {d}x{n}, got {len(raw)}"
        )
    out = []
    offset = _FEATURE_HEADER.size
    for _ in range(count):
        block = np.frombuffer(raw, dtype="<f8", count=d * n, offset=offset)
        out.append(block.reshape(d, n).copy())
        offset += 8 * d * n
    return out


def read_config_file(path) -> dict:
    """key=value lines; blank lines and # comments ignored."""
    conf: dict = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInputError(f"config line without '=': {line!r}")
        key, _, value = line.partition("=")
        conf[key.strip()] = value.strip()
    return conf
