"""Result files: raw sample binaries, CSV report rows and JSON summaries.

Raw samples are stored as a 16-byte header (magic ``b"AWLS"``, ``u32``
version, ``u64`` count, all little endian) followed by ``count``
little-endian float64 values.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .stats import SampleSet

MAGIC = b"AWLS"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")

CSV_COLUMNS = (
    "experiment", "width", "heads", "trial", "kl", "log_kl", "ks",
    "mean", "var", "skew", "ex_kurtosis", "seed",
)


class IoFailure(OSError):
    """Writing or reading a result file failed."""


def write_samples(path, samples) -> Path:
    values = samples.values if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float).ravel()
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, values.size))
            fh.write(values.astype("<f8").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_samples(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if len(data) != _HEADER.size + 8 * count:
        raise ValueError(f"{path}: expected {count} values, file size disagrees")
    return np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(float)


def _fmt(x) -> str:
    # repr round-trips floats exactly, so CSV files are bit-stable
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else str(x)
    return str(x)


def write_csv(path, rows) -> Path:
    """Rows are mappings with (at least) the keys of :data:`CSV_COLUMNS`."""
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for row in rows:
                w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj


def write_json(path, payload) -> Path:
    """Deterministic JSON: sorted keys, fixed indentation, trailing newline."""
    path = Path(path)
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n"
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path
