"""Shared persistence helpers.

Every artifact uses the same pattern: a small JSON header `<name>.json`
next to a raw little-endian payload `<name>.<ext>`. Writes are atomic
(temp file + rename) so a crashed run never leaves a half-written
artifact behind a valid header.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(Path(path), text.encode())


def write_json(path: Path, obj: dict) -> None:
    atomic_write_text(Path(path), json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing header file: {path}")
    with open(path) as fh:
        return json.load(fh)


def write_header_payload(base: Path, header: dict, payload: bytes, ext: str) -> tuple[Path, Path]:
    """Write <base>.json + <base>.<ext>; header records the payload name."""
    base = Path(base)
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    header["data"] = base.name + "." + ext
    payload_path = base.with_name(base.name + "." + ext)
    atomic_write_bytes(payload_path, payload)
    write_json(base.with_suffix(".json"), header)
    return base.with_suffix(".json"), payload_path


def read_header_payload(header_path: Path) -> tuple[dict, bytes]:
    header_path = Path(header_path)
    header = read_json(header_path)
    if "data" not in header:
        raise DataError(f"header missing 'data' field: {header_path}")
    payload_path = header_path.with_name(header["data"])
    if not payload_path.exists():
        raise DataError(f"missing payload file: {payload_path}")
    return header, payload_path.read_bytes()


def array_to_f32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def f32_bytes_to_array(raw: bytes, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.frombuffer(raw, dtype="<f4")
    expect = int(np.prod(shape))
    if arr.size != expect:
        raise DataError(f"payload has {arr.size} float32 values, expected {expect}")
    return arr.reshape(shape).astype(np.float64)
