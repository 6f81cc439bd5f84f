"""Minimal array container with a JSON provenance sidecar.

Byte layout (all little-endian):

    bytes 0-7    magic  b"DCEDPARR"
    uint32       format version (1)
    uint8        dtype code: 0 complex64, 1 complex128, 2 float32, 3 float64
    uint8        ndim
    uint64*ndim  shape
    payload      contiguous row-major array data

The sidecar `<file>.json` carries provenance (config hash, seeds, tool
version) plus any caller-provided metadata; it is written with sorted keys
so identical runs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DCEDPARR"
VERSION = 1

_DTYPE_CODES: dict[str, int] = {
    "complex64": 0,
    "complex128": 1,
    "float32": 2,
    "float64": 3,
}
_CODE_DTYPES = {v: np.dtype(k).newbyteorder("<") for k, v in _DTYPE_CODES.items()}


class DataError(RuntimeError):
    """Missing or corrupt artifact."""


def save_array(path: str | Path, arr: np.ndarray,
               sidecar: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    name = arr.dtype.name
    if name not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype {name}; use one of {sorted(_DTYPE_CODES)}")
    data = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<BB", _DTYPE_CODES[name], arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(data.tobytes())
    if sidecar is not None:
        with open(path.with_suffix(path.suffix + ".json"), "w") as f:
            json.dump(sidecar, f, indent=1, sort_keys=True)
            f.write("\n")
    return path


def load_array(path: str | Path) -> tuple[np.ndarray, dict | None]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: artifact not found")
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        code, ndim = struct.unpack("<BB", f.read(2))
        if code not in _CODE_DTYPES:
            raise DataError(f"{path}: unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim))
        dtype = _CODE_DTYPES[code]
        count = int(np.prod(shape)) if shape else 1
        payload = f.read(count * dtype.itemsize)
        if len(payload) != count * dtype.itemsize:
            raise DataError(f"{path}: truncated payload")
        arr = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    sidecar_path = path.with_suffix(path.suffix + ".json")
    sidecar = None
    if sidecar_path.exists():
        with open(sidecar_path) as f:
            sidecar = json.load(f)
    return arr, sidecar


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
