"""Binary array container plus JSON manifests.

File layout (all integers little-endian)::

    offset  size      content
    0       4         magic b"HRAR"
    4       2         format version (uint16, currently 1)
    6       1         dtype code (uint8): 1 = float64, 2 = int64
    7       1         ndim (uint8)
    8       8*ndim    dims (uint64 each)
    ...               row-major payload, little-endian

Writes go to a temporary file in the same directory and are renamed into
place, so readers never see partial files.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"HRAR"
VERSION = 1
_CODES = {1: np.dtype("<f8"), 2: np.dtype("<i8")}
_DTYPES = {v: k for k, v in _CODES.items()}


class ContainerError(ValueError):
    pass


def _atomic_write(path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_array(arr) -> bytes:
    arr = np.asarray(arr)
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
        arr = arr.astype("<i8")
    else:
        arr = arr.astype("<f8")
    if arr.ndim > 255:
        raise ContainerError("too many dimensions")
    header = MAGIC + struct.pack("<HBB", VERSION, _DTYPES[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def decode_array(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise ContainerError("bad magic bytes")
    version, code, ndim = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if code not in _CODES:
        raise ContainerError(f"unknown dtype code {code}")
    dims = struct.unpack_from(f"<{ndim}Q", buf, 8)
    offset = 8 + 8 * ndim
    dtype = _CODES[code]
    count = int(np.prod(dims)) if ndim else 1
    if len(buf) - offset != count * dtype.itemsize:
        raise ContainerError("payload size does not match header")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(dims).copy()


def write_array(path, arr):
    _atomic_write(path, encode_array(arr))


def read_array(path) -> np.ndarray:
    return decode_array(Path(path).read_bytes())


def write_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True).encode("utf-8") + b"\n")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_csv(path, header, rows):
    """UTF-8 CSV with a header row; floats are written with repr precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    _atomic_write(path, buf.getvalue().encode("utf-8"))


def read_csv(path):
    """Return ``(header, rows)`` with every cell as a string."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)


def save_bundle(directory, arrays: dict, manifest: dict):
    """Write named arrays as ``<name>.bin`` plus ``manifest.json``."""
    directory = Path(directory)
    for name, arr in arrays.items():
        write_array(directory / f"{name}.bin", arr)
    write_json(directory / "manifest.json", dict(manifest, arrays=sorted(arrays)))


def load_bundle(directory):
    directory = Path(directory)
    manifest = read_json(directory / "manifest.json")
    arrays = {name: read_array(directory / f"{name}.bin") for name in manifest["arrays"]}
    return arrays, manifest
