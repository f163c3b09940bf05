"""``CKMP`` checkpoint files: a JSON metadata block plus named f32 arrays.

Layout (little-endian)::

    b"CKMP"  u32 version  u32 meta_len  meta (UTF-8 JSON)  u32 n_arrays
    array*: u16 name_len, name (UTF-8), u8 ndim, u32 dims[ndim], f32 data (C order)
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"CKMP"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class TruncatedFile(CheckpointError):
    pass


def encode(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_blob)), meta_blob, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        key = name.encode()
        parts.append(struct.pack("<HB", len(key), arr.ndim) + key)
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(buf) < 8:
        raise TruncatedFile("truncated file: header incomplete")
    if buf[:4] != MAGIC:
        raise BadMagic(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise VersionMismatch(f"version mismatch: file has {version}, reader supports {VERSION}")
    try:
        (meta_len,) = struct.unpack_from("<I", buf, 8)
        off = 12
        meta = json.loads(buf[off:off + meta_len].decode())
        off += meta_len
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        arrays = {}
        for _ in range(count):
            name_len, ndim = struct.unpack_from("<HB", buf, off)
            off += 3
            name = buf[off:off + name_len].decode()
            off += name_len
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            n = int(np.prod(shape)) * 4
            if off + n > len(buf):
                raise TruncatedFile(f"truncated file: array {name!r} incomplete")
            arrays[name] = np.frombuffer(buf, dtype="<f4", count=n // 4, offset=off).reshape(shape).copy()
            off += n
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TruncatedFile(f"truncated file: {exc}") from exc
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes after last array")
    return arrays, meta


def save(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    blob = encode(arrays, meta)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        return decode(f.read())
