"""Reader/writer for the ``CKMD`` binary channel dataset format.

Layout (all little-endian)::

    b"CKMD"  u32 version
    u32 n_t, n_r, n_c_total, n_c_used, n_blocks, samples_per_block
    f64 subcarrier_spacing, f_up_center, f_down_center, tx_power, noise_power
    u64 record count
    record*: u32 block_index, 3 x f64 UE position,
             uplink CSI   (n_c_used*n_r*n_t interleaved f32 re/im, row-major c,r,t)
             downlink CSI (same)
"""

from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

from .csi import ChannelDataset, CsiTensor, Record, SystemConfig

MAGIC = b"CKMD"
VERSION = 1

_HEADER = struct.Struct("<4sI6I5dQ")
_REC_HEAD = struct.Struct("<I3d")


class DatasetFormatError(ValueError):
    pass


class BadMagic(DatasetFormatError):
    pass


class VersionMismatch(DatasetFormatError):
    pass


class TruncatedFile(DatasetFormatError):
    pass


class DimensionMismatch(DatasetFormatError):
    pass


def _csi_bytes(h: CsiTensor) -> bytes:
    inter = np.empty(h.data.shape + (2,), dtype="<f4")
    inter[..., 0] = h.data.real
    inter[..., 1] = h.data.imag
    return inter.tobytes(order="C")


def _csi_from(buf: bytes, shape) -> CsiTensor:
    arr = np.frombuffer(buf, dtype="<f4").reshape(tuple(shape) + (2,))
    return CsiTensor(arr[..., 0].astype(np.float32) + 1j * arr[..., 1].astype(np.float32))


def quantize(h: CsiTensor) -> CsiTensor:
    """Round CSI to the on-disk precision (complex64)."""
    return CsiTensor(h.data.astype(np.complex64))


def encode(ds: ChannelDataset) -> bytes:
    c = ds.config
    parts = [
        _HEADER.pack(
            MAGIC, VERSION,
            c.n_t, c.n_r, c.n_c_total, c.n_c_used, c.n_blocks, c.samples_per_block,
            c.subcarrier_spacing, c.f_up_center, c.f_down_center, c.tx_power, c.noise_power,
            len(ds.records),
        )
    ]
    for rec in ds.records:
        pos = np.asarray(rec.ue_position, dtype=np.float64)
        parts.append(_REC_HEAD.pack(int(rec.block_index), *pos.tolist()))
        parts.append(_csi_bytes(rec.h_up))
        parts.append(_csi_bytes(rec.h_down))
    return b"".join(parts)


def write_dataset(ds: ChannelDataset, path) -> str:
    """Write ``ds`` to ``path``; returns the sha256 hex digest of the file."""
    blob = encode(ds)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)
    return hashlib.sha256(blob).hexdigest()


def read_header(buf: bytes) -> tuple[SystemConfig, int]:
    if len(buf) < 8:
        raise TruncatedFile("truncated file: header incomplete")
    if buf[:4] != MAGIC:
        raise BadMagic(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise VersionMismatch(f"version mismatch: file has {version}, reader supports {VERSION}")
    if len(buf) < _HEADER.size:
        raise TruncatedFile("truncated file: header incomplete")
    fields = _HEADER.unpack_from(buf, 0)
    n_t, n_r, n_c_total, n_c_used, n_blocks, spb = fields[2:8]
    spacing, f_up, f_down, p, noise = fields[8:13]
    count = fields[13]
    try:
        cfg = SystemConfig(
            n_t=n_t, n_r=n_r, n_c_total=n_c_total, n_c_used=n_c_used,
            subcarrier_spacing=spacing, f_up_center=f_up, f_down_center=f_down,
            n_blocks=n_blocks, samples_per_block=spb, tx_power=p, noise_power=noise,
        )
    except ValueError as exc:
        raise DimensionMismatch(f"dimension mismatch: invalid header ({exc})") from exc
    return cfg, count


def decode(buf: bytes) -> ChannelDataset:
    cfg, count = read_header(buf)
    shape = cfg.csi_shape
    n_csi = 8 * shape[0] * shape[1] * shape[2]
    rec_size = _REC_HEAD.size + 2 * n_csi
    body = len(buf) - _HEADER.size
    if body < count * rec_size:
        raise TruncatedFile(
            f"truncated file: header declares {count} records, only {body // rec_size} present"
        )
    if body != count * rec_size:
        raise DimensionMismatch(
            f"dimension mismatch: {body} payload bytes do not match {count} records of shape {shape}"
        )
    records = []
    off = _HEADER.size
    for _ in range(count):
        block, x, y, z = _REC_HEAD.unpack_from(buf, off)
        off += _REC_HEAD.size
        h_up = _csi_from(buf[off:off + n_csi], shape)
        off += n_csi
        h_down = _csi_from(buf[off:off + n_csi], shape)
        off += n_csi
        if block >= cfg.n_blocks:
            raise DimensionMismatch(f"dimension mismatch: block index {block} >= n_blocks {cfg.n_blocks}")
        records.append(Record(block, np.array([x, y, z]), h_up, h_down))
    return ChannelDataset(cfg, records)


def read_dataset(path) -> ChannelDataset:
    with open(path, "rb") as f:
        return decode(f.read())


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
