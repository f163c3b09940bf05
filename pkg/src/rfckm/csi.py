"""Core CSI containers, complex/real packing and error metrics.

Every CSI tensor in the package is a complex array indexed
``[subcarrier, rx antenna, tx antenna]``.  Packed real tensors put all real
parts first and all imaginary parts second along the frequency axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class DegenerateGroundTruth(ValueError):
    """Raised when a truth slice has zero energy and cannot normalize an error."""


@dataclass(frozen=True)
class CsiTensor:
    """Complex channel frequency response, shape ``(n_c_used, n_r, n_t)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"CSI must be 3-D (c, r, t), got shape {data.shape}")
        if min(data.shape) < 1:
            raise ValueError(f"CSI dimensions must be positive, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("CSI contains non-finite entries")
        if not np.iscomplexobj(data):
            data = data.astype(np.complex128)
        data = np.array(data, copy=True)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n_c_used(self) -> int:
        return self.data.shape[0]

    @property
    def n_r(self) -> int:
        return self.data.shape[1]

    @property
    def n_t(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def energy(self) -> float:
        return float(np.sum(np.abs(self.data) ** 2))

    def __eq__(self, other):
        if not isinstance(other, CsiTensor):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True)
class SystemConfig:
    """Array sizes, OFDM grid and link budget of one MIMO-OFDM configuration."""

    n_t: int = 8
    n_r: int = 1
    n_c_total: int = 64
    n_c_used: int = 8
    subcarrier_spacing: float = 312.5e3
    f_up_center: float = 6.715e9
    f_down_center: float = 6.765e9
    n_blocks: int = 4
    samples_per_block: int = 16
    tx_power: float = 1.0
    noise_power: float = 0.1

    def __post_init__(self):
        for name in ("n_t", "n_r", "n_c_total", "n_c_used", "n_blocks", "samples_per_block"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.n_c_used > self.n_c_total:
            raise ValueError("n_c_used cannot exceed n_c_total")
        for name in ("subcarrier_spacing", "f_up_center", "f_down_center"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tx_power <= 0 or self.noise_power <= 0:
            raise ValueError("tx_power and noise_power must be positive")

    def subcarrier_freqs(self, band: str = "down") -> np.ndarray:
        """Per-subcarrier frequencies in Hz, centered on the band center."""
        center = {"up": self.f_up_center, "down": self.f_down_center}[band]
        k = np.arange(self.n_c_used, dtype=np.float64)
        return center + (k - (self.n_c_used - 1) / 2.0) * self.subcarrier_spacing

    @property
    def csi_shape(self) -> tuple[int, int, int]:
        return (self.n_c_used, self.n_r, self.n_t)

    @property
    def gamma(self) -> float:
        return self.tx_power / self.noise_power


def array_shape(n: int, rows: int | None = None) -> tuple[int, int]:
    """Rows x cols of a UPA with ``n`` elements (as square as possible)."""
    if rows is None:
        rows = int(math.isqrt(n))
        while n % rows:
            rows -= 1
    if rows < 1 or n % rows:
        raise ValueError(f"{rows} rows do not tile {n} elements")
    return rows, n // rows


@dataclass
class Record:
    block_index: int
    ue_position: np.ndarray
    h_up: CsiTensor
    h_down: CsiTensor


@dataclass
class ChannelDataset:
    config: SystemConfig
    records: list[Record] = field(default_factory=list)

    def __post_init__(self):
        for rec in self.records:
            self._check(rec)

    def _check(self, rec: Record):
        shape = self.config.csi_shape
        if rec.h_up.shape != shape or rec.h_down.shape != shape:
            raise ValueError(f"record CSI shape {rec.h_up.shape} does not match config {shape}")
        if not 0 <= rec.block_index < self.config.n_blocks:
            raise ValueError(f"block index {rec.block_index} outside [0, {self.config.n_blocks})")

    def append(self, rec: Record):
        self._check(rec)
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def blocks(self) -> list[int]:
        return sorted({r.block_index for r in self.records})

    def split_by_block(self, holdout: Sequence[int]) -> tuple[list[Record], list[Record]]:
        held = set(holdout)
        train = [r for r in self.records if r.block_index not in held]
        val = [r for r in self.records if r.block_index in held]
        return train, val

    def __eq__(self, other):
        if not isinstance(other, ChannelDataset):
            return NotImplemented
        if self.config != other.config or len(self) != len(other):
            return False
        for a, b in zip(self.records, other.records):
            if a.block_index != b.block_index or not np.array_equal(a.ue_position, b.ue_position):
                return False
            if a.h_up != b.h_up or a.h_down != b.h_down:
                return False
        return True


def _as_array(h) -> np.ndarray:
    return h.data if isinstance(h, CsiTensor) else np.asarray(h)


def pack(h) -> np.ndarray:
    """Complex ``(N_c, ...)`` -> real ``(2 N_c, ...)``, real parts first."""
    x = _as_array(h)
    return np.concatenate([x.real, x.imag], axis=0)


def unpack(packed: np.ndarray, axis: int = 0) -> np.ndarray:
    """Inverse of :func:`pack` along ``axis``."""
    packed = np.asarray(packed)
    n2 = packed.shape[axis]
    if n2 % 2:
        raise ValueError(f"packed axis has odd length {n2}")
    re, im = np.split(packed, 2, axis=axis)
    return re + 1j * im


def nmse(pred, truth) -> float:
    """Mean over samples and subcarriers of ||pred - truth||_F^2 / ||truth||_F^2.

    Each (sample, subcarrier) slice is normalized by its own truth energy.
    Accepts single tensors or equal-length sequences of tensors.
    """
    if isinstance(pred, (CsiTensor, np.ndarray)):
        pred, truth = [pred], [truth]
    if len(pred) != len(truth) or not pred:
        raise ValueError("pred and truth must be non-empty and aligned")
    terms = []
    for p, t in zip(pred, truth):
        p, t = _as_array(p), _as_array(t)
        if p.shape != t.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
        den = np.sum(np.abs(t) ** 2, axis=(-2, -1))
        if np.any(den == 0):
            raise DegenerateGroundTruth("degenerate ground truth: zero-energy slice")
        num = np.sum(np.abs(p - t) ** 2, axis=(-2, -1))
        terms.append(num / den)
    return float(np.mean(np.concatenate([np.ravel(t) for t in terms])))


def esnr_db(estimate, truth) -> float:
    h = _as_array(truth)
    err = np.sum(np.abs(_as_array(estimate) - h) ** 2)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(np.sum(np.abs(h) ** 2) / err)


def add_noise_at_esnr(x: np.ndarray, esnr: float | None, rng: np.random.Generator) -> np.ndarray:
    """Return ``x + n`` with complex Gaussian ``n`` rescaled to hit ``esnr`` dB exactly."""
    x = np.asarray(x)
    if esnr is None or esnr == math.inf:
        return x.copy()
    energy = np.sum(np.abs(x) ** 2)
    if energy == 0:
        raise ValueError("cannot corrupt a zero-norm channel to a target ESNR")
    raw = (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)) / math.sqrt(2.0)
    scale = math.sqrt(energy / (10.0 ** (esnr / 10.0) * np.sum(np.abs(raw) ** 2)))
    return x + scale * raw


def corrupt_to_esnr(h: CsiTensor, esnr: float | None, seed: int) -> CsiTensor:
    """Corrupt ``h`` with AWGN whose realized ESNR equals ``esnr`` dB.

    ``esnr`` of ``None`` or ``math.inf`` returns ``h`` unchanged.
    """
    rng = np.random.default_rng(seed)
    return CsiTensor(add_noise_at_esnr(h.data, esnr, rng))
