"""Virtual radiator geometry: spherical Fibonacci ray directions and uniform radial bins."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0


@dataclass(frozen=True)
class RaySet:
    directions: np.ndarray  # (n_a, 3) unit vectors
    origin: np.ndarray = np.zeros(3)

    @property
    def n_a(self) -> int:
        return self.directions.shape[0]


@dataclass(frozen=True)
class RadiatorGrid:
    rays: RaySet
    intervals: np.ndarray  # (n_a, n_s) meters
    r_min: float
    r_max: float

    @property
    def n_a(self) -> int:
        return self.intervals.shape[0]

    @property
    def n_s(self) -> int:
        return self.intervals.shape[1]

    @property
    def far_edges(self) -> np.ndarray:
        """Radial distance of each interval's far edge, ``r_min + cumsum(delta)``."""
        return self.r_min + np.cumsum(self.intervals, axis=1)

    @property
    def centers(self) -> np.ndarray:
        return self.far_edges - self.intervals / 2.0

    @property
    def positions(self) -> np.ndarray:
        """Radiator midpoints in space, shape ``(n_a, n_s, 3)``."""
        return self.rays.origin + self.centers[..., None] * self.rays.directions[:, None, :]


def fibonacci_directions(n_a: int) -> np.ndarray:
    """Golden-angle spherical Fibonacci grid with the half-index offset.

    Point ``i`` has ``cos(theta) = 1 - 2 (i + 0.5) / n_a`` and azimuth
    ``2 pi i (1 - 1/phi)``, so z decreases strictly with ``i``.
    """
    if n_a < 1:
        raise ValueError("n_a must be >= 1")
    i = np.arange(n_a, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / n_a
    azimuth = 2.0 * math.pi * i * (1.0 - 1.0 / GOLDEN_RATIO)
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    return np.stack([rho * np.cos(azimuth), rho * np.sin(azimuth), z], axis=1)


def make_rays(n_a: int, origin=None) -> RaySet:
    origin = np.zeros(3) if origin is None else np.asarray(origin, dtype=float)
    return RaySet(fibonacci_directions(n_a), origin)


def radial_sample(rays: RaySet, n_s: int, r_min: float, r_max: float) -> RadiatorGrid:
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    if not (0.0 <= r_min < r_max) or not math.isfinite(r_max):
        raise ValueError(f"invalid radial range ({r_min}, {r_max})")
    delta = np.full((rays.n_a, n_s), (r_max - r_min) / n_s)
    return RadiatorGrid(rays, delta, float(r_min), float(r_max))


def make_grid(n_a: int, n_s: int, r_min: float = 0.5, r_max: float = 150.0) -> RadiatorGrid:
    return radial_sample(make_rays(n_a), n_s, r_min, r_max)
