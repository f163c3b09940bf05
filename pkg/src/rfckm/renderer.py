"""Volumetric rendering of downlink CSI from per-radiator properties.

Radiator ``j = 0`` is the one nearest the UE; transmittance accumulates over
the radiators between a radiator and the UE, independently for every
(subcarrier, rx, tx) entry.  All accumulation happens in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .csi import CsiTensor
from .sampler import RadiatorGrid


@dataclass(frozen=True)
class RadianceOutputs:
    """``sigma`` (real, >= 0) and ``coeffs`` (complex), both ``(n_a, n_s, n_c, n_r, n_t)``."""

    sigma: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.float64)
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if sigma.shape != coeffs.shape or sigma.ndim != 5:
            raise ValueError(f"sigma {sigma.shape} and coeffs {coeffs.shape} must share a 5-D shape")
        if np.any(sigma < 0):
            raise ValueError("sigma must be nonnegative")
        if not (np.all(np.isfinite(sigma)) and np.all(np.isfinite(coeffs))):
            raise ValueError("radiance outputs must be finite")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "coeffs", coeffs)


def absorption(sigma, delta):
    """``1 - exp(-sigma * delta)``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(sigma < 0) or np.any(delta <= 0):
        raise ValueError("absorption needs sigma >= 0 and delta > 0")
    out = -np.expm1(-sigma * delta)
    return float(out) if out.ndim == 0 else out


def transmittance(alphas, axis: int = 0) -> np.ndarray:
    """Exclusive cumulative product of ``1 - alpha`` along ``axis`` (first entry is 1)."""
    a = np.asarray(alphas, dtype=np.float64)
    if np.any(a < 0) or np.any(a >= 1):
        raise ValueError("absorption ratios must lie in [0, 1)")
    keep = np.cumprod(1.0 - a, axis=axis)
    ones = np.ones_like(np.take(a, [0], axis=axis))
    return np.concatenate([ones, np.delete(keep, -1, axis=axis)], axis=axis)


def _check(grid: RadiatorGrid, out: RadianceOutputs):
    if out.sigma.shape[:2] != grid.intervals.shape:
        raise ValueError(
            f"radiance outputs for {out.sigma.shape[:2]} radiators, grid has {grid.intervals.shape}"
        )


def contributions(grid: RadiatorGrid, out: RadianceOutputs) -> np.ndarray:
    """Per-radiator terms ``alpha * T * C``, shape ``(n_a, n_s, n_c, n_r, n_t)``."""
    _check(grid, out)
    tau = out.sigma * grid.intervals[:, :, None, None, None]
    alpha = -np.expm1(-tau)
    # prod(1 - alpha_k) over k < j == exp(-sum tau_k) over k < j
    trans = np.exp(-(np.cumsum(tau, axis=1) - tau))
    return alpha * trans * out.coeffs


def render_channel(grid: RadiatorGrid, out: RadianceOutputs) -> CsiTensor:
    terms = contributions(grid, out)
    # ray-major reduction order keeps results bit-stable
    return CsiTensor(terms.sum(axis=1).sum(axis=0))


def render_received(grid: RadiatorGrid, out: RadianceOutputs, x: np.ndarray) -> np.ndarray:
    """Noise-free received signal per subcarrier, shape ``(n_c, n_r)``.

    ``x`` is either one symbol vector ``(n_t,)`` used on every subcarrier or
    ``(n_c, n_t)``.
    """
    h = render_channel(grid, out).data
    x = np.asarray(x, dtype=np.complex128)
    if not np.all(np.isfinite(x)):
        raise ValueError("transmitted symbols must be finite")
    if x.ndim == 1:
        x = np.broadcast_to(x, (h.shape[0], h.shape[2]))
    if x.shape != (h.shape[0], h.shape[2]):
        raise ValueError(f"x shape {x.shape} incompatible with channel {h.shape}")
    return np.einsum("crt,ct->cr", h, x)


def aggregating_coeff(s: np.ndarray, x: np.ndarray, power: float | None = None) -> np.ndarray:
    """``s x^H / P`` with ``P = x^H x`` unless given; shape ``(n_r, n_t)``."""
    s = np.asarray(s, dtype=np.complex128).ravel()
    x = np.asarray(x, dtype=np.complex128).ravel()
    if power is None:
        power = float(np.vdot(x, x).real)
    if power <= 0:
        raise ValueError("transmit power must be positive")
    return np.outer(s, x.conj()) / power


def render_torch(sigma: torch.Tensor, c_re: torch.Tensor, c_im: torch.Tensor, delta: torch.Tensor):
    """Differentiable renderer.

    ``sigma``, ``c_re``, ``c_im``: ``(..., n_a, n_s, n_c, n_r, n_t)``;
    ``delta``: ``(n_a, n_s)``.  Returns ``(re, im)`` of shape ``(..., n_c, n_r, n_t)``.
    """
    if sigma.shape != c_re.shape or sigma.shape != c_im.shape:
        raise ValueError("sigma and coefficient shapes differ")
    if tuple(sigma.shape[-5:-3]) != tuple(delta.shape):
        raise ValueError(f"sigma radiators {tuple(sigma.shape[-5:-3])} vs intervals {tuple(delta.shape)}")
    tau = sigma * delta.to(sigma.dtype)[..., None, None, None]
    alpha = -torch.expm1(-tau)
    weight = alpha * torch.exp(tau - torch.cumsum(tau, dim=-4))
    re = (weight * c_re).sum(dim=-4).sum(dim=-4)
    im = (weight * c_im).sum(dim=-4).sum(dim=-4)
    return re, im
