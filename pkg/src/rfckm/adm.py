"""Query generation for the radiator network.

Raw queries replicate the packed uplink CSI to every radiator.  Two learned
stages then deform them: an angular stage over each radiator's
``(channel, rx, tx)`` map, guided by ray directions and partial downlink
pilots, and a radial stage that mixes the radiators of one ray, guided by the
pilots and the sampling intervals.

Shape contract for one sample (``A`` rays, ``S`` radiators per ray,
``C`` subcarriers, ``R``/``T`` rx/tx antennas)::

    Q_raw (+) xi_ch (+) xi_ang        (A*S, 4C+3, R, T)
    Q_ang                             (A*S, 2C,   R, T)
    Q_ang (+) xi_ch (+) xi_rad        (A,   3S,   2C, R*T)
    Q_rad                             (A,   S,    2C, R*T)
    Q                                 (A*S, 2C,   R, T)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .csi import CsiTensor, add_noise_at_esnr, pack
from .sampler import RadiatorGrid, RaySet


@dataclass(frozen=True)
class PilotPattern:
    """Downlink pilots on every ``subcarrier_stride``-th subcarrier and
    ``antenna_stride``-th tx antenna; ``enabled=False`` sends no pilots."""

    subcarrier_stride: int = 4
    antenna_stride: int = 2
    enabled: bool = True

    def __post_init__(self):
        if self.subcarrier_stride < 1 or self.antenna_stride < 1:
            raise ValueError("pilot strides must be positive")

    @property
    def rho(self) -> float:
        if not self.enabled:
            return 0.0
        return 1.0 / (self.subcarrier_stride * self.antenna_stride)

    def mask(self, n_c: int, n_r: int, n_t: int) -> np.ndarray:
        """Boolean ``(n_c, n_r, n_t)`` support of observed entries."""
        if self.subcarrier_stride > n_c or self.antenna_stride > n_t:
            raise ValueError(
                f"strides ({self.subcarrier_stride}, {self.antenna_stride}) exceed dimensions ({n_c}, {n_t})"
            )
        m = np.zeros((n_c, n_r, n_t), dtype=bool)
        if self.enabled:
            m[:: self.subcarrier_stride, :, :: self.antenna_stride] = True
        return m


NO_PILOTS = PilotPattern(enabled=False)


@dataclass(frozen=True)
class QueryTensor:
    data: np.ndarray
    stage: str = "raw"


@dataclass(frozen=True)
class IndicatorSet:
    xi_ang: np.ndarray  # (A*S, 3, R, T)
    xi_ch: np.ndarray  # (A*S, 2C, R, T)
    xi_rad: np.ndarray  # (A, S, 2C, R*T)


def build_raw_queries(h_up_rx: CsiTensor, n_a: int, n_s: int) -> QueryTensor:
    p = pack(h_up_rx)
    return QueryTensor(np.broadcast_to(p, (n_a * n_s,) + p.shape).copy(), "raw")


def observe_partial_downlink(
    h_down_true: CsiTensor,
    pattern: PilotPattern,
    esnr_db: float | None = None,
    seed: int = 0,
) -> CsiTensor:
    """Zero-padded pilot observation; observed entries optionally corrupted to ``esnr_db``."""
    mask = pattern.mask(*h_down_true.shape)
    out = np.zeros(h_down_true.shape, dtype=np.complex128)
    if mask.any():
        observed = h_down_true.data[mask]
        if esnr_db is not None and esnr_db != math.inf:
            observed = add_noise_at_esnr(observed, esnr_db, np.random.default_rng(seed))
        out[mask] = observed
    return CsiTensor(out)


def build_indicators(rays: RaySet, grid: RadiatorGrid, h_part: CsiTensor) -> IndicatorSet:
    n_c, n_r, n_t = h_part.shape
    a, s = grid.n_a, grid.n_s
    if rays.n_a != a:
        raise ValueError(f"{rays.n_a} rays but grid has {a}")
    xi_ang = np.broadcast_to(rays.directions[:, None, :, None, None], (a, s, 3, n_r, n_t))
    xi_ch = np.broadcast_to(pack(h_part), (a * s, 2 * n_c, n_r, n_t))
    xi_rad = np.broadcast_to(grid.intervals[:, :, None, None], (a, s, 2 * n_c, n_r * n_t))
    return IndicatorSet(
        xi_ang.reshape(a * s, 3, n_r, n_t).copy(),
        xi_ch.copy(),
        xi_rad.copy(),
    )


def _conv(cin, cout):
    return nn.Conv2d(cin, cout, kernel_size=3, padding=1)


class QueryDeformer(nn.Module):
    """Two-stage residual deformation of raw queries.

    With ``identity_init`` the last convolution of each stage starts at zero,
    so the untrained module returns ``Q_raw`` unchanged.
    """

    def __init__(self, n_c, n_r, n_t, n_a, n_s, angular_width=None, radial_width=None,
                 identity_init=True):
        super().__init__()
        self.dims = (n_c, n_r, n_t, n_a, n_s)
        angular_width = angular_width or 4 * n_c
        radial_width = radial_width or 2 * n_s
        self.theta_in = _conv(4 * n_c + 3, angular_width)
        self.theta_out = _conv(angular_width, 2 * n_c)
        self.phi_in = _conv(3 * n_s, radial_width)
        self.phi_out = _conv(radial_width, n_s)
        self.act = nn.GELU()
        if identity_init:
            for layer in (self.theta_out, self.phi_out):
                nn.init.zeros_(layer.weight)
                nn.init.zeros_(layer.bias)

    def stages(self, q_raw, xi_ch, xi_ang, xi_rad) -> dict[str, torch.Tensor]:
        """All intermediate tensors.

        ``q_raw``, ``xi_ch``: ``(B, A*S, 2C, R, T)``; ``xi_ang``: ``(A*S, 3, R, T)``;
        ``xi_rad``: ``(A, S, 2C, R*T)``.
        """
        n_c, n_r, n_t, n_a, n_s = self.dims
        b = q_raw.shape[0]
        expect = (b, n_a * n_s, 2 * n_c, n_r, n_t)
        if tuple(q_raw.shape) != expect or tuple(xi_ch.shape) != expect:
            raise ValueError(f"queries {tuple(q_raw.shape)} / pilots {tuple(xi_ch.shape)}, expected {expect}")
        if tuple(xi_ang.shape) != (n_a * n_s, 3, n_r, n_t) or tuple(xi_rad.shape) != (n_a, n_s, 2 * n_c, n_r * n_t):
            raise ValueError("indicator shapes do not match the deformer configuration")
        m = b * n_a * n_s
        q_flat = q_raw.reshape(m, 2 * n_c, n_r, n_t)
        ch_flat = xi_ch.reshape(m, 2 * n_c, n_r, n_t)
        ang = xi_ang.to(q_raw.dtype).expand(b, -1, -1, -1, -1).reshape(m, 3, n_r, n_t)
        cat1 = torch.cat([q_flat, ch_flat, ang], dim=1)
        q_ang = q_flat + self.theta_out(self.act(self.theta_in(cat1)))

        rad_shape = (b * n_a, n_s, 2 * n_c, n_r * n_t)
        q_ang_r = q_ang.reshape(rad_shape)
        rad = xi_rad.to(q_raw.dtype).expand(b, -1, -1, -1, -1).reshape(rad_shape)
        cat2 = torch.cat([q_ang_r, ch_flat.reshape(rad_shape), rad], dim=1)
        q_rad = q_ang_r + self.phi_out(self.act(self.phi_in(cat2)))
        q = q_rad.reshape(m, 2 * n_c, n_r, n_t)
        return {"cat_angular": cat1, "q_ang": q_ang, "cat_radial": cat2, "q_rad": q_rad, "q": q}

    def forward(self, q_raw, xi_ch, xi_ang, xi_rad):
        """Deformed queries, ``(B * A * S, 2C, R, T)``."""
        return self.stages(q_raw, xi_ch, xi_ang, xi_rad)["q"]


def deform(q_raw: QueryTensor, ind: IndicatorSet, module: QueryDeformer) -> QueryTensor:
    """Run one sample's queries through ``module`` (numpy in, numpy out)."""
    dtype = next(module.parameters()).dtype
    with torch.no_grad():
        q = module(
            torch.as_tensor(q_raw.data, dtype=dtype)[None],
            torch.as_tensor(ind.xi_ch, dtype=dtype)[None],
            torch.as_tensor(ind.xi_ang, dtype=dtype),
            torch.as_tensor(ind.xi_rad, dtype=dtype),
        )
    return QueryTensor(q.numpy(), "final")
