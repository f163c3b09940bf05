"""Radiator representation network and the end-to-end downlink predictor.

Feature maps are ``(M, channels, n_r, n_t)`` with one row per radiator, so
every layer acts on radiators independently.  The frequency-slot axis is the
convolution channel axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .adm import NO_PILOTS, PilotPattern, QueryDeformer
from .csi import CsiTensor, pack
from .renderer import render_torch
from .sampler import RadiatorGrid, make_grid


def group_count(channels: int) -> int:
    return math.gcd(8, channels)


def conv3(cin, cout):
    return nn.Conv2d(cin, cout, kernel_size=3, padding=1)


class ConvBlock(nn.Module):
    """Conv 3x3 -> GroupNorm -> GELU; used for the channel up-sampling step."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv = conv3(cin, cout)
        self.norm = nn.GroupNorm(group_count(cout), cout)
        self.act = nn.GELU()

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class ResidualBlock(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = conv3(cin, cout)
        self.norm = nn.GroupNorm(group_count(cout), cout)
        self.conv2 = conv3(cout, cout)
        self.act = nn.GELU()
        self.skip = nn.Identity() if cin == cout else nn.Conv2d(cin, cout, kernel_size=1)

    def forward(self, x):
        y = self.conv2(self.act(self.norm(self.conv1(x))))
        return self.act(y + self.skip(x))


class FrequencyAttention(nn.Module):
    """Affine modulation ``(1 + w) * x + b`` with ``(w, b)`` computed from
    spatially pooled features and the subcarrier frequencies (GHz).

    The head starts at zero, so a fresh layer is the identity.
    """

    def __init__(self, channels: int, n_c: int, hidden: int | None = None):
        super().__init__()
        if channels % n_c:
            raise ValueError(f"{channels} channels are not aligned with {n_c} subcarriers")
        hidden = hidden or channels
        self.channels, self.n_c = channels, n_c
        layers = []
        width = 2 * channels
        for _ in range(3):
            layers += [nn.Linear(width, hidden), nn.GroupNorm(group_count(hidden), hidden), nn.GELU()]
            width = hidden
        self.mlp = nn.Sequential(*layers)
        self.head = nn.Linear(hidden, 2 * channels)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x, freqs_ghz):
        if freqs_ghz.shape[-1] != self.n_c:
            raise ValueError(f"expected {self.n_c} subcarrier frequencies, got {freqs_ghz.shape[-1]}")
        m = x.shape[0]
        pooled = x.mean(dim=(2, 3))
        freq = freqs_ghz.to(x.dtype).repeat(self.channels // self.n_c).expand(m, -1)
        h = self.head(self.mlp(torch.cat([pooled, freq], dim=1)))
        w, b = h[:, : self.channels], h[:, self.channels:]
        return (1.0 + w)[:, :, None, None] * x + b[:, :, None, None]


class RadiatorNet(nn.Module):
    """EMP branch predicts sigma, AC branch predicts the packed aggregating coefficients."""

    def __init__(self, n_c: int, width: int | None = None, sigma_bias: float = -4.0, coeff_gain: float = 0.1):
        super().__init__()
        width = width or 4 * n_c
        half = width // 2
        self.n_c = n_c
        self.up = ConvBlock(2 * n_c, width)
        self.emp_blocks = nn.ModuleList(ResidualBlock(width, width) for _ in range(3))
        self.emp_attn = nn.ModuleList(FrequencyAttention(width, n_c) for _ in range(3))
        self.sigma_head = conv3(width, n_c)
        self.ac_down = ResidualBlock(width + 3, half)
        self.ac_down_attn = FrequencyAttention(half, n_c)
        self.ac_up = ResidualBlock(half, width)
        self.ac_up_attn = FrequencyAttention(width, n_c)
        self.coeff_head = conv3(width, 2 * n_c)
        nn.init.constant_(self.sigma_head.bias, sigma_bias)
        with torch.no_grad():
            self.coeff_head.weight.mul_(coeff_gain)
            self.coeff_head.bias.mul_(coeff_gain)

    def forward(self, q, xi_ang, freqs_ghz):
        """``q``: ``(M, 2C, R, T)``, ``xi_ang``: ``(M, 3, R, T)``.

        Returns ``sigma`` ``(M, C, R, T)`` (softplus, nonnegative) and packed
        coefficients ``(M, 2C, R, T)``.
        """
        if q.shape[1] != 2 * self.n_c or xi_ang.shape != (q.shape[0], 3) + tuple(q.shape[2:]):
            raise ValueError(f"query {tuple(q.shape)} / direction {tuple(xi_ang.shape)} mismatch")
        x = self.up(q)
        for block, attn in zip(self.emp_blocks, self.emp_attn):
            x = attn(block(x), freqs_ghz)
        sigma = F.softplus(self.sigma_head(x))
        y = torch.cat([x, xi_ang.to(x.dtype)], dim=1)
        y = self.ac_down_attn(self.ac_down(y), freqs_ghz)
        y = self.ac_up_attn(self.ac_up(y), freqs_ghz)
        return sigma, self.coeff_head(y)


@dataclass(frozen=True)
class ModelConfig:
    n_c: int
    n_r: int
    n_t: int
    n_a: int = 16
    n_s: int = 8
    r_min: float = 0.5
    r_max: float = 150.0
    width: int | None = None
    sigma_bias: float = -4.0
    coeff_gain: float = 0.1
    subcarrier_stride: int = 4
    antenna_stride: int = 2
    pilots: bool = True

    @property
    def pattern(self) -> PilotPattern:
        if not self.pilots:
            return NO_PILOTS
        return PilotPattern(self.subcarrier_stride, self.antenna_stride)


class ChannelPredictor(nn.Module):
    """Raw queries -> deformation -> radiator network -> rendering.

    Works on packed, per-sample normalized CSI: ``h_up`` and ``h_part`` are
    ``(B, 2C, R, T)`` and the result is ``(re, im)`` each ``(B, C, R, T)``.
    """

    def __init__(self, cfg: ModelConfig, freqs_hz: np.ndarray, grid: RadiatorGrid | None = None):
        super().__init__()
        self.cfg = cfg
        grid = grid or make_grid(cfg.n_a, cfg.n_s, cfg.r_min, cfg.r_max)
        if (grid.n_a, grid.n_s) != (cfg.n_a, cfg.n_s):
            raise ValueError("grid does not match model config")
        if len(freqs_hz) != cfg.n_c:
            raise ValueError(f"{len(freqs_hz)} frequencies for {cfg.n_c} subcarriers")
        self.grid = grid
        self.freqs_hz = [float(f) for f in freqs_hz]
        a, s, c, r, t = cfg.n_a, cfg.n_s, cfg.n_c, cfg.n_r, cfg.n_t
        dirs = torch.as_tensor(grid.rays.directions, dtype=torch.float64)
        xi_ang = dirs[:, None, :, None, None].expand(a, s, 3, r, t).reshape(a * s, 3, r, t)
        xi_rad = torch.as_tensor(grid.intervals, dtype=torch.float64)[:, :, None, None].expand(a, s, 2 * c, r * t)
        self.register_buffer("xi_ang", xi_ang.contiguous().float())
        self.register_buffer("xi_rad", xi_rad.contiguous().float())
        self.register_buffer("delta", torch.as_tensor(grid.intervals, dtype=torch.float32))
        self.register_buffer("freqs_ghz", torch.as_tensor(np.asarray(freqs_hz) / 1e9, dtype=torch.float32))
        self.deformer = QueryDeformer(c, r, t, a, s)
        self.net = RadiatorNet(c, cfg.width, cfg.sigma_bias, cfg.coeff_gain)

    def radiance(self, h_up, h_part):
        """Per-radiator ``sigma``, ``c_re``, ``c_im``, each ``(B, A, S, C, R, T)``."""
        a, s, c, r, t = self.cfg.n_a, self.cfg.n_s, self.cfg.n_c, self.cfg.n_r, self.cfg.n_t
        b = h_up.shape[0]
        if tuple(h_up.shape[1:]) != (2 * c, r, t) or h_part.shape != h_up.shape:
            raise ValueError(f"inputs {tuple(h_up.shape)}/{tuple(h_part.shape)} do not match {(2 * c, r, t)}")
        q_raw = h_up[:, None].expand(b, a * s, 2 * c, r, t)
        xi_ch = h_part[:, None].expand(b, a * s, 2 * c, r, t)
        q = self.deformer(q_raw, xi_ch, self.xi_ang, self.xi_rad)
        ang = self.xi_ang.to(q.dtype).expand(b, -1, -1, -1, -1).reshape(b * a * s, 3, r, t)
        sigma, coeff = self.net(q, ang, self.freqs_ghz)
        shape = (b, a, s, c, r, t)
        return sigma.reshape(shape), coeff[:, :c].reshape(shape), coeff[:, c:].reshape(shape)

    def forward(self, h_up, h_part):
        sigma, c_re, c_im = self.radiance(h_up, h_part)
        return render_torch(sigma, c_re, c_im, self.delta)


def csi_scale(h: CsiTensor | np.ndarray) -> float:
    """RMS entry magnitude, used to normalize network inputs per sample."""
    x = h.data if isinstance(h, CsiTensor) else np.asarray(h)
    s = float(np.sqrt(np.mean(np.abs(x) ** 2)))
    return s if s > 0 else 1.0


def prepare_inputs(h_up: CsiTensor, h_part: CsiTensor) -> tuple[np.ndarray, np.ndarray, float]:
    s = csi_scale(h_up)
    return pack(h_up) / s, pack(h_part) / s, s


def predict_downlink(
    model: ChannelPredictor,
    h_up: CsiTensor,
    h_part: CsiTensor,
) -> CsiTensor:
    """Downlink CSI prediction for one sample, in the input's physical scale."""
    up, part, s = prepare_inputs(h_up, h_part)
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        re, im = model(torch.as_tensor(up, dtype=dtype)[None], torch.as_tensor(part, dtype=dtype)[None])
    h = (re[0].double().numpy() + 1j * im[0].double().numpy()) * s
    return CsiTensor(h)


def predict_batch(model: ChannelPredictor, ups, parts, batch_size: int = 8) -> list[CsiTensor]:
    out = []
    dtype = next(model.parameters()).dtype
    for i in range(0, len(ups), batch_size):
        prepped = [prepare_inputs(u, p) for u, p in zip(ups[i:i + batch_size], parts[i:i + batch_size])]
        up = torch.as_tensor(np.stack([p[0] for p in prepped]), dtype=dtype)
        part = torch.as_tensor(np.stack([p[1] for p in prepped]), dtype=dtype)
        with torch.no_grad():
            re, im = model(up, part)
        for k, p in enumerate(prepped):
            out.append(CsiTensor((re[k].double().numpy() + 1j * im[k].double().numpy()) * p[2]))
    return out

