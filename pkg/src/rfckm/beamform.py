"""Codebook beamforming and effective-rate evaluation of CSI predictors."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .adm import PilotPattern, observe_partial_downlink
from .csi import CsiTensor, Record, array_shape, corrupt_to_esnr

RATE_COLUMNS = ["scheme", "sweep_variable", "sweep_value", "gamma_db", "rho",
                "mean_rate", "std_rate", "n_samples"]
MARGIN_COLUMNS = ["sweep_variable", "sweep_value", "scheme_a", "scheme_b",
                  "mean_diff", "stderr_diff", "n_samples"]


@dataclass(frozen=True)
class Codebook:
    codewords: np.ndarray  # (K, N), unit-norm rows
    rows: int
    cols: int

    def __len__(self):
        return self.codewords.shape[0]

    @property
    def n(self) -> int:
        return self.codewords.shape[1]


def _dft_vectors(n: int, oversample: int = 1) -> np.ndarray:
    k = n * oversample
    idx = np.arange(n)
    return np.exp(2j * np.pi * np.outer(np.arange(k), idx) / k) / math.sqrt(n)


def dft_codebook(rows: int, cols: int, oversample: int = 1) -> Codebook:
    """Kronecker products of 1-D DFT vectors; element index is ``row * cols + col``."""
    if rows < 1 or cols < 1 or oversample < 1:
        raise ValueError("codebook dimensions must be positive")
    a, b = _dft_vectors(rows, oversample), _dft_vectors(cols, oversample)
    words = np.einsum("in,jm->ijnm", a, b).reshape(a.shape[0] * b.shape[0], rows * cols)
    return Codebook(words, rows, cols)


def codebook_for(n: int, rows: int | None = None, oversample: int = 1) -> Codebook:
    return dft_codebook(*array_shape(n, rows), oversample=oversample)


def beam_gains(h, F: Codebook, W: Codebook) -> np.ndarray:
    """``(1/N_c) sum_f |w^H H(f) f|^2`` for every pair, shape ``(len(F), len(W))``."""
    h = h.data if isinstance(h, CsiTensor) else np.asarray(h)
    if h.shape[1] != W.n or h.shape[2] != F.n:
        raise ValueError(f"codeword lengths ({W.n}, {F.n}) do not match channel {h.shape}")
    y = np.einsum("wr,crt,ft->cfw", W.codewords.conj(), h, F.codewords)
    return np.mean(np.abs(y) ** 2, axis=0)


def select_beams(h_pred, F: Codebook, W: Codebook) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Exhaustive search; ties go to the lowest (f-index, w-index).

    Returns ``(w, f, w_index, f_index)``.
    """
    g = beam_gains(h_pred, F, W)
    fi, wi = np.unravel_index(int(np.argmax(g)), g.shape)
    return W.codewords[wi], F.codewords[fi], int(wi), int(fi)


def effective_rate(h_true, w, f, gamma: float, rho: float) -> float:
    """``(1 - rho)/N_c sum_f log2(1 + gamma |w^H H(f) f|^2)`` in bits/s/Hz."""
    if gamma < 0 or not 0.0 <= rho <= 1.0:
        raise ValueError("need gamma >= 0 and rho in [0, 1]")
    h = h_true.data if isinstance(h_true, CsiTensor) else np.asarray(h_true)
    g = np.abs(np.einsum("r,crt,t->c", np.conj(w), h, f)) ** 2
    return float((1.0 - rho) * np.mean(np.log2(1.0 + gamma * g)))


def pilot_interpolate(h_part: CsiTensor, pattern: PilotPattern) -> CsiTensor:
    """Linear interpolation over subcarriers, nearest pilot antenna over tx antennas."""
    n_c, n_r, n_t = h_part.shape
    mask = pattern.mask(n_c, n_r, n_t)
    if not mask.any():
        return CsiTensor(np.zeros(h_part.shape, dtype=np.complex128))
    cs = np.flatnonzero(mask[:, 0, :].any(axis=1))
    ts = np.flatnonzero(mask[:, 0, :].any(axis=0))
    grid = np.arange(n_c)
    freq_filled = np.zeros((n_c, n_r, len(ts)), dtype=np.complex128)
    for r in range(n_r):
        for j, t in enumerate(ts):
            v = h_part.data[cs, r, t]
            freq_filled[:, r, j] = np.interp(grid, cs, v.real) + 1j * np.interp(grid, cs, v.imag)
    nearest = np.abs(np.arange(n_t)[:, None] - ts[None, :]).argmin(axis=1)
    return CsiTensor(freq_filled[:, :, nearest])


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


class Scheme(Protocol):
    name: str
    rho: float

    def predict(self, records: Sequence[Record], esnr_db: float | None, seed: int) -> list[CsiTensor]:
        ...


@dataclass
class PerfectCsi:
    name: str = "perfect-csi"
    rho: float = 0.0

    def predict(self, records, esnr_db=None, seed=0):
        return [r.h_down for r in records]


@dataclass
class PilotInterpolation:
    pattern: PilotPattern = field(default_factory=PilotPattern)
    name: str = "pilot-interp"

    @property
    def rho(self) -> float:
        return self.pattern.rho

    def predict(self, records, esnr_db=None, seed=0):
        out = []
        for i, r in enumerate(records):
            part = observe_partial_downlink(r.h_down, self.pattern, esnr_db, _seed(seed, i, 1))
            out.append(pilot_interpolate(part, self.pattern))
        return out


@dataclass
class RadianceFieldScheme:
    """A trained predictor; inputs are corrupted to ``esnr_db`` when given."""

    model: object
    name: str = "ckm"

    @property
    def rho(self) -> float:
        return self.model.cfg.pattern.rho

    def predict(self, records, esnr_db=None, seed=0):
        from .rarenet import predict_batch

        ups, parts = [], []
        pattern = self.model.cfg.pattern
        for i, r in enumerate(records):
            ups.append(corrupt_to_esnr(r.h_up, esnr_db, _seed(seed, i, 0)))
            parts.append(observe_partial_downlink(r.h_down, pattern, esnr_db, _seed(seed, i, 1)))
        return predict_batch(self.model, ups, parts)


@dataclass
class SweepPoint:
    variable: str
    value: float
    records: Sequence[Record]
    schemes: Sequence[Scheme]
    esnr_db: float | None = None
    bs_rows: int | None = None
    ue_rows: int | None = None


@dataclass
class RateReport:
    rows: list[dict] = field(default_factory=list)
    samples: dict = field(default_factory=dict)  # (scheme, value) -> per-sample rates
    margins: list[dict] = field(default_factory=list)

    def mean(self, scheme: str, value) -> float:
        return float(np.mean(self.samples[(scheme, value)]))

    def row(self, scheme: str, value) -> dict:
        for r in self.rows:
            if r["scheme"] == scheme and r["sweep_value"] == value:
                return r
        raise KeyError((scheme, value))


def reference_gain(records: Sequence[Record]) -> float:
    """Mean per-entry downlink power; channels are divided by its square root."""
    return float(np.mean([np.mean(np.abs(r.h_down.data) ** 2) for r in records]))


def scheme_rates(scheme: Scheme, records, F, W, gamma, esnr_db=None, seed=0, scale=1.0) -> np.ndarray:
    preds = scheme.predict(records, esnr_db, seed)
    rates = []
    for rec, pred in zip(records, preds):
        w, f, _, _ = select_beams(pred, F, W)
        rates.append(effective_rate(rec.h_down.data / scale, w, f, gamma, scheme.rho))
    return np.asarray(rates)


def paired_margin(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    d = np.asarray(a) - np.asarray(b)
    se = float(np.std(d, ddof=1) / math.sqrt(len(d))) if len(d) > 1 else 0.0
    return float(np.mean(d)), se


def run_sweep(
    points: Sequence[SweepPoint],
    gamma_db: float = 10.0,
    out_csv=None,
    margins_csv=None,
    seed: int = 0,
    normalize: bool = True,
    oversample: int = 1,
) -> RateReport:
    """Score every scheme at every sweep point on its records.

    Beams are chosen on each scheme's prediction and scored on the true
    downlink CSI.  With ``normalize`` the channels of a point are divided by
    the root of their mean per-entry power, so ``gamma`` is the average
    per-antenna-pair receive SNR.
    """
    gamma = 10.0 ** (gamma_db / 10.0)
    report = RateReport()
    for pt in points:
        if not pt.records:
            raise ValueError(f"sweep point {pt.variable}={pt.value} has no records")
        _, n_r, n_t = pt.records[0].h_down.shape
        F = codebook_for(n_t, pt.bs_rows, oversample)
        W = codebook_for(n_r, pt.ue_rows, oversample)
        scale = math.sqrt(reference_gain(pt.records)) if normalize else 1.0
        for sch in pt.schemes:
            rates = scheme_rates(sch, pt.records, F, W, gamma, pt.esnr_db, seed, scale)
            report.samples[(sch.name, pt.value)] = rates
            report.rows.append({
                "scheme": sch.name, "sweep_variable": pt.variable, "sweep_value": pt.value,
                "gamma_db": gamma_db, "rho": sch.rho, "mean_rate": float(np.mean(rates)),
                "std_rate": float(np.std(rates, ddof=1)) if len(rates) > 1 else 0.0,
                "n_samples": len(rates),
            })
        names = [s.name for s in pt.schemes]
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                m, se = paired_margin(report.samples[(a, pt.value)], report.samples[(b, pt.value)])
                report.margins.append({
                    "sweep_variable": pt.variable, "sweep_value": pt.value, "scheme_a": a,
                    "scheme_b": b, "mean_diff": m, "stderr_diff": se, "n_samples": len(pt.records),
                })
    if out_csv is not None:
        _write_csv(out_csv, RATE_COLUMNS, report.rows)
    if margins_csv is not None:
        _write_csv(margins_csv, MARGIN_COLUMNS, report.margins)
    return report


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
