"""Training loop, model checkpoints and the CSV training log."""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint
from .adm import observe_partial_downlink
from .csi import ChannelDataset, Record, SystemConfig
from .rarenet import ChannelPredictor, ModelConfig, prepare_inputs

LOG_COLUMNS = ["epoch", "lr", "train_nmse", "val_nmse", "wall_seconds"]


class NonFiniteLoss(RuntimeError):
    def __init__(self, message: str, diagnostics: str | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 2
    patience: int = 10
    factor: float = 0.9
    max_epochs: int = 200
    seed: int = 0
    n_a: int = 16
    n_s: int = 8
    r_min: float = 0.5
    r_max: float = 150.0
    subcarrier_stride: int = 4
    antenna_stride: int = 2
    pilots: bool = True
    width: int | None = None
    target_nmse: float | None = None
    holdout_last_block: bool = True
    checkpoint_every: int = 50

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("learning rate, batch size, patience and epochs must be positive")
        if not 0.0 < self.factor < 1.0:
            raise ValueError("plateau factor must lie in (0, 1)")
        if self.n_a < 1 or self.n_s < 1:
            raise ValueError("n_a and n_s must be positive")

    def model_config(self, system: SystemConfig) -> ModelConfig:
        return ModelConfig(
            n_c=system.n_c_used, n_r=system.n_r, n_t=system.n_t,
            n_a=self.n_a, n_s=self.n_s, r_min=self.r_min, r_max=self.r_max, width=self.width,
            subcarrier_stride=self.subcarrier_stride, antenna_stride=self.antenna_stride,
            pilots=self.pilots,
        )


@dataclass
class TrainResult:
    model: ChannelPredictor
    log: list[dict] = field(default_factory=list)
    reached_target: bool = False


def split_records(ds: ChannelDataset, holdout_last_block: bool = True) -> tuple[list[Record], list[Record]]:
    """Hold out the last coherence block present, if there is more than one."""
    blocks = ds.blocks()
    if holdout_last_block and len(blocks) > 1:
        return ds.split_by_block([blocks[-1]])
    return list(ds.records), []


def tensorize(records: list[Record], pattern, dtype=torch.float32):
    """Normalized packed inputs and truth: ``up``, ``part`` ``(N, 2C, R, T)``; truth re/im ``(N, C, R, T)``."""
    ups, parts, re, im = [], [], [], []
    for rec in records:
        part = observe_partial_downlink(rec.h_down, pattern)
        u, p, s = prepare_inputs(rec.h_up, part)
        ups.append(u)
        parts.append(p)
        re.append(rec.h_down.data.real / s)
        im.append(rec.h_down.data.imag / s)
    as_t = lambda xs: torch.as_tensor(np.stack(xs), dtype=dtype)
    return as_t(ups), as_t(parts), as_t(re), as_t(im)


def nmse_loss(re, im, t_re, t_im):
    """Per-(sample, subcarrier) normalized squared error, averaged."""
    num = ((re - t_re) ** 2 + (im - t_im) ** 2).sum(dim=(-2, -1))
    den = (t_re ** 2 + t_im ** 2).sum(dim=(-2, -1))
    return (num / den).mean()


def evaluate_nmse(model: ChannelPredictor, tensors, batch_size: int = 16) -> float:
    up, part, t_re, t_im = tensors
    total, n = 0.0, up.shape[0]
    with torch.no_grad():
        for i in range(0, n, batch_size):
            re, im = model(up[i:i + batch_size], part[i:i + batch_size])
            k = re.shape[0]
            total += nmse_loss(re, im, t_re[i:i + batch_size], t_im[i:i + batch_size]).item() * k
    return total / n


def model_arrays(model: ChannelPredictor) -> dict[str, np.ndarray]:
    return {f"model/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()
            if k not in ("xi_ang", "xi_rad", "delta", "freqs_ghz")}


def model_meta(model: ChannelPredictor) -> dict:
    return {
        "model": dataclasses.asdict(model.cfg),
        "freqs_hz": list(model.freqs_hz),
    }


def build_model(cfg: ModelConfig, freqs_hz, seed: int) -> ChannelPredictor:
    torch.manual_seed(seed)
    return ChannelPredictor(cfg, np.asarray(freqs_hz, dtype=np.float64))


def save_model(path, model: ChannelPredictor, extra_arrays=None, extra_meta=None) -> None:
    arrays = model_arrays(model)
    arrays.update(extra_arrays or {})
    meta = model_meta(model)
    meta.update(extra_meta or {})
    checkpoint.save(path, arrays, meta)


def load_model(path) -> tuple[ChannelPredictor, dict, dict]:
    """Rebuild a predictor from a checkpoint; returns ``(model, arrays, meta)``."""
    arrays, meta = checkpoint.load(path)
    cfg = ModelConfig(**meta["model"])
    model = build_model(cfg, meta["freqs_hz"], 0)
    state = model.state_dict()
    for k in list(state):
        key = f"model/{k}"
        if key in arrays:
            state[k] = torch.as_tensor(arrays[key])
    missing = [k for k in model_arrays(model) if k not in arrays]
    if missing:
        raise checkpoint.CheckpointError(f"checkpoint lacks arrays: {missing[:3]}")
    model.load_state_dict(state)
    return model, arrays, meta


def _optimizer_arrays(model, opt) -> tuple[dict, dict]:
    arrays, steps = {}, {}
    names = {id(p): n for n, p in model.named_parameters()}
    for p in model.parameters():
        st = opt.state.get(p)
        if not st:
            continue
        n = names[id(p)]
        arrays[f"adam/exp_avg/{n}"] = st["exp_avg"].numpy()
        arrays[f"adam/exp_avg_sq/{n}"] = st["exp_avg_sq"].numpy()
        steps[n] = float(st["step"])
    return arrays, steps


def _restore_optimizer(model, opt, arrays, steps):
    for n, p in model.named_parameters():
        if n not in steps:
            continue
        opt.state[p] = {
            "step": torch.tensor(steps[n]),
            "exp_avg": torch.as_tensor(arrays[f"adam/exp_avg/{n}"]).clone(),
            "exp_avg_sq": torch.as_tensor(arrays[f"adam/exp_avg_sq/{n}"]).clone(),
        }


def _write_log(path, rows, append):
    mode = "a" if append and os.path.exists(path) else "w"
    with open(path, mode, newline="") as f:
        w = csv.DictWriter(f, LOG_COLUMNS)
        if mode == "w":
            w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in LOG_COLUMNS})


def _parse_row(r: dict) -> dict:
    row = {k: (float(v) if v not in ("", None) else None) for k, v in r.items()}
    row["epoch"] = int(row["epoch"])
    return row


def read_log(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def train(
    ds: ChannelDataset,
    cfg: TrainConfig,
    out_dir=None,
    resume: bool = False,
    progress=None,
) -> TrainResult:
    """Minimize NMSE with Adam and a plateau LR schedule on validation NMSE.

    With ``out_dir`` set, writes ``model.ckmp`` and ``train_log.csv`` there;
    ``resume`` continues from ``model.ckmp`` if present.
    """
    torch.use_deterministic_algorithms(True)
    model_cfg = cfg.model_config(ds.config)
    model = build_model(model_cfg, ds.config.subcarrier_freqs("down"), cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(opt, mode="min", factor=cfg.factor, patience=cfg.patience)

    train_recs, val_recs = split_records(ds, cfg.holdout_last_block)
    if not train_recs:
        raise ValueError("no training records")
    pattern = model_cfg.pattern
    train_t = tensorize(train_recs, pattern)
    val_t = tensorize(val_recs, pattern) if val_recs else None

    out = Path(out_dir) if out_dir is not None else None
    ckpt_path = out / "model.ckmp" if out else None
    log_path = out / "train_log.csv" if out else None
    start_epoch, history = 0, []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if resume and ckpt_path and ckpt_path.exists():
        loaded, arrays, meta = load_model(ckpt_path)
        model.load_state_dict(loaded.state_dict())
        _restore_optimizer(model, opt, arrays, meta["train_state"]["adam_steps"])
        sched.load_state_dict(meta["train_state"]["scheduler"])
        for g in opt.param_groups:
            g["lr"] = meta["train_state"]["lr"]
        start_epoch = meta["train_state"]["epoch"]
        if log_path.exists():
            history = [_parse_row(r) for r in read_log(log_path)][:start_epoch]
    if log_path:
        _write_log(log_path, history, append=False)

    def snapshot(epoch):
        if ckpt_path is None:
            return
        adam_arrays, steps = _optimizer_arrays(model, opt)
        save_model(ckpt_path, model, adam_arrays, {
            "train_state": {
                "epoch": epoch, "lr": opt.param_groups[0]["lr"], "adam_steps": steps,
                "scheduler": sched.state_dict(),
                "config": dataclasses.asdict(cfg),
            }
        })

    n = train_t[0].shape[0]
    reached = False
    t0 = time.perf_counter()
    epoch = start_epoch
    for epoch in range(start_epoch, cfg.max_epochs):
        lr = opt.param_groups[0]["lr"]
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = torch.as_tensor(order[i:i + cfg.batch_size])
            re, im = model(train_t[0][idx], train_t[1][idx])
            loss = nmse_loss(re, im, train_t[2][idx], train_t[3][idx])
            if not torch.isfinite(loss):
                diag = None
                if out is not None:
                    diag = str(out / "diagnostics.json")
                    with open(diag, "w") as f:
                        json.dump({"epoch": epoch, "batch": order[i:i + cfg.batch_size].tolist(),
                                   "lr": lr, "loss": repr(loss.item())}, f, indent=2)
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}", diag)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        train_nmse = total / n
        val_nmse = evaluate_nmse(model, val_t) if val_t is not None else None
        sched.step(val_nmse if val_nmse is not None else train_nmse)
        row = {"epoch": epoch, "lr": lr, "train_nmse": train_nmse, "val_nmse": val_nmse,
               "wall_seconds": round(time.perf_counter() - t0, 3)}
        history.append(row)
        if log_path:
            _write_log(log_path, [row], append=True)
        if progress:
            progress(row)
        if ckpt_path and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            snapshot(epoch + 1)
        if cfg.target_nmse is not None and train_nmse < cfg.target_nmse:
            reached = True
            epoch += 1
            break
    else:
        epoch = cfg.max_epochs
    snapshot(epoch)
    return TrainResult(model, history, reached)

