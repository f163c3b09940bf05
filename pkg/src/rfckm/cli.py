"""Command-line entry point: ``rfckm {gen,train,eval,render,inspect}``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 non-finite
training loss, 5 missing checkpoint.  Machine-readable output (paths,
checksums, JSON) goes to stdout and diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

EXIT_CONFIG, EXIT_IO, EXIT_NONFINITE, EXIT_CHECKPOINT = 2, 3, 4, 5

CONTRIBUTION_COLUMNS = ["ray", "radiator", "subcarrier", "rx", "tx", "re", "im", "magnitude"]
PREDICTION_COLUMNS = ["subcarrier", "rx", "tx", "re", "im", "magnitude"]


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: dict, inputs=(), outputs=()) -> Path:
    """Record the resolved config and file checksums under ``command`` in ``manifest.json``.

    Entries for other commands already in the manifest are kept.
    """
    out_dir = Path(out_dir)
    path = out_dir / "manifest.json"
    doc = {}
    if path.exists():
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError:
            doc = {}
    doc[command] = {
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str))
    os.replace(tmp, path)
    return path


def _experiment(args):
    from .config import ExperimentConfig, load_config

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _read_dataset(path):
    from . import ckmd

    if not Path(path).exists():
        raise CliError(f"dataset not found: {path}", EXIT_IO)
    try:
        return ckmd.read_dataset(path)
    except ckmd.DatasetFormatError as exc:
        raise CliError(f"{path}: {exc}", EXIT_IO) from exc


def _load_checkpoint(path, scheme: str | None = None):
    from .checkpoint import CheckpointError
    from .training import load_model

    label = f" for scheme {scheme!r}" if scheme else ""
    if not Path(path).exists():
        raise CliError(f"missing checkpoint{label}: {path}", EXIT_CHECKPOINT)
    try:
        return load_model(path)[0]
    except (CheckpointError, KeyError, TypeError) as exc:
        raise CliError(f"unreadable checkpoint{label}: {path} ({exc})", EXIT_IO) from exc


def cmd_gen(args) -> int:
    from . import ckmd
    from .scene import generate_dataset

    cfg = _experiment(args)
    if args.scene:
        if not Path(args.scene).exists():
            raise CliError(f"scene file not found: {args.scene}", EXIT_IO)
        cfg.scene = str(Path(args.scene).resolve())
    system = cfg.system_config(
        n_blocks=args.blocks, samples_per_block=args.samples, n_t=args.n_t, n_r=args.n_r, n_c_used=args.n_c,
    )
    scene = cfg.load_scene()
    ds = generate_dataset(scene, system, workers=args.threads or 1)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    digest = ckmd.write_dataset(ds, out)
    resolved = cfg.to_dict()
    resolved["system"] = system.__dict__.copy()
    inputs = [cfg.resolve(cfg.scene)] if isinstance(cfg.scene, str) else []
    write_manifest(out.parent, "gen", resolved, inputs, [out])
    print(f"records {len(ds)}")
    print(f"sha256 {digest}")
    print(out)
    return 0


def cmd_train(args) -> int:
    from .training import NonFiniteLoss, train

    cfg = _experiment(args)
    ds = _read_dataset(args.data)
    out = Path(args.out or cfg.output_dir)
    tc = cfg.train_config(
        max_epochs=args.epochs, lr=args.lr, target_nmse=args.target_nmse,
        pilots=False if args.no_pilots else None,
    )
    log = (lambda row: print(
        f"epoch {row['epoch']} train_nmse {row['train_nmse']:.6g} val_nmse {row['val_nmse']}", file=sys.stderr
    )) if args.verbose else None
    try:
        res = train(ds, tc, out, resume=args.resume, progress=log)
    except NonFiniteLoss as exc:
        raise CliError(f"{exc}; diagnostics: {exc.diagnostics}", EXIT_NONFINITE) from exc
    resolved = cfg.to_dict()
    resolved["train_resolved"] = tc.__dict__.copy()
    write_manifest(out, "train", resolved, [args.data], [out / "model.ckmp", out / "train_log.csv"])
    last = res.log[-1] if res.log else {}
    print(f"final_train_nmse {last.get('train_nmse')}")
    print(out / "model.ckmp")
    return 0


def build_sweep(cfg, split=True):
    """Sweep points from the experiment config; checkpoints are loaded here."""
    from .adm import PilotPattern
    from .beamform import PerfectCsi, PilotInterpolation, RadianceFieldScheme, SweepPoint
    from .training import split_records

    sw = cfg.sweep
    if not sw.points:
        raise CliError("sweep has no points", EXIT_CONFIG)
    pattern = PilotPattern(cfg.pilots.subcarrier_stride, cfg.pilots.antenna_stride)
    points, inputs = [], []
    for p in sw.points:
        data = cfg.resolve(p.dataset)
        ds = _read_dataset(data)
        inputs.append(data)
        records = split_records(ds)[1] if (split and sw.holdout_only) else []
        records = records or list(ds.records)
        schemes = []
        for name in sw.baselines:
            if name == "perfect-csi":
                schemes.append(PerfectCsi())
            elif name == "pilot-interp":
                schemes.append(PilotInterpolation(pattern))
            else:
                raise CliError(f"unknown baseline {name!r}", EXIT_CONFIG)
        for name, ckpt in p.checkpoints.items():
            path = cfg.resolve(ckpt)
            schemes.append(RadianceFieldScheme(_load_checkpoint(path, name), name))
            inputs.append(path)
        esnr = p.value if sw.variable == "esnr_db" else None
        points.append(SweepPoint(sw.variable, p.value, records, schemes, esnr_db=esnr))
    return points, inputs


def cmd_eval(args) -> int:
    from .beamform import run_sweep

    cfg = _experiment(args)
    points, inputs = build_sweep(cfg)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rates, margins = out / "rates.csv", out / "margins.csv"
    rep = run_sweep(points, gamma_db=cfg.sweep.gamma_db, out_csv=rates, margins_csv=margins,
                    seed=cfg.seed or 0, oversample=cfg.sweep.oversample)
    summary = out / "summary.json"
    summary.write_text(json.dumps({"rates": rep.rows, "margins": rep.margins}, indent=2))
    write_manifest(out, "eval", cfg.to_dict(), inputs, [rates, margins, summary])
    print(rates)
    print(margins)
    print(summary)
    return 0


def cmd_render(args) -> int:
    import torch

    from .adm import observe_partial_downlink
    from .rarenet import prepare_inputs
    from .renderer import RadianceOutputs, contributions, render_channel

    model = _load_checkpoint(args.checkpoint)
    ds = _read_dataset(args.data)
    if not 0 <= args.sample < len(ds):
        raise CliError(f"sample index {args.sample} out of range (dataset has {len(ds)} records)", EXIT_CONFIG)
    rec = ds.records[args.sample]
    part = observe_partial_downlink(rec.h_down, model.cfg.pattern)
    up, pt, scale = prepare_inputs(rec.h_up, part)
    with torch.no_grad():
        sigma, c_re, c_im = model.radiance(torch.as_tensor(up)[None].float(), torch.as_tensor(pt)[None].float())
    coeffs = (c_re[0].double().numpy() + 1j * c_im[0].double().numpy()) * scale
    outs = RadianceOutputs(sigma[0].double().numpy(), coeffs)
    terms = contributions(model.grid, outs)
    h = render_channel(model.grid, outs).data
    n_rays = terms.shape[0] if args.rays is None else args.rays
    if not 1 <= n_rays <= terms.shape[0]:
        raise CliError(f"--rays must lie in [1, {terms.shape[0]}]", EXIT_CONFIG)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump = out / "contributions.csv"
    with open(dump, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CONTRIBUTION_COLUMNS)
        for idx in np.ndindex(terms[:n_rays].shape):
            v = terms[idx]
            w.writerow([*idx, repr(float(v.real)), repr(float(v.imag)), repr(float(abs(v)))])
    pred = out / "prediction.csv"
    with open(pred, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(PREDICTION_COLUMNS)
        for idx in np.ndindex(h.shape):
            v = h[idx]
            w.writerow([*idx, repr(float(v.real)), repr(float(v.imag)), repr(float(abs(v)))])
    write_manifest(out, "render", {"checkpoint": str(args.checkpoint), "data": str(args.data),
                                   "sample": args.sample, "rays": n_rays},
                   [args.checkpoint, args.data], [dump, pred])
    print(dump)
    print(pred)
    return 0


def cmd_inspect(args) -> int:
    from . import ckmd

    path = Path(args.data)
    if not path.exists():
        raise CliError(f"dataset not found: {path}", EXIT_IO)
    with open(path, "rb") as f:
        head = f.read(4096)
    try:
        system, count = ckmd.read_header(head)
    except ckmd.DatasetFormatError as exc:
        raise CliError(f"{path}: {exc}", EXIT_IO) from exc
    print(json.dumps({"records": count, **system.__dict__, "sha256": _sha256(path)}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rfckm", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
    p.add_argument("--threads", type=int, default=None, help="worker/thread cap (default: all cores)")
    p.add_argument("--config", default=None, help="experiment JSON file")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a CKMD dataset from a scene")
    g.add_argument("--scene", default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--blocks", type=int, default=None)
    g.add_argument("--samples", type=int, default=None, help="samples per block")
    g.add_argument("--n-t", type=int, default=None)
    g.add_argument("--n-r", type=int, default=None)
    g.add_argument("--n-c", type=int, default=None, help="used subcarriers")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a predictor on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--target-nmse", type=float, default=None)
    t.add_argument("--no-pilots", action="store_true")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="effective-rate sweep from the config's sweep section")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="dump per-radiator contributions for one sample")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--sample", type=int, default=0)
    r.add_argument("--rays", type=int, default=None, help="dump only the first N rays")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    i = sub.add_parser("inspect", help="print a dataset header")
    i.add_argument("data")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    from .config import ConfigError

    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    import torch

    torch.set_num_threads(args.threads or os.cpu_count() or 1)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
