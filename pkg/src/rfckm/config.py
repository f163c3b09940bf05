"""JSON experiment configuration shared by every CLI command.

Every section is optional; unknown keys are rejected at every level so a
typo never silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .csi import SystemConfig
from .scene import Scene, default_scene, load_scene, scene_from_dict
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _reject_unknown(doc: dict, allowed, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


@dataclass
class SamplerSettings:
    n_a: int = 16
    n_s: int = 8
    r_min: float = 0.5
    r_max: float | None = None  # None: scene diagonal, or 150 m without a scene


@dataclass
class PilotSettings:
    subcarrier_stride: int = 4
    antenna_stride: int = 2
    enabled: bool = True


@dataclass
class SweepPointSettings:
    value: float
    dataset: str
    checkpoints: dict[str, str] = field(default_factory=dict)


@dataclass
class SweepSettings:
    """``variable`` is ``"esnr_db"`` (value is the input ESNR) or an antenna count label."""

    variable: str = "esnr_db"
    gamma_db: float = 10.0
    oversample: int = 1
    baselines: list[str] = field(default_factory=lambda: ["perfect-csi", "pilot-interp"])
    holdout_only: bool = True
    points: list[SweepPointSettings] = field(default_factory=list)


TRAIN_KEYS = _field_names(TrainConfig) - {
    "seed", "n_a", "n_s", "r_min", "r_max", "subcarrier_stride", "antenna_stride", "pilots",
}


@dataclass
class ExperimentConfig:
    scene: str | dict | None = None
    system: dict = field(default_factory=dict)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    train: dict = field(default_factory=dict)
    pilots: PilotSettings = field(default_factory=PilotSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    output_dir: str = "out"
    seed: int | None = None  # None keeps the scene file's own rng_seed
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def resolve(self, path: str | Path) -> Path:
        """Relative paths inside a config file are relative to that file."""
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def system_config(self, **overrides) -> SystemConfig:
        values = {**self.system, **{k: v for k, v in overrides.items() if v is not None}}
        try:
            return SystemConfig(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def load_scene(self) -> Scene:
        if self.scene is None:
            scene = default_scene()
        elif isinstance(self.scene, dict):
            scene = scene_from_dict(self.scene)
        else:
            scene = load_scene(self.resolve(self.scene))
        return scene if self.seed is None else dataclasses.replace(scene, rng_seed=self.seed)

    def radial_range(self) -> tuple[float, float]:
        r_max = self.sampler.r_max
        if r_max is None:
            r_max = self.load_scene().diagonal() if self.scene is not None else 150.0
        return self.sampler.r_min, float(r_max)

    def train_config(self, **overrides) -> TrainConfig:
        r_min, r_max = self.radial_range()
        values = dict(
            seed=self.seed or 0, n_a=self.sampler.n_a, n_s=self.sampler.n_s, r_min=r_min, r_max=r_max,
            subcarrier_stride=self.pilots.subcarrier_stride, antenna_stride=self.pilots.antenna_stride,
            pilots=self.pilots.enabled,
        )
        values.update(self.train)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return TrainConfig(**values)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d


def config_from_dict(doc: dict, base_dir: Path | str = ".") -> ExperimentConfig:
    top = _field_names(ExperimentConfig) - {"base_dir"}
    _reject_unknown(doc, top, "config")
    sys_doc = doc.get("system", {})
    _reject_unknown(sys_doc, _field_names(SystemConfig), "system")
    train_doc = doc.get("train", {})
    _reject_unknown(train_doc, TRAIN_KEYS, "train")
    sampler_doc = doc.get("sampler", {})
    _reject_unknown(sampler_doc, _field_names(SamplerSettings), "sampler")
    pilots_doc = doc.get("pilots", {})
    _reject_unknown(pilots_doc, _field_names(PilotSettings), "pilots")
    sweep_doc = dict(doc.get("sweep", {}))
    _reject_unknown(sweep_doc, _field_names(SweepSettings), "sweep")
    points = []
    for i, p in enumerate(sweep_doc.pop("points", [])):
        _reject_unknown(p, _field_names(SweepPointSettings), f"sweep.points[{i}]")
        if "value" not in p or "dataset" not in p:
            raise ConfigError(f"sweep.points[{i}] needs 'value' and 'dataset'")
        value = p["value"]
        value = math.inf if value in ("inf", "+inf") else float(value)
        points.append(SweepPointSettings(value, str(p["dataset"]), dict(p.get("checkpoints", {}))))
    scene = doc.get("scene")
    if scene is not None and not isinstance(scene, (str, dict)):
        raise ConfigError("scene must be a file path or an inline object")
    try:
        cfg = ExperimentConfig(
            scene=scene,
            system=dict(sys_doc),
            sampler=SamplerSettings(**sampler_doc),
            train=dict(train_doc),
            pilots=PilotSettings(**pilots_doc),
            sweep=SweepSettings(**sweep_doc, points=points),
            output_dir=str(doc.get("output_dir", "out")),
            seed=None if doc.get("seed") is None else int(doc["seed"]),
            base_dir=Path(base_dir),
        )
        cfg.system_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc, path.parent)
