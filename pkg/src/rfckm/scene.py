"""Deterministic image-method multipath generator for a dynamic outdoor scene.

The BS sits at a fixed position; the UE is dropped uniformly in a box.  Each
coherence block re-draws the positions of the dynamic scatterers (pedestrian
and vehicle boxes).  Paths are: line of sight (unless a scatterer box occludes
it), one specular reflection per static plane, and one single-bounce path per
scatterer via its best face center.

Both arrays are UPAs lying in the y-z plane (broadside along +x), element
index ``row * cols + col``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .csi import SPEED_OF_LIGHT, ChannelDataset, CsiTensor, Record, SystemConfig, array_shape

MATERIAL_REFLECTIVITY = {"metal": -0.95 + 0j, "dielectric": -0.4 + 0j}
PEDESTRIAN_SIZE = (0.5, 0.5, 1.8)
VEHICLE_SIZE = (2.0, 4.0, 1.6)
DEFAULT_WAVELENGTH = SPEED_OF_LIGHT / 6.765e9

_AXES = {"x": 0, "y": 1, "z": 2}


class DegenerateGeometry(ValueError):
    pass


@dataclass(frozen=True)
class UPA:
    rows: int
    cols: int
    spacing: float = 0.5  # in wavelengths at the downlink center frequency

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def element_positions(self, wavelength: float) -> np.ndarray:
        """Element offsets from the array center in meters, shape ``(size, 3)``."""
        d = self.spacing * wavelength
        row, col = np.divmod(np.arange(self.size), self.cols)
        pos = np.zeros((self.size, 3))
        pos[:, 1] = (col - (self.cols - 1) / 2.0) * d
        pos[:, 2] = (row - (self.rows - 1) / 2.0) * d
        return pos

    def steering(self, directions: np.ndarray, freq: float, spacing_wavelength: float) -> np.ndarray:
        """Steering vectors ``exp(j k p.u)``, shape ``(n_dirs, size)``."""
        pos = self.element_positions(spacing_wavelength)
        k = 2.0 * math.pi * freq / SPEED_OF_LIGHT
        return np.exp(1j * k * np.atleast_2d(directions) @ pos.T)


@dataclass(frozen=True)
class Plane:
    axis: int
    offset: float
    reflection: complex = -1.0 + 0j


@dataclass(frozen=True)
class Scatterer:
    size: tuple[float, float, float]
    material: str = "dielectric"
    reflectivity: complex | None = None
    center: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.material not in MATERIAL_REFLECTIVITY:
            raise ValueError(f"unknown material {self.material!r}")
        if self.reflectivity is None:
            object.__setattr__(self, "reflectivity", MATERIAL_REFLECTIVITY[self.material])
        if abs(self.reflectivity) > 1.0:
            raise ValueError("reflectivity magnitude must be <= 1")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=float)
        h = np.asarray(self.size, dtype=float) / 2.0
        return c - h, c + h

    def contains(self, p: np.ndarray) -> bool:
        lo, hi = self.bounds()
        return bool(np.all(p > lo) and np.all(p < hi))


@dataclass(frozen=True)
class Scene:
    bs_position: tuple[float, float, float] = (0.0, 0.0, 10.0)
    bs_array: UPA | None = None
    ue_array: UPA | None = None
    static_reflectors: tuple[Plane, ...] = ()
    dynamic_scatterers: tuple[Scatterer, ...] = ()
    drop_region: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (10.0, -50.0, 1.5),
        (110.0, 50.0, 1.5),
    )
    rng_seed: int = 0

    def with_arrays(self, config: SystemConfig) -> "Scene":
        """Fill missing arrays from ``config`` and check element counts."""
        bs = self.bs_array or UPA(*array_shape(config.n_t))
        ue = self.ue_array or UPA(*array_shape(config.n_r))
        if bs.size != config.n_t or ue.size != config.n_r:
            raise ValueError(
                f"array sizes {bs.size}x{ue.size} do not match n_t={config.n_t}, n_r={config.n_r}"
            )
        return replace(self, bs_array=bs, ue_array=ue)

    def diagonal(self) -> float:
        lo, hi = (np.asarray(v, dtype=float) for v in self.drop_region)
        pts = np.vstack([lo, hi, np.asarray(self.bs_position, dtype=float)])
        return float(np.linalg.norm(pts.max(0) - pts.min(0)))


@dataclass
class PathList:
    """Propagation paths at a reference wavelength; gains scale linearly with wavelength."""

    gains: np.ndarray
    delays: np.ndarray
    departure: np.ndarray
    arrival: np.ndarray
    kinds: list[str] = field(default_factory=list)
    wavelength: float = DEFAULT_WAVELENGTH

    def __len__(self):
        return len(self.gains)


def segment_hits_box(p0, p1, lo, hi) -> bool:
    """Slab test: does the open segment p0->p1 pass through the box interior?"""
    p0 = np.asarray(p0, dtype=float)
    d = np.asarray(p1, dtype=float) - p0
    t0, t1 = 0.0, 1.0
    for k in range(3):
        if abs(d[k]) < 1e-15:
            if p0[k] <= lo[k] or p0[k] >= hi[k]:
                return False
            continue
        a = (lo[k] - p0[k]) / d[k]
        b = (hi[k] - p0[k]) / d[k]
        if a > b:
            a, b = b, a
        t0, t1 = max(t0, a), min(t1, b)
        if t0 >= t1:
            return False
    return True


def _unit(v):
    return v / np.linalg.norm(v)


def reposition_scatterers(scene: Scene, block: int) -> Scene:
    """Draw scatterer centers uniformly in the drop region, keyed by (seed, block)."""
    lo, hi = (np.asarray(v, dtype=float) for v in scene.drop_region)
    if np.any(hi < lo):
        raise ValueError("empty drop_region")
    if not scene.dynamic_scatterers:
        return scene
    rng = np.random.default_rng(np.random.SeedSequence([scene.rng_seed, 0, block]))
    moved = []
    for s in scene.dynamic_scatterers:
        c = lo + rng.random(3) * (hi - lo)
        moved.append(replace(s, center=tuple(float(v) for v in c)))
    return replace(scene, dynamic_scatterers=tuple(moved))


def trace_paths(scene: Scene, ue_position, wavelength: float = DEFAULT_WAVELENGTH) -> PathList:
    bs = np.asarray(scene.bs_position, dtype=float)
    ue = np.asarray(ue_position, dtype=float)
    d_los = np.linalg.norm(ue - bs)
    if d_los < 1e-9:
        raise DegenerateGeometry("degenerate geometry: UE coincides with BS")
    lo, hi = (np.asarray(v, dtype=float) for v in scene.drop_region)
    if np.any(ue < lo - 1e-9) or np.any(ue > hi + 1e-9):
        raise ValueError(f"UE position {ue.tolist()} outside drop region")
    placed = [s for s in scene.dynamic_scatterers if s.center is not None]
    for s in placed:
        if s.contains(ue):
            raise ValueError("UE inside a scatterer box")

    gains, delays, dep, arr, kinds = [], [], [], [], []
    fs = wavelength / (4.0 * math.pi)

    if not any(segment_hits_box(bs, ue, *s.bounds()) for s in placed):
        gains.append(fs / d_los)
        delays.append(d_los / SPEED_OF_LIGHT)
        dep.append((ue - bs) / d_los)
        arr.append((bs - ue) / d_los)
        kinds.append("los")

    for pl in scene.static_reflectors:
        k = pl.axis
        s_bs, s_ue = bs[k] - pl.offset, ue[k] - pl.offset
        if s_bs * s_ue <= 0:
            continue
        image = bs.copy()
        image[k] = 2.0 * pl.offset - bs[k]
        length = np.linalg.norm(ue - image)
        hit = image + (ue - image) * (abs(s_bs) / (abs(s_bs) + abs(s_ue)))
        gains.append(pl.reflection * fs / length)
        delays.append(length / SPEED_OF_LIGHT)
        dep.append(_unit(hit - bs))
        arr.append(_unit(hit - ue))
        kinds.append(f"plane{k}")

    for s in placed:
        c = np.asarray(s.center, dtype=float)
        size = np.asarray(s.size, dtype=float)
        best = None
        for k in range(3):
            for sign in (-1.0, 1.0):
                face = c.copy()
                face[k] += sign * size[k] / 2.0
                d1, d2 = np.linalg.norm(face - bs), np.linalg.norm(ue - face)
                if d1 < 1e-9 or d2 < 1e-9:
                    continue
                area = float(np.prod(np.delete(size, k)))
                if best is None or d1 + d2 < best[0] + best[1]:
                    best = (d1, d2, face, area)
        if best is None:
            continue
        d1, d2, face, area = best
        # free-space amplitude per leg times the face's aperture gain sqrt(4 pi A) / lambda
        aperture = math.sqrt(4.0 * math.pi * area) / wavelength
        gains.append(s.reflectivity * (fs / d1) * (fs / d2) * aperture)
        delays.append((d1 + d2) / SPEED_OF_LIGHT)
        dep.append((face - bs) / d1)
        arr.append((face - ue) / d2)
        kinds.append(s.material)

    return PathList(
        gains=np.asarray(gains, dtype=np.complex128),
        delays=np.asarray(delays, dtype=float),
        departure=np.asarray(dep, dtype=float).reshape(-1, 3),
        arrival=np.asarray(arr, dtype=float).reshape(-1, 3),
        kinds=kinds,
        wavelength=wavelength,
    )


def synthesize_csi(
    paths: PathList,
    config: SystemConfig,
    band: str = "down",
    bs_array: UPA | None = None,
    ue_array: UPA | None = None,
) -> CsiTensor:
    """Sum of paths on the band's subcarrier grid, shape ``(n_c_used, n_r, n_t)``."""
    if len(paths) == 0:
        raise ValueError("empty path list")
    bs_array = bs_array or UPA(*array_shape(config.n_t))
    ue_array = ue_array or UPA(*array_shape(config.n_r))
    center = {"up": config.f_up_center, "down": config.f_down_center}[band]
    lam_ref = SPEED_OF_LIGHT / config.f_down_center
    freqs = config.subcarrier_freqs(band)
    a_t = bs_array.steering(paths.departure, center, lam_ref)  # (P, n_t)
    a_r = ue_array.steering(paths.arrival, center, lam_ref)  # (P, n_r)
    g = paths.gains * (SPEED_OF_LIGHT / center) / paths.wavelength
    phase = np.exp(-2j * math.pi * freqs[:, None] * paths.delays[None, :])  # (C, P)
    h = np.einsum("cp,p,pr,pt->crt", phase, g, a_r, a_t)
    return CsiTensor(h)


def _drop_ue(scene: Scene, rng: np.random.Generator) -> np.ndarray:
    lo, hi = (np.asarray(v, dtype=float) for v in scene.drop_region)
    placed = [s for s in scene.dynamic_scatterers if s.center is not None]
    bs = np.asarray(scene.bs_position, dtype=float)
    for _ in range(10_000):
        ue = lo + rng.random(3) * (hi - lo)
        if not any(s.contains(ue) for s in placed) and np.linalg.norm(ue - bs) > 1e-6:
            return ue
    raise DegenerateGeometry("could not drop a UE outside all scatterers")


def generate_record(scene: Scene, config: SystemConfig, block: int, sample: int) -> Record:
    """One (uplink, downlink) pair; ``scene`` must already be repositioned for ``block``."""
    rng = np.random.default_rng(np.random.SeedSequence([scene.rng_seed, 1, block, sample]))
    ue = _drop_ue(scene, rng)
    paths = trace_paths(scene, ue, SPEED_OF_LIGHT / config.f_down_center)
    h_up = synthesize_csi(paths, config, "up", scene.bs_array, scene.ue_array)
    h_down = synthesize_csi(paths, config, "down", scene.bs_array, scene.ue_array)
    return Record(
        block,
        ue,
        CsiTensor(h_up.data.astype(np.complex64)),
        CsiTensor(h_down.data.astype(np.complex64)),
    )


def generate_dataset(scene: Scene, config: SystemConfig, workers: int = 1) -> ChannelDataset:
    """All blocks x samples; CSI is rounded to complex64 (the on-disk precision)."""
    scene = scene.with_arrays(config)
    jobs = []
    for b in range(config.n_blocks):
        sb = reposition_scatterers(scene, b)
        jobs.extend((sb, b, s) for s in range(config.samples_per_block))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(lambda j: generate_record(j[0], config, j[1], j[2]), jobs))
    else:
        records = [generate_record(sb, config, b, s) for sb, b, s in jobs]
    return ChannelDataset(config, records)


def _complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v)


def scene_from_dict(doc: dict) -> Scene:
    """Build a :class:`Scene` from its JSON description (unknown keys rejected)."""
    allowed = {
        "bs_position", "bs_array", "ue_array", "static_reflectors", "dynamic_scatterers",
        "pedestrians", "vehicles", "drop_region", "rng_seed",
    }
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown scene keys: {sorted(unknown)}")

    def upa(d):
        return None if d is None else UPA(int(d["rows"]), int(d["cols"]), float(d.get("spacing", 0.5)))

    planes = []
    for p in doc.get("static_reflectors", []):
        axis = p["axis"]
        axis = _AXES[axis] if isinstance(axis, str) else int(axis)
        planes.append(Plane(axis, float(p["offset"]), _complex(p.get("reflection", -1.0))))
    scatterers = []
    for s in doc.get("dynamic_scatterers", []):
        refl = s.get("reflectivity")
        scatterers.append(
            Scatterer(
                tuple(float(v) for v in s["size"]),
                s.get("material", "dielectric"),
                None if refl is None else _complex(refl),
                None if s.get("center") is None else tuple(float(v) for v in s["center"]),
            )
        )
    scatterers += [Scatterer(PEDESTRIAN_SIZE, "dielectric")] * int(doc.get("pedestrians", 0))
    scatterers += [Scatterer(VEHICLE_SIZE, "metal")] * int(doc.get("vehicles", 0))
    kwargs = {}
    if "drop_region" in doc:
        dr = doc["drop_region"]
        kwargs["drop_region"] = (tuple(map(float, dr["min"])), tuple(map(float, dr["max"])))
    if "bs_position" in doc:
        kwargs["bs_position"] = tuple(float(v) for v in doc["bs_position"])
    return Scene(
        bs_array=upa(doc.get("bs_array")),
        ue_array=upa(doc.get("ue_array")),
        static_reflectors=tuple(planes),
        dynamic_scatterers=tuple(scatterers),
        rng_seed=int(doc.get("rng_seed", 0)),
        **kwargs,
    )


def load_scene(path) -> Scene:
    with open(path) as f:
        return scene_from_dict(json.load(f))


def default_scene(seed: int = 0, pedestrians: int = 12, vehicles: int = 6) -> Scene:
    """BS at 10 m height beside a 100 x 100 m drop region bounded by walls."""
    return Scene(
        bs_position=(0.0, 0.0, 10.0),
        static_reflectors=(
            Plane(2, 0.0, -0.6 + 0j),
            Plane(1, 60.0, -0.5 + 0j),
            Plane(1, -60.0, -0.5 + 0j),
            Plane(0, 125.0, -0.5 + 0j),
        ),
        dynamic_scatterers=tuple(
            [Scatterer(PEDESTRIAN_SIZE, "dielectric")] * pedestrians
            + [Scatterer(VEHICLE_SIZE, "metal")] * vehicles
        ),
        drop_region=((10.0, -50.0, 1.5), (110.0, 50.0, 1.5)),
        rng_seed=seed,
    )


def upa_for(n: int, rows: int | None = None, spacing: float = 0.5) -> UPA:
    return UPA(*array_shape(n, rows), spacing)

