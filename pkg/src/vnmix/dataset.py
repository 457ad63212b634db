"""VIS-NIR-MIX dataset on disk, populated by the sensor simulator.

Layout::

    <root>/manifest.json
    <root>/scene_<id>/<role>.f32   (+ .json sidecar, + .png preview)

Every physical scene yields a day entry (mixed, vis, nir) and a night entry
(mixed, vis, vis_long, nir), seven images in total. The exact deviation map
is stored next to them as ground truth.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import sensor
from .fileio import read_raster, write_png, write_raster

DAY_ROLES = ("mixed", "vis", "nir")
NIGHT_ROLES = ("mixed", "vis", "vis_long", "nir")
PAPER_SCENES, PAPER_TEST_SCENES = 102, 14


class DatasetError(ValueError):
    pass


def roles_for(phase: str) -> tuple[str, ...]:
    return NIGHT_ROLES if phase == "night" else DAY_ROLES


def entry_id(scene: int, phase: str) -> str:
    return f"{scene:04d}-{phase}"


def n_test_scenes(n_scenes: int) -> int:
    if n_scenes >= PAPER_SCENES:
        return PAPER_TEST_SCENES
    return max(1, math.ceil(0.15 * n_scenes))


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


@dataclass
class Manifest:
    scenes: list[dict]
    split: dict[str, list[str]]
    config: dict
    config_hash: str = ""
    root: Path | None = field(default=None, compare=False)

    def entry(self, id_: str) -> dict:
        for e in self.scenes:
            if e["id"] == id_:
                return e
        raise DatasetError(f"unknown scene id {id_!r}")

    def ids(self, split: str | None = None, phase: str | None = None) -> list[str]:
        pool = set(self.split[split]) if split else None
        return [e["id"] for e in self.scenes
                if (pool is None or e["id"] in pool) and (phase is None or e["phase"] == phase)]

    def n_images(self) -> int:
        return sum(len(e["roles"]) for e in self.scenes)

    def to_dict(self) -> dict:
        return {"config": self.config, "config_hash": self.config_hash,
                "scenes": self.scenes, "split": self.split}

    def save(self, root: str | Path) -> Path:
        path = Path(root) / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        return path

    @classmethod
    def load(cls, root: str | Path) -> "Manifest":
        root = Path(root)
        path = root / "manifest.json"
        if not path.exists():
            raise DatasetError(f"no manifest.json in {root}")
        d = json.loads(path.read_text())
        return cls(d["scenes"], d["split"], d["config"], d.get("config_hash", ""), root)


def synthesize_dataset(n_scenes: int, size: tuple[int, int], seed: int, out_dir: str | Path,
                       noise: bool = True, sensor_config: sensor.SensorConfig | None = None,
                       previews: bool = True) -> Manifest:
    """Simulate ``n_scenes`` scenes, each captured by day and by night, and write them out.

    Scene ``k`` uses the seed sequence ``(seed, k)``, so results do not depend
    on how many other scenes are generated.
    """
    if n_scenes < 2:
        raise DatasetError("need at least 2 scenes to form a train/test split")
    height, width = size
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create {out}: {exc}") from exc
    base_cfg = sensor_config or sensor.SensorConfig()
    config = {"n_scenes": n_scenes, "height": height, "width": width, "seed": seed, "noise": noise,
              "sensor": base_cfg.to_dict(), "day_exposure": sensor.DAY_EXPOSURE,
              "night_exposure": sensor.NIGHT_EXPOSURE,
              "long_exposure_factor": sensor.LONG_EXPOSURE_FACTOR}
    day, night = sensor.day_schedule(), sensor.night_schedule()
    sens = sensor.default_sensitivities()
    entries = []
    for k in range(n_scenes):
        ss = np.random.SeedSequence([seed, k])
        scene_seed = int(ss.generate_state(1)[0])
        scene = sensor.random_scene(height, width, scene_seed)
        rng = np.random.default_rng(ss)
        for phase, sched, exposure in (("day", day, sensor.DAY_EXPOSURE),
                                       ("night", night, sensor.NIGHT_EXPOSURE)):
            triple = sensor.synthesize_triple(scene, sched, 0, base_cfg.with_exposure(exposure), rng,
                                              sens=sens, noise=noise)
            id_ = entry_id(k, phase)
            folder = out / f"scene_{id_}"
            folder.mkdir(exist_ok=True)
            cfg_dict = triple.meta["config"]
            roles = {}
            for role in roles_for(phase):
                data = getattr(triple, role)
                write_raster(folder / role, data, role, scene_seed, cfg_dict)
                if previews:
                    write_png(folder / f"{role}.png", data)
                roles[role] = f"scene_{id_}/{role}.f32"
            write_raster(folder / "deviation", triple.deviation, "deviation", scene_seed, cfg_dict)
            entries.append({"id": id_, "scene": k, "phase": phase, "roles": roles,
                            "truth": {"deviation": f"scene_{id_}/deviation.f32"}})
    order = np.random.default_rng(seed).permutation(n_scenes)
    test_scenes = set(order[:n_test_scenes(n_scenes)].tolist())
    split = {"train": [e["id"] for e in entries if e["scene"] not in test_scenes],
             "test": [e["id"] for e in entries if e["scene"] in test_scenes]}
    manifest = Manifest(entries, split, config, config_hash(config), out)
    manifest.save(out)
    return manifest


@dataclass
class Violation:
    kind: str
    scene: str | None
    role: str | None
    detail: str

    def __str__(self) -> str:
        where = "/".join(x for x in (self.scene, self.role) if x)
        return f"[{self.kind}] {where}: {self.detail}"


def validate_manifest(root: str | Path) -> list[Violation]:
    """Check role completeness, shapes, split disjointness and (noise-free) additivity.

    Problems are returned, never raised.
    """
    root = Path(root)
    try:
        manifest = Manifest.load(root)
    except (DatasetError, ValueError, KeyError) as exc:
        return [Violation("manifest", None, None, str(exc))]
    out: list[Violation] = []
    cfg = manifest.config
    levels = sensor.SensorConfig(**cfg["sensor"]).quant_levels if "sensor" in cfg else None
    known = set()
    for e in manifest.scenes:
        id_ = e["id"]
        known.add(id_)
        data, shapes = {}, set()
        for role in roles_for(e["phase"]):
            rel = e["roles"].get(role)
            if rel is None or not (root / rel).exists():
                out.append(Violation("missing_role", id_, role, "role file absent"))
                continue
            try:
                data[role] = read_raster(root / rel)[0]
            except (OSError, ValueError, KeyError) as exc:
                out.append(Violation("unreadable", id_, role, str(exc)))
                continue
            shapes.add(data[role].shape)
        dev_rel = e.get("truth", {}).get("deviation")
        if dev_rel and (root / dev_rel).exists():
            data["deviation"] = read_raster(root / dev_rel)[0]
            shapes.add(data["deviation"].shape)
        if len(shapes) > 1:
            out.append(Violation("dimension", id_, None, f"rasters disagree in shape: {sorted(shapes)}"))
            continue
        if cfg.get("noise") is False and levels and all(r in data for r in ("mixed", "vis", "nir", "deviation")):
            resid = np.abs(data["mixed"].astype(np.float64)
                           - np.clip(data["vis"] + data["nir"] + data["deviation"].astype(np.float64), 0, 1))
            worst = float(resid.max())
            # float32 storage adds ~1e-7 on top of the one-code rounding bound
            if worst > 1.0 / levels + 1e-6:
                out.append(Violation("additivity", id_, None,
                                     f"max |mixed - (vis + nir + deviation)| = {worst:.3g} > 1/{levels}"))
    train, test = set(manifest.split.get("train", [])), set(manifest.split.get("test", []))
    for id_ in sorted(train & test):
        out.append(Violation("split", id_, None, "id appears in both train and test"))
    scene_of = {e["id"]: e["scene"] for e in manifest.scenes}
    leaked = {scene_of[i] for i in train if i in scene_of} & {scene_of[i] for i in test if i in scene_of}
    for s in sorted(leaked):
        out.append(Violation("split", f"{s:04d}", None, "scene has entries in both train and test"))
    for id_ in sorted((train | test) - known):
        out.append(Violation("split", id_, None, "split refers to an unknown id"))
    return out


@dataclass
class Sample:
    id: str
    phase: str
    mixed: np.ndarray
    vis: np.ndarray
    nir: np.ndarray
    deviation: np.ndarray
    vis_long: np.ndarray | None = None

    @property
    def night(self) -> bool:
        return self.phase == "night"

    @property
    def target(self) -> np.ndarray:
        """Restoration ground truth: the long exposure at night, the VIS capture by day."""
        return self.vis_long if self.night else self.vis

    def arrays(self) -> dict[str, np.ndarray]:
        d = {"mixed": self.mixed, "vis": self.vis, "nir": self.nir, "deviation": self.deviation}
        if self.vis_long is not None:
            d["vis_long"] = self.vis_long
        return d

    def replace_arrays(self, arrays: dict[str, np.ndarray]) -> "Sample":
        return Sample(self.id, self.phase, arrays["mixed"], arrays["vis"], arrays["nir"],
                      arrays["deviation"], arrays.get("vis_long"))


def load_batch(manifest: Manifest | str | Path, ids: list[str], phase: str | None = None) -> list[Sample]:
    """Load samples in request order; ``phase`` optionally asserts the phase of each id."""
    if not isinstance(manifest, Manifest):
        manifest = Manifest.load(manifest)
    root = manifest.root
    samples = []
    for id_ in ids:
        e = manifest.entry(id_)
        if phase is not None and e["phase"] != phase:
            raise DatasetError(f"{id_} is a {e['phase']} entry, not {phase}")
        arr = {role: read_raster(root / rel)[0] for role, rel in e["roles"].items()}
        dev = read_raster(root / e["truth"]["deviation"])[0]
        samples.append(Sample(id_, e["phase"], arr["mixed"], arr["vis"], arr["nir"], dev,
                              arr.get("vis_long")))
    return samples
