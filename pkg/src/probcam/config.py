"""Experiment configuration: schema, presets, validation and scenario build.

A config is one JSON document with three sections mirrored by dataclasses:

    {"preset": "desk-outlier",          # optional: fills defaults first
     "scenario": {...},                 # scene / rig / outliers / matches
     "train": {...},                    # TrainConfig fields
     "eval": {...}}                     # metric sampling

Loading is strict: unknown keys anywhere raise ConfigError naming the full
key path, so typos never silently fall back to defaults.  ``build_scenario``
turns a validated config into the concrete artifacts (scene, rig, matches,
ground-truth images) deterministically -- same config, same bytes.

Presets:
    desk-outlier    -- the default: 12 cameras, 3 injected outliers,
                       64x64 images, 4000 iterations (minutes on one core).
    paper-defaults  -- the large-scale schedule (150k iterations, 512-ray
                       batches, 128x128 images); hours, not minutes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import scene as scenelib
from .errors import ConfigError, FileFormatError
from .geometry import Intrinsics
from .renderer import RenderParams
from .trainer import TrainConfig, perturb_scene
from .testkit import rng_stream

CONFIG_VERSION = 1

DEFAULT_SPHERES = (
    {"center": [0.25, 0.1, 0.0], "radius": 0.45, "learnable": True},
    {"center": [-0.3, -0.15, 0.12], "radius": 0.3, "learnable": True},
)


@dataclass
class ScenarioConfig:
    n_cameras: int = 12
    rig_radius: float = 3.0
    rig_seed: int = 1
    image_size: int = 64
    focal: float = 64.0

    outlier_fraction: float = 0.25
    outlier_rot_deg: tuple = (20.0, 30.0)
    outlier_trans: tuple = (0.2, 0.4)
    inlier_rot_deg: float = 3.0
    inlier_trans: float = 0.05
    outlier_seed: int = 11

    n_surface_points: int = 600
    match_threshold_px: float = 6.0
    match_seed: int = 21

    spheres: tuple = DEFAULT_SPHERES
    color_seed: int = 1
    scene_init: str = "true"      # "true" | "perturbed"
    scene_init_sigma: float = 0.03
    scene_init_radius_frac: float = 0.05
    scene_init_seed: int = 7
    gt_oversample: int = 2

    def __post_init__(self):
        if not (0.0 <= self.outlier_fraction <= 1.0):
            raise ConfigError("scenario.outlier_fraction", "must lie in [0, 1]")
        if self.n_cameras < 2:
            raise ConfigError("scenario.n_cameras", "need at least two cameras")
        if self.image_size < 8:
            raise ConfigError("scenario.image_size", "must be at least 8 pixels")
        if self.focal <= 0.0:
            raise ConfigError("scenario.focal", "must be positive")
        for name in ("outlier_rot_deg", "outlier_trans"):
            lo, hi = getattr(self, name)
            if not (0.0 <= lo <= hi):
                raise ConfigError(f"scenario.{name}", "range must be 0 <= lo <= hi")
        if self.scene_init not in ("true", "perturbed"):
            raise ConfigError("scenario.scene_init", "must be 'true' or 'perturbed'")
        if not self.spheres:
            raise ConfigError("scenario.spheres", "need at least one sphere")

    def intrinsics(self) -> Intrinsics:
        size = self.image_size
        return Intrinsics(fx=self.focal, fy=self.focal,
                          cx=size / 2.0, cy=size / 2.0, width=size, height=size)


@dataclass
class EvalConfig:
    n_points: int = 2000
    seed: int = 0
    tau: float = 0.64

    def __post_init__(self):
        if self.n_points < 1:
            raise ConfigError("eval.n_points", "must be positive")
        if self.tau <= 0.0:
            raise ConfigError("eval.tau", "must be positive")


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


PRESETS = {
    "desk-outlier": {},
    "paper-defaults": {
        "scenario": {"image_size": 128, "focal": 128.0, "n_surface_points": 2000},
        "train": {
            "total_iters": 150_000, "warmup_iters": 10_000, "ramp_iters": 20_000,
            "batch_rays": 512, "n_match": 16, "vda_resolution": 64,
        },
        "eval": {"n_points": 10_000},
    },
}


# ---------------------------------------------------------------------------
# Strict dict <-> dataclass plumbing
# ---------------------------------------------------------------------------

def _fields_of(cls) -> dict:
    return {f.name: f for f in dataclasses.fields(cls)}


def _coerce(value, sample, path: str):
    """JSON natives -> the types the dataclasses carry (tuples from lists)."""
    if isinstance(sample, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected boolean, got {type(value).__name__}")
        return value
    if isinstance(sample, int) and not isinstance(sample, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(path, f"expected integer, got {value!r}")
        return int(value)
    if isinstance(sample, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected number, got {value!r}")
        return float(value)
    if isinstance(sample, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected string, got {type(value).__name__}")
        return value
    if isinstance(sample, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected list, got {type(value).__name__}")
        return tuple(value)
    return value


def _section_from_dict(cls, doc: dict, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(path, f"expected an object, got {type(doc).__name__}")
    fields = _fields_of(cls)
    defaults = cls()
    kwargs = {}
    for key, value in doc.items():
        if key not in fields:
            raise ConfigError(f"{path}.{key}", "unknown key")
        kwargs[key] = _coerce(value, getattr(defaults, key), f"{path}.{key}")
    merged = {name: getattr(defaults, name) for name in fields}
    merged.update(kwargs)
    try:
        return cls(**merged)
    except ConfigError:
        raise
    except Exception as exc:  # dataclass-level validation message
        raise ConfigError(path, str(exc)) from exc


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def preset_overrides(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; "
                          f"choose from {sorted(PRESETS)}")
    return PRESETS[name]


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("", "config root must be an object")
    doc = dict(doc)
    preset = doc.pop("preset", None)
    doc.pop("version", None)
    if preset is not None:
        doc = _deep_merge(preset_overrides(preset), doc)
    allowed = {"scenario", "train", "eval"}
    for key in doc:
        if key not in allowed:
            raise ConfigError(key, "unknown section")
    return ExperimentConfig(
        scenario=_section_from_dict(ScenarioConfig, doc.get("scenario", {}), "scenario"),
        train=_section_from_dict(TrainConfig, doc.get("train", {}), "train"),
        eval=_section_from_dict(EvalConfig, doc.get("eval", {}), "eval"),
    )


def preset_config(name: str) -> ExperimentConfig:
    return config_from_dict({"preset": name})


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def plain(value):
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        if isinstance(value, (list, dict, str, int, float, bool)) or value is None:
            return value
        return value

    doc = {"version": CONFIG_VERSION}
    for section in ("scenario", "train", "eval"):
        obj = getattr(cfg, section)
        doc[section] = {
            f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)
        }
    doc["scenario"]["spheres"] = [dict(s) for s in cfg.scenario.spheres]
    return doc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(str(path), f"invalid JSON: {exc.msg}", offset=exc.pos) from exc
    return config_from_dict(doc)


def save_config(path, cfg: ExperimentConfig):
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)


def config_sha256(cfg: ExperimentConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def with_master_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Rederive every per-stage seed from one master seed (CLI --seed)."""
    scenario = dataclasses.replace(
        cfg.scenario, rig_seed=seed, outlier_seed=seed + 1000,
        match_seed=seed + 2000, scene_init_seed=seed + 3000,
    )
    train = dataclasses.replace(cfg.train, seed=seed + 4000)
    ev = dataclasses.replace(cfg.eval, seed=seed + 5000)
    return ExperimentConfig(scenario, train, ev)


# ---------------------------------------------------------------------------
# Scenario construction
# ---------------------------------------------------------------------------

@dataclass
class ScenarioArtifacts:
    true_scene: scenelib.AnalyticScene
    scene_init: scenelib.AnalyticScene
    rig: scenelib.CameraRig
    matches: scenelib.MatchTable
    gt: scenelib.GroundTruthImages
    render_params: RenderParams


def build_scene(sc_cfg: ScenarioConfig) -> scenelib.AnalyticScene:
    prims = [
        scenelib.SpherePrimitive(np.array(s["center"], dtype=float),
                                 float(s["radius"]), bool(s.get("learnable", True)))
        for s in sc_cfg.spheres
    ]
    scene = scenelib.AnalyticScene(prims, color_seed=sc_cfg.color_seed)
    scenelib.validate_unit_bound(scene)
    return scene


def build_scenario(cfg: ExperimentConfig) -> ScenarioArtifacts:
    sc_cfg, tr_cfg = cfg.scenario, cfg.train
    true_scene = build_scene(sc_cfg)
    rig0 = scenelib.generate_cameras(sc_cfg.n_cameras, sc_cfg.rig_radius,
                                     sc_cfg.intrinsics(), seed=sc_cfg.rig_seed)
    rig = scenelib.inject_outliers(
        rig0, sc_cfg.outlier_fraction,
        rot_range_deg=sc_cfg.outlier_rot_deg, trans_range=sc_cfg.outlier_trans,
        inlier_noise=(sc_cfg.inlier_rot_deg, sc_cfg.inlier_trans),
        seed=sc_cfg.outlier_seed,
    )
    matches = scenelib.simulate_matches(
        true_scene, rig, n_surface_points=sc_cfg.n_surface_points,
        threshold_px=sc_cfg.match_threshold_px, seed=sc_cfg.match_seed,
    )
    params = RenderParams(n_samples=tr_cfg.n_samples, t_near=tr_cfg.t_near,
                          t_far=tr_cfg.t_far, s=tr_cfg.s_init)
    gt = scenelib.render_gt_images(true_scene, rig, params,
                                   oversample=sc_cfg.gt_oversample)
    if sc_cfg.scene_init == "perturbed":
        scene_init = perturb_scene(true_scene, rng_stream(sc_cfg.scene_init_seed, "scene-init"),
                                   center_sigma=sc_cfg.scene_init_sigma,
                                   radius_frac=sc_cfg.scene_init_radius_frac)
    else:
        scene_init = true_scene.with_params(true_scene.centers, true_scene.radii)
    return ScenarioArtifacts(true_scene, scene_init, rig, matches, gt, params)
