"""Shared fixtures: the standard two-sphere scene, a small camera rig and a
micro experiment configuration cheap enough for per-test training runs."""

import numpy as np
import pytest

from probcam import config as cfglib
from probcam import geometry as geo
from probcam import scene as scenelib


@pytest.fixture()
def two_sphere_scene():
    return scenelib.AnalyticScene(
        [
            scenelib.SpherePrimitive(np.array([0.25, 0.1, 0.0]), 0.45),
            scenelib.SpherePrimitive(np.array([-0.3, -0.15, 0.12]), 0.3),
        ],
        color_seed=1,
    )


@pytest.fixture()
def small_intrinsics():
    return geo.Intrinsics(fx=32.0, fy=32.0, cx=16.0, cy=16.0, width=32, height=32)


def make_micro_config(**train_overrides) -> cfglib.ExperimentConfig:
    """6 cameras, 32x32 images, tens of iterations: seconds per run."""
    doc = {
        "scenario": {
            "n_cameras": 6, "image_size": 32, "focal": 32.0,
            "n_surface_points": 300, "outlier_fraction": 0.34,
        },
        "train": {
            "total_iters": 60, "warmup_iters": 10, "ramp_iters": 20,
            "batch_rays": 32, "n_match": 4, "n_samples": 32,
            "vda_resolution": 16, "confidence_interval": 10,
            **train_overrides,
        },
        "eval": {"n_points": 400},
    }
    return cfglib.config_from_dict(doc)


@pytest.fixture(scope="session")
def micro_artifacts():
    """Scenario artifacts for the micro config (built once per session)."""
    return cfglib.build_scenario(make_micro_config())


@pytest.fixture()
def micro_config():
    return make_micro_config()
