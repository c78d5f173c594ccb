"""Probabilistic camera poses: per-camera mean (rotation vector + center)
plus independent per-axis Gaussian log-variances.

Only the *means* enter rendering -- the forward model is always evaluated at
the mean pose.  The log-variances lambda (sigma^2 = exp(lambda), one per axis
for rotation and translation) matter in exactly two places:

- the scalar uncertainty magnitude
      sigma_bar_i = (sum exp(lambda_r_i) + sum exp(lambda_t_i)) / 6
  modulates per-camera pose step damping 1 / (1 + sigma_bar * kappa), and
- the uncertainty loss
      L_unc = mean_i | sigma_bar_i - (1 - gamma_i) |
  couples sigma_bar to the per-camera confidence gamma.  Its gradient flows
  *only* into lambda (gamma is a constant input), and has the closed form
      dL/dlambda_axis = sign(sigma_bar_i - (1 - gamma_i)) * exp(lambda_axis) / (6 N)
  with subgradient 0 at the kink.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import FileFormatError, InvalidArgumentError
from .geometry import PoseMean, canonicalize_axis_angle

# Default initial per-axis variance before confidence scaling (paper-scale).
SIGMA2_INIT = 0.01

# Reliability weights are floored here; a zero-confidence camera would
# otherwise produce an infinite inverse weight.
GAMMA_FLOOR = 1e-3


@dataclass
class ProbabilisticPoseBank:
    """Learnable pose state for all N cameras of a rig."""

    r: np.ndarray          # (N, 3) rotation vectors (mean)
    t: np.ndarray          # (N, 3) camera centers (mean)
    lambda_r: np.ndarray   # (N, 3) log-variances, rotation axes
    lambda_t: np.ndarray   # (N, 3) log-variances, translation axes

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        self.lambda_r = np.asarray(self.lambda_r, dtype=float)
        self.lambda_t = np.asarray(self.lambda_t, dtype=float)
        n = len(self.r)
        for name, arr in [("r", self.r), ("t", self.t),
                          ("lambda_r", self.lambda_r), ("lambda_t", self.lambda_t)]:
            if arr.shape != (n, 3):
                raise InvalidArgumentError(f"bank field {name} must have shape ({n}, 3)")
            if not np.isfinite(arr).all():
                raise InvalidArgumentError(f"bank field {name} contains non-finite values")

    @classmethod
    def from_poses(cls, poses, sigma2_init: float = SIGMA2_INIT) -> "ProbabilisticPoseBank":
        n = len(poses)
        lam = np.full((n, 3), np.log(sigma2_init))
        return cls(
            np.stack([p.r for p in poses]),
            np.stack([p.t for p in poses]),
            lam.copy(),
            lam.copy(),
        )

    @property
    def n_cameras(self) -> int:
        return len(self.r)

    def pose(self, i: int) -> PoseMean:
        return PoseMean(self.r[i], self.t[i])

    def poses(self, canonicalize: bool = False):
        if canonicalize:
            return [PoseMean(canonicalize_axis_angle(r), t) for r, t in zip(self.r, self.t)]
        return [PoseMean(r, t) for r, t in zip(self.r, self.t)]

    def copy(self) -> "ProbabilisticPoseBank":
        return ProbabilisticPoseBank(
            self.r.copy(), self.t.copy(), self.lambda_r.copy(), self.lambda_t.copy()
        )


def init_uncertainty(gamma0: np.ndarray, sigma2_init: float = SIGMA2_INIT):
    """Confidence-scaled log-variance initialization.

    Cameras with poor static reliability start more uncertain:
        s_i = (1 / gamma0_i) / mean_j (1 / gamma0_j)
        lambda_i = log(sigma2_init) + log(s_i)   (all six axes alike)
    Returns (lambda_r, lambda_t), each (N, 3).
    """
    g = np.asarray(gamma0, dtype=float)
    if (g <= 0.0).any():
        raise InvalidArgumentError("gamma0 must be strictly positive (floor it first)")
    if sigma2_init <= 0.0:
        raise InvalidArgumentError("sigma2_init must be positive")
    inv = 1.0 / g
    scale = inv / inv.mean()
    lam = (np.log(sigma2_init) + np.log(scale))[:, None] * np.ones(3)
    return lam.copy(), lam.copy()


def uncertainty_magnitudes(bank: ProbabilisticPoseBank) -> np.ndarray:
    """sigma_bar for every camera: mean of the six per-axis variances."""
    return (np.exp(bank.lambda_r).sum(axis=1) + np.exp(bank.lambda_t).sum(axis=1)) / 6.0


def uncertainty_magnitude(bank: ProbabilisticPoseBank, i: int) -> float:
    return float(uncertainty_magnitudes(bank)[i])


def damping_factor(sigma_bar, kappa: float):
    """Pose-step attenuation 1 / (1 + sigma_bar * kappa) in (0, 1]."""
    if kappa < 0.0:
        raise InvalidArgumentError("kappa must be non-negative")
    return 1.0 / (1.0 + np.asarray(sigma_bar, dtype=float) * kappa)


def uncertainty_loss(bank: ProbabilisticPoseBank, gamma: np.ndarray) -> float:
    """L_unc = mean_i | sigma_bar_i - (1 - gamma_i) |."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (bank.n_cameras,):
        raise InvalidArgumentError("gamma must have one entry per camera")
    return float(np.abs(uncertainty_magnitudes(bank) - (1.0 - gamma)).mean())


def uncertainty_loss_grad(bank: ProbabilisticPoseBank, gamma: np.ndarray):
    """Closed-form (d lambda_r, d lambda_t) of :func:`uncertainty_loss`.

    Gradient is zero exactly at the kink (sigma_bar == 1 - gamma).
    """
    gamma = np.asarray(gamma, dtype=float)
    n = bank.n_cameras
    sgn = np.sign(uncertainty_magnitudes(bank) - (1.0 - gamma))[:, None]
    d_lr = sgn * np.exp(bank.lambda_r) / (6.0 * n)
    d_lt = sgn * np.exp(bank.lambda_t) / (6.0 * n)
    return d_lr, d_lt


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

def bank_to_dict(bank: ProbabilisticPoseBank) -> dict:
    return {
        "r": bank.r.tolist(),
        "t": bank.t.tolist(),
        "lambda_r": bank.lambda_r.tolist(),
        "lambda_t": bank.lambda_t.tolist(),
    }


def bank_from_dict(d: dict) -> ProbabilisticPoseBank:
    try:
        return ProbabilisticPoseBank(
            np.array(d["r"], dtype=float),
            np.array(d["t"], dtype=float),
            np.array(d["lambda_r"], dtype=float),
            np.array(d["lambda_t"], dtype=float),
        )
    except KeyError as exc:
        raise InvalidArgumentError(f"pose bank document missing field {exc}") from exc


def save_checkpoint(path, bank: ProbabilisticPoseBank, scene, log_s: float, iteration: int):
    """One JSON document holding the full optimization state."""
    doc = {
        "version": 1,
        "iteration": int(iteration),
        "log_s": float(log_s),
        "bank": bank_to_dict(bank),
        "scene": {
            "color_seed": scene.color_seed,
            "color_phases": scene.color_phases.tolist(),
            "spheres": [
                {"center": p.center.tolist(), "radius": p.radius, "learnable": p.learnable}
                for p in scene.primitives
            ],
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path):
    from .scene import AnalyticScene, SpherePrimitive  # deferred import

    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(str(path), exc.msg, offset=exc.pos) from exc
    try:
        bank = bank_from_dict(doc["bank"])
        sc = doc["scene"]
        scene = AnalyticScene(
            [
                SpherePrimitive(np.array(s["center"]), s["radius"], bool(s.get("learnable", True)))
                for s in sc["spheres"]
            ],
            color_seed=int(sc["color_seed"]),
            color_phases=np.array(sc["color_phases"]),
        )
        return bank, scene, float(doc["log_s"]), int(doc["iteration"])
    except KeyError as exc:
        raise InvalidArgumentError(f"checkpoint missing field {exc}") from exc
