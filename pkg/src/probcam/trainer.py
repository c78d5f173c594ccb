"""Joint optimization of scene, camera poses and per-camera pose uncertainty.

The loop alternates two step types:

  even t -> pair step:    sample a camera pair (probability proportional to
                          its match count), render the matched pixels from
                          both cameras, apply the photometric loss plus the
                          volumetric alignment loss between matched rays.
  odd t  -> balance step: sample one camera (probability proportional to its
                          confidence gamma), render a random pixel batch,
                          apply the photometric and eikonal losses.

Total objective, with each term present on the steps that compute it:

    L = L_color + LAMBDA_EIK * L_eik + LAMBDA_IOU * L_vda + w_unc(t) * L_unc

The uncertainty weight ramps in after a warm-up so the log-variances stay
frozen while the scene is still forming:

    w_unc(t) = lambda_unc * min(1, (t - warmup_iters) / ramp_iters),  t >= warmup
             = 0                                                      otherwise.

After the warm-up, each camera's pose step is attenuated by the factor
1 / (1 + sigma_bar_i * kappa).  ``damping_mode`` selects where the factor
lands:

  "lr"   -- scale the Adam *update* (default).  Adam divides gradients by
            their running RMS, so a constant per-camera factor applied to the
            raw gradient largely cancels; applying it to the update is what
            actually shrinks the step.
  "grad" -- scale the raw gradient before Adam (kept selectable for study).
  "none" -- no damping.

All randomness flows from one generator seeded by ``config.seed``, so two
runs with the same config produce bitwise-identical histories.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, asdict

import numpy as np

from . import confidence as conf
from . import probpose
from . import renderer
from . import vda
from .errors import InvalidArgumentError, NumericalFailureError
from .scene import AnalyticScene, CameraRig, GroundTruthImages, MatchTable
from .testkit import rng_stream

# Loss weights for the fixed regularizers.  The photometric term carries
# weight 1; these set the relative pull of the surface and alignment terms.
LAMBDA_EIK = 0.1
LAMBDA_IOU = 0.2

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Both schedules end at this fraction of the base learning rate: cosine decays
# to it, exponential reaches it exactly at the final iteration.
LR_FLOOR_FRACTION = 0.01

# Fraction of training during which the coarse-to-fine target blur (when
# enabled) is allowed to act; afterwards targets are always sharp.
BLUR_WINDOW_FRACTION = 1.0 / 3.0
BLUR_SIGMA_OFF = 0.3      # below this the blur is treated as off
BLUR_LOSS_SCALE = 20.0    # maps a mean color loss to a target sigma
BLUR_DECAY = 0.8          # plateau response: shrink sigma by this factor

HISTORY_COLUMNS = [
    "iteration", "step_type", "loss_total", "loss_color", "loss_eik",
    "loss_vda", "loss_unc", "w_unc", "lr_scale", "psnr", "sigma_bar_mean",
    "gamma_mean",
]
CONFIDENCE_COLUMNS = ["iteration", "camera", "gamma", "gamma_hat", "sigma_bar"]


def cosine_lr_scale(t: int, total: int) -> float:
    """Cosine decay from 1 to LR_FLOOR_FRACTION over ``total`` iterations."""
    c = 0.5 * (1.0 + math.cos(math.pi * min(t, total) / total))
    return LR_FLOOR_FRACTION + (1.0 - LR_FLOOR_FRACTION) * c


def exponential_lr_scale(t: int, total: int) -> float:
    """Exponential decay reaching LR_FLOOR_FRACTION at t = total."""
    return LR_FLOOR_FRACTION ** (min(t, total) / total)


def uncertainty_weight(t: int, warmup: int, ramp: int, lambda_unc: float) -> float:
    """Ramped weight of the uncertainty loss (0 during warm-up)."""
    if t < warmup:
        return 0.0
    if ramp <= 0:
        return lambda_unc
    return lambda_unc * min(1.0, (t - warmup) / ramp)


def damp_pose_gradients(d_r: np.ndarray, d_t: np.ndarray, factors: np.ndarray):
    """Scale per-camera pose gradient rows by the damping factors."""
    f = np.asarray(factors, dtype=float).reshape(-1, 1)
    return d_r * f, d_t * f


@dataclass
class AdamState:
    """Per-block Adam accumulator (bias-corrected)."""

    m: np.ndarray
    v: np.ndarray
    steps: int = 0

    @classmethod
    def like(cls, x) -> "AdamState":
        z = np.zeros_like(np.asarray(x, dtype=float))
        return cls(z.copy(), z.copy())

    def update(self, grad: np.ndarray, lr: float) -> np.ndarray:
        """Advance one step and return the (to-be-subtracted) update."""
        grad = np.asarray(grad, dtype=float)
        self.steps += 1
        self.m = ADAM_BETA1 * self.m + (1.0 - ADAM_BETA1) * grad
        self.v = ADAM_BETA2 * self.v + (1.0 - ADAM_BETA2) * grad ** 2
        m_hat = self.m / (1.0 - ADAM_BETA1 ** self.steps)
        v_hat = self.v / (1.0 - ADAM_BETA2 ** self.steps)
        return lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


@dataclass
class TrainConfig:
    """Desk-scale defaults; the large-scale preset lives in ``config.py``."""

    total_iters: int = 4000
    warmup_iters: int = 267
    ramp_iters: int = 533
    batch_rays: int = 128        # balance-step pixel batch
    n_match: int = 8             # matched pixel pairs per pair step
    n_samples: int = 64          # samples per ray
    t_near: float = 1.5
    t_far: float = 4.5
    s_init: float = 10.0

    lr_pose: float = 1e-3
    lr_scene: float = 8e-4
    lr_sharpness: float = 1e-3
    eta_unc: float = 2e-2        # learning rate of the log-variances

    lambda_unc: float = 0.1      # final weight of the uncertainty loss
    kappa: float = 5.0           # damping strength
    damping_mode: str = "lr"     # "lr" | "grad" | "none"
    lr_schedule: str = "cosine"  # "cosine" | "exponential"

    vda_top_k: int = 8
    vda_resolution: int = 32
    vda_sigma: float | None = None   # None derives 6 / vda_resolution

    confidence_interval: int = 100
    blend_alpha: float = 0.7

    use_uncertainty: bool = True   # off: w_unc = 0 and kappa treated as 0
    use_confidence: bool = True    # off: static prior replaced by uniform 0.5
    optimize_poses: bool = True
    optimize_scene: bool = True
    optimize_sharpness: bool = True

    use_blur: bool = False
    blur_sigma_init: float = 6.4
    blur_patience: int = 5

    checkpoint_interval: int = 0   # 0 disables checkpoint files
    seed: int = 0

    def __post_init__(self):
        if self.damping_mode not in ("lr", "grad", "none"):
            raise InvalidArgumentError(f"unknown damping_mode {self.damping_mode!r}")
        if self.lr_schedule not in ("cosine", "exponential"):
            raise InvalidArgumentError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.total_iters < 1:
            raise InvalidArgumentError("total_iters must be positive")
        if self.warmup_iters < 0 or self.ramp_iters < 0:
            raise InvalidArgumentError("warmup/ramp iterations must be non-negative")
        if self.vda_sigma is not None and self.vda_sigma <= 0.0:
            raise InvalidArgumentError("vda_sigma must be positive when set")

    def lr_scale(self, t: int) -> float:
        if self.lr_schedule == "cosine":
            return cosine_lr_scale(t, self.total_iters)
        return exponential_lr_scale(t, self.total_iters)


def perturb_scene(scene: AnalyticScene, rng: np.random.Generator,
                  center_sigma: float = 0.03, radius_frac: float = 0.05) -> AnalyticScene:
    """Initial scene guess: jitter centers and radii of the generating scene."""
    centers = scene.centers + rng.normal(0.0, center_sigma, scene.centers.shape)
    radii = scene.radii * (1.0 + rng.uniform(-radius_frac, radius_frac, scene.radii.shape))
    return scene.with_params(centers, np.maximum(radii, 0.05))


@dataclass
class StepStats:
    loss_color: float = 0.0
    loss_eik: float = 0.0
    loss_vda: float = 0.0
    cams: tuple = ()
    mses: tuple = ()


class _BlurSchedule:
    """Coarse-to-fine blur of the balance-step targets (optional).

    Holds a per-camera stack of low-passed ground-truth images at the current
    sigma.  Every confidence interval inside the blur window the recent
    balance color losses steer sigma: on a plateau it shrinks by BLUR_DECAY,
    otherwise it relaxes toward BLUR_LOSS_SCALE times the mean loss.
    """

    def __init__(self, gt: GroundTruthImages, cfg: TrainConfig):
        self.enabled = cfg.use_blur
        self.sigma = cfg.blur_sigma_init if cfg.use_blur else 0.0
        self.window = int(cfg.total_iters * BLUR_WINDOW_FRACTION)
        self.patience = cfg.blur_patience
        self._gt = gt
        self._losses: deque = deque(maxlen=max(cfg.confidence_interval, 1))
        self._best = math.inf
        self._stale = 0
        self._cache_sigma = -1.0
        self._cache: list = []

    def active(self, t: int) -> bool:
        return self.enabled and t < self.window and self.sigma > BLUR_SIGMA_OFF

    def record(self, loss_color: float):
        if self.enabled:
            self._losses.append(loss_color)

    def maybe_update(self, t: int):
        if not self.active(t) or not self._losses:
            return
        mean_loss = float(np.mean(self._losses))
        if mean_loss < self._best - 1e-4:
            self._best = mean_loss
            self._stale = 0
        else:
            self._stale += 1
        if self._stale >= self.patience:
            self.sigma *= BLUR_DECAY
            self._stale = 0
        else:
            self.sigma = 0.5 * self.sigma + 0.5 * (BLUR_LOSS_SCALE * mean_loss)

    def pixel_colors(self, cam: int, pixels: np.ndarray, t: int) -> np.ndarray:
        if not self.active(t):
            return self._gt.pixel_colors(cam, pixels)
        if self.sigma != self._cache_sigma:
            from scipy.ndimage import gaussian_filter
            self._cache = [
                gaussian_filter(img, sigma=(self.sigma, self.sigma, 0.0))
                for img in self._gt.images
            ]
            self._cache_sigma = self.sigma
        px = np.asarray(pixels, dtype=float).reshape(-1, 2)
        return self._cache[cam][px[:, 1].astype(int), px[:, 0].astype(int)]


class Trainer:
    """Mutable training state plus the per-iteration step logic."""

    def __init__(self, scene_init: AnalyticScene, rig: CameraRig,
                 matches: MatchTable, gt: GroundTruthImages, config: TrainConfig):
        self.cfg = config
        self.scene = scene_init.with_params(scene_init.centers, scene_init.radii)
        self.rig = rig
        self.matches = matches
        self.gt = gt
        self.log_s = float(np.log(config.s_init))

        n = rig.n_cameras
        if config.use_confidence:
            gamma0 = conf.normalize_confidence(conf.static_reliability(matches.counts))
        else:
            # grounding off: uniform static prior; the dynamic PSNR blend and
            # the confidence-weighted balance sampling stay active
            gamma0 = np.full(n, 0.5)
        self.tracker = conf.ConfidenceTracker(gamma0, alpha=config.blend_alpha)

        self.bank = probpose.ProbabilisticPoseBank.from_poses(rig.init_poses)
        self.bank.lambda_r, self.bank.lambda_t = probpose.init_uncertainty(self.tracker.gamma)

        self.pair_keys = sorted(k for k in matches.pairs if matches.counts[k] > 0)
        if not self.pair_keys:
            raise InvalidArgumentError("match table has no usable pairs")
        counts = np.array([matches.counts[k] for k in self.pair_keys], dtype=float)
        self.pair_probs = counts / counts.sum()

        self.adam = {
            "pose_r": AdamState.like(self.bank.r),
            "pose_t": AdamState.like(self.bank.t),
            "lambda_r": AdamState.like(self.bank.lambda_r),
            "lambda_t": AdamState.like(self.bank.lambda_t),
            "centers": AdamState.like(self.scene.centers),
            "radii": AdamState.like(self.scene.radii),
            "log_s": AdamState.like(0.0),
        }
        self.rng = rng_stream(config.seed, "trainer")
        self.history: list = []
        self.confidence_trace: list = []
        self.iteration = 0
        self.blur = _BlurSchedule(gt, config)

    # -- rendering helpers -------------------------------------------------

    def _params(self) -> renderer.RenderParams:
        return renderer.RenderParams(
            n_samples=self.cfg.n_samples, t_near=self.cfg.t_near,
            t_far=self.cfg.t_far, s=float(np.exp(self.log_s)),
        )

    def _render(self, cam: int, pixels: np.ndarray):
        return renderer.render_rays(
            self.scene, self.bank.pose(cam), self.rig.intrinsics,
            pixels, self._params(), jitter_rng=self.rng,
        )

    # -- step types ----------------------------------------------------------

    def _pair_step(self, grads: renderer.ParamGrads) -> StepStats:
        cfg = self.cfg
        key = self.pair_keys[self.rng.choice(len(self.pair_keys), p=self.pair_probs)]
        cam_a, cam_b = key
        rows = self.matches.pairs[key]
        take = min(cfg.n_match, len(rows))
        rows = rows[self.rng.choice(len(rows), size=take, replace=False)]

        batch_a = self._render(cam_a, rows[:, 0:2])
        batch_b = self._render(cam_b, rows[:, 2:4])
        gt_a = self.gt.pixel_colors(cam_a, rows[:, 0:2])
        gt_b = self.gt.pixel_colors(cam_b, rows[:, 2:4])

        colors = np.vstack([batch_a.colors, batch_b.colors])
        targets = np.vstack([gt_a, gt_b])
        loss_color = renderer.photometric_loss(colors, targets)
        d_colors = renderer.photometric_loss_grad(colors, targets)
        dc_a, dc_b = d_colors[:take], d_colors[take:]

        # Alignment loss over the matched ray pairs (mean over usable pairs).
        dw_a = np.zeros_like(batch_a.weights)
        dx_a = np.zeros_like(batch_a.points)
        dw_b = np.zeros_like(batch_b.weights)
        dx_b = np.zeros_like(batch_b.points)
        vda_losses = []
        pair_grads = []
        for m in range(take):
            res_a = renderer.RayRenderResult(
                batch_a.colors[m], batch_a.weights[m], batch_a.points[m],
                batch_a.transmittance[m], batch_a.taus[m], float(batch_a.accumulated[m]))
            res_b = renderer.RayRenderResult(
                batch_b.colors[m], batch_b.weights[m], batch_b.points[m],
                batch_b.transmittance[m], batch_b.taus[m], float(batch_b.accumulated[m]))
            try:
                loss_m, g = vda.vda_match_loss(
                    res_a, res_b, k=cfg.vda_top_k,
                    resolution=cfg.vda_resolution, sigma=cfg.vda_sigma,
                    with_grads=True)
            except vda.EmptyRayError:
                continue
            vda_losses.append(loss_m)
            pair_grads.append((m, g))
        loss_vda = float(np.mean(vda_losses)) if vda_losses else 0.0
        if pair_grads:
            scale = LAMBDA_IOU / len(pair_grads)
            for m, g in pair_grads:
                dw_a[m] += scale * g.d_weights_a
                dx_a[m] += scale * g.d_points_a
                dw_b[m] += scale * g.d_weights_b
                dx_b[m] += scale * g.d_points_b

        grads.accumulate(cam_a, batch_a.tape.backward(dc_a, dw_a, dx_a))
        grads.accumulate(cam_b, batch_b.tape.backward(dc_b, dw_b, dx_b))

        mse_a = float(np.mean((batch_a.colors - gt_a) ** 2))
        mse_b = float(np.mean((batch_b.colors - gt_b) ** 2))
        return StepStats(loss_color=loss_color, loss_vda=loss_vda,
                         cams=(cam_a, cam_b), mses=(mse_a, mse_b))

    def _balance_step(self, grads: renderer.ParamGrads, t: int) -> StepStats:
        cfg = self.cfg
        gamma = self.tracker.gamma
        total = gamma.sum()
        probs = gamma / total if total > 0 else np.full(len(gamma), 1.0 / len(gamma))
        cam = int(self.rng.choice(len(gamma), p=probs))

        K = self.rig.intrinsics
        u = self.rng.integers(0, K.width, cfg.batch_rays) + 0.5
        v = self.rng.integers(0, K.height, cfg.batch_rays) + 0.5
        pixels = np.column_stack([u, v]).astype(float)

        batch = self._render(cam, pixels)
        target = self.blur.pixel_colors(cam, pixels, t)
        loss_color = renderer.photometric_loss(batch.colors, target)
        d_colors = renderer.photometric_loss_grad(batch.colors, target)
        grads.accumulate(cam, batch.tape.backward(d_colors=d_colors))

        # The signed-distance field is exact for sphere scenes, so the eikonal
        # residual and its gradient are identically zero; the term is still
        # evaluated and reported to keep the objective complete.
        loss_eik = renderer.eikonal_loss(self.scene, batch.points.reshape(-1, 3))

        # PSNR is tracked against the active optimization target, so the
        # confidence signal follows the (possibly blurred) objective.
        mse = float(np.mean((batch.colors - target) ** 2))
        self.blur.record(loss_color)
        return StepStats(loss_color=loss_color, loss_eik=loss_eik,
                         cams=(cam,), mses=(mse,))

    # -- one iteration -------------------------------------------------------

    def step(self) -> dict:
        cfg = self.cfg
        t = self.iteration
        grads = renderer.ParamGrads.zeros(self.rig.n_cameras, len(self.scene.primitives))

        if t % 2 == 0:
            stats = self._pair_step(grads)
            step_type = "pair"
        else:
            stats = self._balance_step(grads, t)
            step_type = "balance"

        w_unc = uncertainty_weight(t, cfg.warmup_iters, cfg.ramp_iters,
                                   cfg.lambda_unc if cfg.use_uncertainty else 0.0)
        loss_unc = probpose.uncertainty_loss(self.bank, self.tracker.gamma)
        d_lambda_r = np.zeros_like(self.bank.lambda_r)
        d_lambda_t = np.zeros_like(self.bank.lambda_t)
        if w_unc > 0.0:
            g_r, g_t = probpose.uncertainty_loss_grad(self.bank, self.tracker.gamma)
            d_lambda_r, d_lambda_t = w_unc * g_r, w_unc * g_t

        grads.check_finite()
        if not (np.isfinite(d_lambda_r).all() and np.isfinite(d_lambda_t).all()):
            raise NumericalFailureError("non-finite uncertainty gradient")

        # Damping factors from the *current* uncertainty magnitudes.
        kappa = cfg.kappa if cfg.use_uncertainty else 0.0
        damp = np.ones(self.rig.n_cameras)
        if t >= cfg.warmup_iters and kappa > 0.0 and cfg.damping_mode != "none":
            damp = probpose.damping_factor(probpose.uncertainty_magnitudes(self.bank), kappa)
        if cfg.damping_mode == "grad":
            grads.d_pose_r, grads.d_pose_t = damp_pose_gradients(
                grads.d_pose_r, grads.d_pose_t, damp)

        scale = cfg.lr_scale(t)
        if cfg.optimize_poses:
            up_r = self.adam["pose_r"].update(grads.d_pose_r, cfg.lr_pose * scale)
            up_t = self.adam["pose_t"].update(grads.d_pose_t, cfg.lr_pose * scale)
            if cfg.damping_mode == "lr":
                up_r, up_t = damp_pose_gradients(up_r, up_t, damp)
            self.bank.r -= up_r
            self.bank.t -= up_t
        if cfg.optimize_scene:
            centers = self.scene.centers - self.adam["centers"].update(
                grads.d_centers, cfg.lr_scene * scale)
            radii = self.scene.radii - self.adam["radii"].update(
                grads.d_radii, cfg.lr_scene * scale)
            mask = self.scene.learnable_mask
            centers[~mask] = self.scene.centers[~mask]
            radii[~mask] = self.scene.radii[~mask]
            self.scene = self.scene.with_params(centers, np.maximum(radii, 1e-3))
        if cfg.optimize_sharpness:
            self.log_s -= float(self.adam["log_s"].update(grads.d_log_s, cfg.lr_sharpness * scale))
        self.bank.lambda_r -= self.adam["lambda_r"].update(d_lambda_r, cfg.eta_unc * scale)
        self.bank.lambda_t -= self.adam["lambda_t"].update(d_lambda_t, cfg.eta_unc * scale)

        for cam, mse in zip(stats.cams, stats.mses):
            self.tracker.record_psnr(cam, mse)
        if t > 0 and t % cfg.confidence_interval == 0:
            self.tracker.update_dynamic()
            self.blur.maybe_update(t)
            sig = probpose.uncertainty_magnitudes(self.bank)
            for cam in range(self.rig.n_cameras):
                self.confidence_trace.append({
                    "iteration": t, "camera": cam,
                    "gamma": float(self.tracker.gamma[cam]),
                    "gamma_hat": float(self.tracker.gamma_hat[cam]),
                    "sigma_bar": float(sig[cam]),
                })

        loss_total = (stats.loss_color + LAMBDA_EIK * stats.loss_eik
                      + LAMBDA_IOU * stats.loss_vda + w_unc * loss_unc)
        psnr = float(np.mean([conf.psnr_from_mse(m) for m in stats.mses]))
        row = {
            "iteration": t, "step_type": step_type, "loss_total": loss_total,
            "loss_color": stats.loss_color, "loss_eik": stats.loss_eik,
            "loss_vda": stats.loss_vda, "loss_unc": loss_unc, "w_unc": w_unc,
            "lr_scale": scale, "psnr": psnr,
            "sigma_bar_mean": float(probpose.uncertainty_magnitudes(self.bank).mean()),
            "gamma_mean": float(self.tracker.gamma.mean()),
        }
        self.history.append(row)
        self.iteration += 1
        return row

    def run(self, out_dir=None) -> "TrainResult":
        from pathlib import Path

        cfg = self.cfg
        try:
            while self.iteration < cfg.total_iters:
                self.step()
                if (out_dir is not None and cfg.checkpoint_interval > 0
                        and self.iteration % cfg.checkpoint_interval == 0):
                    probpose.save_checkpoint(
                        Path(out_dir) / f"checkpoint_{self.iteration:06d}.json",
                        self.bank, self.scene, self.log_s, self.iteration)
        except NumericalFailureError as err:
            if out_dir is not None:
                _write_failure_dump(Path(out_dir) / "failure_dump.json", self, err)
            raise
        return TrainResult(
            scene=self.scene, bank=self.bank, log_s=self.log_s,
            gamma=self.tracker.gamma.copy(), gamma0=self.tracker.gamma0.copy(),
            history=self.history, confidence_trace=self.confidence_trace,
            config=self.cfg,
        )


@dataclass
class TrainResult:
    scene: AnalyticScene
    bank: probpose.ProbabilisticPoseBank
    log_s: float
    gamma: np.ndarray
    gamma0: np.ndarray
    history: list
    confidence_trace: list
    config: TrainConfig

    def final_losses(self, window: int = 50) -> dict:
        """Mean of each loss column over the last ``window`` iterations."""
        rows = self.history[-window:]
        keys = ("loss_total", "loss_color", "loss_eik", "loss_vda", "loss_unc", "psnr")
        return {k: float(np.mean([r[k] for r in rows])) for k in keys}


def train(scene_init: AnalyticScene, rig: CameraRig, matches: MatchTable,
          gt: GroundTruthImages, config: TrainConfig, out_dir=None) -> TrainResult:
    """Run the full optimization; see the module docstring for the loop."""
    return Trainer(scene_init, rig, matches, gt, config).run(out_dir=out_dir)


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

def _format_cell(value) -> str:
    # repr() of a float is exact round-trip text, making logs byte-stable
    # across identical runs.
    return repr(value) if isinstance(value, float) else str(value)


def write_history_csv(path, history: list):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([_format_cell(row[c]) for c in HISTORY_COLUMNS])


def write_confidence_csv(path, trace: list):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CONFIDENCE_COLUMNS)
        for row in trace:
            w.writerow([_format_cell(row[c]) for c in CONFIDENCE_COLUMNS])


def result_summary(result: TrainResult) -> dict:
    return {
        "config": asdict(result.config),
        "final": result.final_losses(),
        "gamma": [float(g) for g in result.gamma],
        "gamma0": [float(g) for g in result.gamma0],
        "sigma_bar": [float(s) for s in probpose.uncertainty_magnitudes(result.bank)],
        "log_s": result.log_s,
        "iterations": len(result.history),
    }


def _write_failure_dump(path, trainer: Trainer, err: Exception):
    dump = {
        "error": str(err),
        "iteration": trainer.iteration,
        "log_s": trainer.log_s,
        "bank": probpose.bank_to_dict(trainer.bank),
        "gamma": [float(g) for g in trainer.tracker.gamma],
        "recent_history": trainer.history[-20:],
    }
    with open(path, "w") as fh:
        json.dump(dump, fh, indent=2, sort_keys=True)
