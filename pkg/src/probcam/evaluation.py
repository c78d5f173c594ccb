"""Reconstruction and pose-recovery metrics.

The estimated world is gauge-free: joint pose/scene optimization can converge
to any global similarity of the truth.  Evaluation therefore first fits a
similarity (scale, rotation, translation) from estimated to true camera
centers (Umeyama's closed form over *all* cameras, outliers included), maps
the estimated scene through it -- spheres are closed under similarities -- and
only then samples surface points.  Both scenes are sampled with identical
generator streams, so evaluating a perfect estimate yields a chamfer distance
of exactly zero and the metrics are invariant (to float noise) under any
global similarity applied to the estimated side together with its cameras.

Distances use the L1 norm and are reported in x10 world units:

    accuracy     = mean over estimated points of the L1 distance to the
                   nearest true point
    completeness = the same with the roles swapped
    chamfer      = (accuracy + completeness) / 2
    F-score      = harmonic mean of precision/recall at threshold tau,
                   where a point counts as good below tau (x10 units).

Pose errors are computed after the same alignment: rotation error is the
geodesic angle between the aligned and true camera-to-world rotations,
translation error the Euclidean distance between the aligned and true camera
centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError
from .geometry import rotation_geodesic_deg
from .scene import AnalyticScene, sample_surface_points
from .testkit import rng_stream

CHAMFER_UNIT_SCALE = 10.0   # metrics are quoted in x10 world units
F_SCORE_TAU = 0.64          # good-point threshold, x10 units
DEFAULT_EVAL_POINTS = 2000


def umeyama(src: np.ndarray, dst: np.ndarray, with_scale: bool = True):
    """Least-squares similarity: dst ~ scale * R @ src + t.

    Closed-form solution via the SVD of the centered covariance, with the
    determinant sign fix so R is a proper rotation.  Requires >= 3 points.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape or len(src) < 3:
        raise InvalidArgumentError("umeyama needs matching point sets of >= 3 points")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    cov = xd.T @ xs / len(src)
    U, sv, Vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0.0:
        sign[-1] = -1.0
    R = U @ np.diag(sign) @ Vt
    var_s = (xs ** 2).sum() / len(src)
    if var_s <= 0.0:
        raise InvalidArgumentError("degenerate source points (zero variance)")
    scale = float((sv * sign).sum() / var_s) if with_scale else 1.0
    t = mu_d - scale * R @ mu_s
    return scale, R, t


def chamfer_l1(points_a: np.ndarray, points_b: np.ndarray):
    """(chamfer, accuracy, completeness) in x10 units, L1 metric."""
    a = np.asarray(points_a, dtype=float).reshape(-1, 3)
    b = np.asarray(points_b, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise InvalidArgumentError("chamfer needs non-empty point sets")
    d_ab, _ = cKDTree(b).query(a, p=1)
    d_ba, _ = cKDTree(a).query(b, p=1)
    acc = CHAMFER_UNIT_SCALE * float(d_ab.mean())
    comp = CHAMFER_UNIT_SCALE * float(d_ba.mean())
    return 0.5 * (acc + comp), acc, comp


def f_score_stats(points_est: np.ndarray, points_true: np.ndarray,
                  tau: float = F_SCORE_TAU):
    """(F, precision, recall) at L1 threshold ``tau`` (x10 units)."""
    est = np.asarray(points_est, dtype=float).reshape(-1, 3)
    true = np.asarray(points_true, dtype=float).reshape(-1, 3)
    d_et, _ = cKDTree(true).query(est, p=1)
    d_te, _ = cKDTree(est).query(true, p=1)
    precision = float((CHAMFER_UNIT_SCALE * d_et < tau).mean())
    recall = float((CHAMFER_UNIT_SCALE * d_te < tau).mean())
    if precision + recall == 0.0:
        return 0.0, precision, recall
    return 2.0 * precision * recall / (precision + recall), precision, recall


def f_score(points_est: np.ndarray, points_true: np.ndarray, tau: float = F_SCORE_TAU) -> float:
    """Harmonic mean of precision and recall at L1 threshold ``tau`` (x10)."""
    return f_score_stats(points_est, points_true, tau)[0]


def sample_scene_points(scene: AnalyticScene, n: int, seed: int) -> np.ndarray:
    """Surface samples from a dedicated, label-separated generator stream."""
    return sample_surface_points(scene, n, rng_stream(seed, "eval-points"))


def pose_errors(est_poses, true_poses, scale: float, R0: np.ndarray, t0: np.ndarray):
    """Per-camera (rotation deg, translation) errors after alignment."""
    if len(est_poses) != len(true_poses):
        raise InvalidArgumentError("pose list lengths disagree")
    rot = np.empty(len(est_poses))
    trans = np.empty(len(est_poses))
    for i, (est, true) in enumerate(zip(est_poses, true_poses)):
        rot[i] = rotation_geodesic_deg(R0 @ est.rotation, true.rotation)
        trans[i] = np.linalg.norm(scale * R0 @ est.t + t0 - true.t)
    return rot, trans


@dataclass
class EvalReport:
    chamfer: float
    accuracy: float
    completeness: float
    f_score: float
    precision: float
    recall: float
    rot_errors_deg: np.ndarray    # (N,)
    trans_errors: np.ndarray      # (N,)
    align_scale: float
    outlier_flags: np.ndarray | None = None

    def summary(self) -> dict:
        out = {
            "chamfer": self.chamfer,
            "accuracy": self.accuracy,
            "completeness": self.completeness,
            "f_score": self.f_score,
            "precision": self.precision,
            "recall": self.recall,
            "rot_error_mean_deg": float(self.rot_errors_deg.mean()),
            "trans_error_mean": float(self.trans_errors.mean()),
            "align_scale": self.align_scale,
        }
        if self.outlier_flags is not None and self.outlier_flags.any():
            inl = ~self.outlier_flags
            out.update({
                "rot_error_inlier_deg": float(self.rot_errors_deg[inl].mean()),
                "rot_error_outlier_deg": float(self.rot_errors_deg[~inl].mean()),
                "rot_error_inlier_worst_deg": float(self.rot_errors_deg[inl].max()),
                "trans_error_inlier": float(self.trans_errors[inl].mean()),
                "trans_error_outlier": float(self.trans_errors[~inl].mean()),
            })
        return out


def evaluate_reconstruction(est_scene: AnalyticScene, est_poses,
                            true_scene: AnalyticScene, true_poses,
                            n_points: int = DEFAULT_EVAL_POINTS, seed: int = 0,
                            outlier_flags=None, tau: float = F_SCORE_TAU) -> EvalReport:
    """Full protocol: align by camera centers, transform the estimated scene,
    sample both surfaces with identical streams, report metrics."""
    centers_est = np.stack([p.t for p in est_poses])
    centers_true = np.stack([p.t for p in true_poses])
    scale, R0, t0 = umeyama(centers_est, centers_true)
    aligned = est_scene.transformed(scale, R0, t0)
    pts_est = sample_scene_points(aligned, n_points, seed)
    pts_true = sample_scene_points(true_scene, n_points, seed)
    cd, acc, comp = chamfer_l1(pts_est, pts_true)
    fs, prec, rec = f_score_stats(pts_est, pts_true, tau)
    rot, trans = pose_errors(est_poses, true_poses, scale, R0, t0)
    flags = None if outlier_flags is None else np.asarray(outlier_flags, dtype=bool)
    return EvalReport(cd, acc, comp, fs, prec, rec, rot, trans, scale, flags)


# ---------------------------------------------------------------------------
# Point-sample container (binary float32 + JSON header)
# ---------------------------------------------------------------------------

def save_points_blob(prefix, points: np.ndarray):
    """Write ``<prefix>.bin`` (row-major float32) + ``<prefix>.json`` header."""
    import json

    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float32).reshape(-1, 3))
    with open(f"{prefix}.bin", "wb") as fh:
        fh.write(pts.tobytes())
    with open(f"{prefix}.json", "w") as fh:
        json.dump({"count": len(pts), "dims": 3, "dtype": "float32"}, fh, sort_keys=True)


def load_points_blob(prefix) -> np.ndarray:
    import json

    from .errors import FileFormatError

    header_path, bin_path = f"{prefix}.json", f"{prefix}.bin"
    try:
        with open(header_path) as fh:
            header = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(header_path, f"invalid JSON header: {exc.msg}",
                              offset=exc.pos) from exc
    for key in ("count", "dims", "dtype"):
        if key not in header:
            raise FileFormatError(header_path, f"missing header key {key!r}")
    if header["dtype"] != "float32" or header["dims"] != 3:
        raise FileFormatError(header_path, "expected float32 points with dims=3")
    raw = np.fromfile(bin_path, dtype=np.float32)
    expected = int(header["count"]) * 3
    if raw.size != expected:
        raise FileFormatError(bin_path,
                              f"payload holds {raw.size} floats, header implies {expected}")
    return raw.reshape(-1, 3).astype(float)
