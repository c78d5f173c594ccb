"""Synthetic scenes: analytic sphere SDFs, procedural colors, camera rigs,
pose outlier injection, and simulated keypoint matches.

Scenes live inside the unit bounding sphere (every primitive satisfies
||center|| + radius <= 1) so world units double as "scene units" everywhere:
thresholds, kernel widths and evaluation scales are all expressed in them.

The match simulation mimics a two-view feature pipeline: world points on the
true surface are projected into camera pairs, and a candidate correspondence
survives iff it is visible in both views and its symmetric transfer error --
the pixel gap between where the *initial* pose places the point and where the
*true* pose does -- stays below a threshold in both views.  Badly perturbed
cameras therefore lose almost all of their matches, which is exactly the
signal the confidence layer feeds on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    FileFormatError,
    DegenerateGeometryError,
    InvalidArgumentError,
    SamplingFailureError,
)
from .geometry import (
    Intrinsics,
    PoseMean,
    axis_angle_to_matrix,
    look_at_pose,
)

# Procedural color field rgb = BASE + AMP * sin(FREQ * x + phase), per channel.
# AMP < 0.5 - BASE guarantees the pre-clamp range [0.1, 0.9].
COLOR_BASE = 0.5
COLOR_AMP = 0.4
COLOR_FREQ = 7.0

# Rejection band and Newton iterations for surface sampling.
SURFACE_BAND = 0.1
NEWTON_ITERS = 5
SURFACE_TOL = 1e-6

# A camera "sees" a surface point when the point is front-facing and its
# depth exceeds this floor (guards the projective division).
MIN_VISIBLE_DEPTH = 1e-6


# ---------------------------------------------------------------------------
# Scene
# ---------------------------------------------------------------------------

@dataclass
class SpherePrimitive:
    center: np.ndarray
    radius: float
    learnable: bool = True

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.radius = float(self.radius)
        if self.radius <= 0.0:
            raise InvalidArgumentError("sphere radius must be positive")


def validate_unit_bound(scene: "AnalyticScene"):
    """Generation-time contract: every sphere fits inside the unit sphere, so
    a radius-3 rig with sample range [1.5, 4.5] always covers the geometry.
    Trained or similarity-aligned scenes are exempt (they may drift)."""
    for p in scene.primitives:
        reach = float(np.linalg.norm(p.center)) + p.radius
        if reach > 1.0 + 1e-9:
            raise InvalidArgumentError(
                f"sphere exceeds the unit bounding sphere (||c|| + r = {reach:.4f})"
            )


@dataclass
class AnalyticScene:
    """Union-of-spheres SDF with a procedural, view-independent color field.

    ``color_phases`` is normally derived from ``color_seed``; passing it
    explicitly is meant for tests that need a specific field (e.g. an even
    one for symmetry arguments).
    """

    primitives: list
    color_seed: int = 0
    color_phases: np.ndarray | None = None

    def __post_init__(self):
        if not self.primitives:
            raise InvalidArgumentError("scene needs at least one primitive")
        if self.color_phases is None:
            rng = np.random.default_rng(self.color_seed)
            self.color_phases = rng.uniform(0.0, 2.0 * math.pi, size=3)
        self.color_phases = np.asarray(self.color_phases, dtype=float).reshape(3)

    # -- parameter block views (used by the trainer) --

    @property
    def centers(self) -> np.ndarray:
        return np.stack([p.center for p in self.primitives])

    @property
    def radii(self) -> np.ndarray:
        return np.array([p.radius for p in self.primitives])

    @property
    def learnable_mask(self) -> np.ndarray:
        return np.array([p.learnable for p in self.primitives], dtype=bool)

    def with_params(self, centers: np.ndarray, radii: np.ndarray) -> "AnalyticScene":
        prims = [
            SpherePrimitive(c, r, p.learnable)
            for c, r, p in zip(centers, radii, self.primitives)
        ]
        return AnalyticScene(prims, self.color_seed, self.color_phases.copy())

    def transformed(self, scale: float, R: np.ndarray, t: np.ndarray) -> "AnalyticScene":
        """Apply a similarity x -> scale * R x + t.  Spheres map to spheres."""
        prims = [
            SpherePrimitive(scale * (R @ p.center) + t, scale * p.radius, p.learnable)
            for p in self.primitives
        ]
        return AnalyticScene(prims, self.color_seed, self.color_phases.copy())


def sdf_batch(scene: AnalyticScene, points: np.ndarray):
    """Signed distance and active-primitive index for an array of points.

    ``points`` has shape (..., 3); returns (f, active) with shape (...).
    f is exact (min over sphere SDFs), 1-Lipschitz, negative inside.
    """
    pts = np.asarray(points, dtype=float)
    diff = pts[..., None, :] - scene.centers  # (..., P, 3)
    dist = np.linalg.norm(diff, axis=-1)
    per = dist - scene.radii
    active = np.argmin(per, axis=-1)
    f = np.take_along_axis(per, active[..., None], axis=-1)[..., 0]
    return f, active


def sdf_eval(scene: AnalyticScene, x: np.ndarray) -> float:
    f, _ = sdf_batch(scene, np.asarray(x, dtype=float).reshape(3))
    return float(f)


def sdf_gradient_batch(scene: AnalyticScene, points: np.ndarray) -> np.ndarray:
    """Unit gradient (x - c)/||x - c|| of the active sphere, vectorized.

    Points that coincide with the active center (measure zero) get a fixed
    +z fallback direction rather than NaN.
    """
    pts = np.asarray(points, dtype=float)
    _, active = sdf_batch(scene, pts)
    delta = pts - scene.centers[active]
    dist = np.linalg.norm(delta, axis=-1, keepdims=True)
    grad = np.where(dist > 1e-15, delta / np.maximum(dist, 1e-300), [0.0, 0.0, 1.0])
    return grad


def sdf_gradient(scene: AnalyticScene, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(3)
    _, active = sdf_batch(scene, x)
    delta = x - scene.primitives[int(active)].center
    dist = float(np.linalg.norm(delta))
    if dist < 1e-12:
        raise DegenerateGeometryError("SDF gradient queried at a sphere center")
    return delta / dist


def color_batch(scene: AnalyticScene, points: np.ndarray, view_dirs=None) -> np.ndarray:
    """Procedural surface color, channel c driven by coordinate c of the point.

    The field is Lambertian: ``view_dirs`` is accepted for interface symmetry
    but ignored.  Pre-clamp values lie in [0.1, 0.9] by construction, so the
    clamp to [0, 1] never actually binds.
    """
    pts = np.asarray(points, dtype=float)
    rgb = COLOR_BASE + COLOR_AMP * np.sin(COLOR_FREQ * pts + scene.color_phases)
    return np.clip(rgb, 0.0, 1.0)


def color_eval(scene: AnalyticScene, x: np.ndarray, view_dir=None) -> np.ndarray:
    return color_batch(scene, np.asarray(x, dtype=float).reshape(3))


def color_batch_grad(scene: AnalyticScene, points: np.ndarray) -> np.ndarray:
    """d rgb_c / d x_c (the Jacobian is diagonal), same shape as ``points``."""
    pts = np.asarray(points, dtype=float)
    return COLOR_AMP * COLOR_FREQ * np.cos(COLOR_FREQ * pts + scene.color_phases)


# ---------------------------------------------------------------------------
# Surface sampling (shared by match simulation and evaluation metrics)
# ---------------------------------------------------------------------------

def sample_surface_points(
    scene: AnalyticScene,
    count: int,
    rng: np.random.Generator,
    max_batches: int = 200,
) -> np.ndarray:
    """Uniform-ish samples on the zero level set.

    Candidates are drawn uniformly in the [-1, 1]^3 box, kept when
    |f| < SURFACE_BAND, then Newton-projected (x <- x - f * grad f) for
    NEWTON_ITERS steps; survivors need |f| < SURFACE_TOL.  Raises
    SamplingFailureError when the acceptance rate collapses.
    """
    out = []
    have = 0
    batch = max(4 * count, 1024)
    for _ in range(max_batches):
        cand = rng.uniform(-1.0, 1.0, size=(batch, 3))
        f, _ = sdf_batch(scene, cand)
        cand = cand[np.abs(f) < SURFACE_BAND]
        if len(cand):
            for _ in range(NEWTON_ITERS):
                f, _ = sdf_batch(scene, cand)
                cand = cand - f[:, None] * sdf_gradient_batch(scene, cand)
            f, _ = sdf_batch(scene, cand)
            cand = cand[np.abs(f) < SURFACE_TOL]
        if len(cand):
            out.append(cand)
            have += len(cand)
        if have >= count:
            return np.concatenate(out)[:count]
    raise SamplingFailureError(
        f"surface sampling stalled: {have}/{count} points after {max_batches} batches"
    )


# ---------------------------------------------------------------------------
# Camera rigs
# ---------------------------------------------------------------------------

@dataclass
class CameraRig:
    true_poses: list          # list[PoseMean]
    init_poses: list          # list[PoseMean]
    intrinsics: Intrinsics
    outlier_flags: np.ndarray  # bool (N,)
    radius: float = 3.0

    def __post_init__(self):
        self.outlier_flags = np.asarray(self.outlier_flags, dtype=bool)
        n = len(self.true_poses)
        if len(self.init_poses) != n or len(self.outlier_flags) != n:
            raise InvalidArgumentError("rig pose/flag lengths disagree")
        for pose in self.true_poses:
            # true cameras aim at the scene center: origin-to-axis distance ~ 0
            d = pose.rotation @ np.array([0.0, 0.0, 1.0])
            miss = np.linalg.norm(-pose.t - (-pose.t @ d) * d)
            if miss > 0.1:
                raise InvalidArgumentError(
                    f"true camera misses the scene center by {miss:.3f} (> 0.1)"
                )

    @property
    def n_cameras(self) -> int:
        return len(self.true_poses)


def generate_cameras(
    n: int, radius: float, intrinsics: Intrinsics, seed: int = 0
) -> CameraRig:
    """N cameras on a Fibonacci spiral over the upper hemisphere, all aimed at
    the origin with world +z up.  The spiral's azimuth is rotated by a
    seed-dependent offset so different seeds give different rigs."""
    if n < 2:
        raise InvalidArgumentError("a rig needs at least two cameras")
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    poses = []
    for i in range(n):
        z = (i + 0.5) / n  # (0, 1): avoids both the equator and the pole
        azim = 2.0 * math.pi * i / golden + phase
        rho = math.sqrt(1.0 - z * z)
        center = radius * np.array([rho * math.cos(azim), rho * math.sin(azim), z])
        poses.append(look_at_pose(center, np.zeros(3)))
    flags = np.zeros(n, dtype=bool)
    init = [PoseMean(p.r.copy(), p.t.copy()) for p in poses]
    return CameraRig(poses, init, intrinsics, flags, radius=radius)


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def inject_outliers(
    rig: CameraRig,
    fraction: float,
    rot_range_deg=(20.0, 30.0),
    trans_range=(0.2, 0.4),
    inlier_noise=(1.0, 0.01),
    seed: int = 0,
) -> CameraRig:
    """Perturb ceil(fraction * N) randomly chosen cameras by a large rotation
    (angle uniform in ``rot_range_deg`` about a random axis, composed in the
    world frame) plus a translation of magnitude uniform in ``trans_range``.
    The remaining cameras get small inlier noise with magnitudes uniform in
    [0, inlier_noise[0]] degrees and [0, inlier_noise[1]] units."""
    if not (0.0 <= fraction <= 1.0):
        raise InvalidArgumentError("outlier fraction must be in [0, 1]")
    n = rig.n_cameras
    k = math.ceil(fraction * n)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=k, replace=False) if k else np.array([], dtype=int)
    flags = np.zeros(n, dtype=bool)
    flags[chosen] = True
    init = []
    for i, pose in enumerate(rig.true_poses):
        if flags[i]:
            angle = math.radians(rng.uniform(*rot_range_deg))
            tmag = rng.uniform(*trans_range)
        else:
            angle = math.radians(rng.uniform(0.0, inlier_noise[0]))
            tmag = rng.uniform(0.0, inlier_noise[1])
        d_rot = angle * _random_unit(rng)
        d_t = tmag * _random_unit(rng)
        R_new = axis_angle_to_matrix(d_rot) @ pose.rotation
        from .geometry import matrix_to_axis_angle  # local: avoids top-level clutter

        init.append(PoseMean(matrix_to_axis_angle(R_new), pose.t + d_t))
    return CameraRig(rig.true_poses, init, rig.intrinsics, flags, radius=rig.radius)


# ---------------------------------------------------------------------------
# Simulated matches
# ---------------------------------------------------------------------------

@dataclass
class MatchTable:
    """Pairwise match counts plus the surviving pixel correspondences.

    ``counts`` is a symmetric (N, N) int array with a zero diagonal.
    ``pairs[(i, j)]`` (i < j) holds the matched pixel pairs as rows
    [u_i, v_i, u_j, v_j], snapped to pixel centers of the true-pose
    projections (the keypoint locations actually observed in the images).
    """

    counts: np.ndarray
    pairs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=int)
        if (self.counts != self.counts.T).any() or np.diagonal(self.counts).any():
            raise InvalidArgumentError("match counts must be symmetric with zero diagonal")

    def neighborhoods(self) -> list:
        return [np.flatnonzero(row > 0) for row in self.counts]


def _project_masked(pose: PoseMean, K: Intrinsics, pts: np.ndarray):
    """Projection that masks instead of raising: returns (uv, depth, valid)."""
    R = axis_angle_to_matrix(pose.r)
    Xc = (pts - pose.t) @ R
    depth = Xc[:, 2]
    valid = depth > MIN_VISIBLE_DEPTH
    uv = np.zeros((len(pts), 2))
    safe = np.where(valid, depth, 1.0)
    uv[:, 0] = K.fx * Xc[:, 0] / safe + K.cx
    uv[:, 1] = K.fy * Xc[:, 1] / safe + K.cy
    return uv, depth, valid


def _snap_to_pixel_centers(uv: np.ndarray) -> np.ndarray:
    return np.floor(uv) + 0.5


def simulate_matches(
    scene: AnalyticScene,
    rig: CameraRig,
    n_surface_points: int = 600,
    threshold_px: float = 2.0,
    seed: int = 0,
) -> MatchTable:
    """Simulate two-view feature matches over true surface points.

    A point contributes a match to camera pair (i, j) iff, in *both* views,
    it (a) is front-facing and in front of the camera under the true and the
    initial pose, (b) projects inside the image under both poses, and (c) its
    transfer error |proj_init - proj_true| is below ``threshold_px`` pixels.
    Pixel pairs are stored at the true projections, snapped to pixel centers
    and de-duplicated.
    """
    rng = np.random.default_rng(seed)
    pts = sample_surface_points(scene, n_surface_points, rng)
    normals = sdf_gradient_batch(scene, pts)
    K = rig.intrinsics
    n = rig.n_cameras

    ok = np.zeros((n, len(pts)), dtype=bool)
    err = np.zeros((n, len(pts)))
    uv_true_all = np.zeros((n, len(pts), 2))
    for i in range(n):
        tp, ip = rig.true_poses[i], rig.init_poses[i]
        uv_t, _, vis_t = _project_masked(tp, K, pts)
        uv_i, _, vis_i = _project_masked(ip, K, pts)
        front_t = ((tp.t - pts) * normals).sum(axis=1) > 0.0
        front_i = ((ip.t - pts) * normals).sum(axis=1) > 0.0
        in_t = (uv_t[:, 0] >= 0) & (uv_t[:, 0] < K.width) & (uv_t[:, 1] >= 0) & (uv_t[:, 1] < K.height)
        in_i = (uv_i[:, 0] >= 0) & (uv_i[:, 0] < K.width) & (uv_i[:, 1] >= 0) & (uv_i[:, 1] < K.height)
        ok[i] = vis_t & vis_i & front_t & front_i & in_t & in_i
        err[i] = np.linalg.norm(uv_i - uv_t, axis=1)
        uv_true_all[i] = uv_t

    counts = np.zeros((n, n), dtype=int)
    pairs = {}
    for i in range(n):
        for j in range(i + 1, n):
            sel = ok[i] & ok[j] & (err[i] < threshold_px) & (err[j] < threshold_px)
            counts[i, j] = counts[j, i] = int(sel.sum())
            if counts[i, j]:
                pix = np.hstack(
                    [
                        _snap_to_pixel_centers(uv_true_all[i][sel]),
                        _snap_to_pixel_centers(uv_true_all[j][sel]),
                    ]
                )
                pairs[(i, j)] = np.unique(pix, axis=0)
    return MatchTable(counts, pairs)


# ---------------------------------------------------------------------------
# Ground-truth images
# ---------------------------------------------------------------------------

@dataclass
class GroundTruthImages:
    images: list  # list of (H, W, 3) float arrays in [0, 1]

    def pixel_colors(self, cam: int, pixels: np.ndarray) -> np.ndarray:
        """Colors at pixel-center coordinates (exact array lookup)."""
        px = np.asarray(pixels, dtype=float).reshape(-1, 2)
        cols = px[:, 0].astype(int)
        rows = px[:, 1].astype(int)
        return self.images[cam][rows, cols]


def render_gt_images(scene, rig: CameraRig, params, oversample: int = 2) -> GroundTruthImages:
    """Render every camera at its *true* pose with ``oversample`` x the
    training sample count (deterministic midpoint sampling, black background)."""
    from . import renderer  # deferred: renderer depends on this module

    K = rig.intrinsics
    gt_params = params.with_samples(params.n_samples * oversample)
    us, vs = np.meshgrid(np.arange(K.width) + 0.5, np.arange(K.height) + 0.5)
    pixels = np.stack([us.ravel(), vs.ravel()], axis=1)
    images = []
    for pose in rig.true_poses:
        colors = np.empty((len(pixels), 3))
        for lo in range(0, len(pixels), 4096):
            chunk = pixels[lo : lo + 4096]
            batch = renderer.render_rays(scene, pose, K, chunk, gt_params)
            colors[lo : lo + len(chunk)] = batch.colors
        images.append(np.clip(colors.reshape(K.height, K.width, 3), 0.0, 1.0))
    return GroundTruthImages(images)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

POSE_CONVENTION = "camera_to_world;axis_angle;pixel_center=+0.5"
FORMAT_VERSION = 1


def _pose_to_list(p: PoseMean):
    return {"r": p.r.tolist(), "t": p.t.tolist()}


def _pose_from_dict(d) -> PoseMean:
    return PoseMean(np.array(d["r"], dtype=float), np.array(d["t"], dtype=float))


def scenario_to_dict(scene: AnalyticScene, rig: CameraRig, matches: MatchTable | None) -> dict:
    doc = {
        "version": FORMAT_VERSION,
        "units": "scene (unit bounding sphere)",
        "pose_convention": POSE_CONVENTION,
        "scene": {
            "color_seed": scene.color_seed,
            "color_phases": scene.color_phases.tolist(),
            "spheres": [
                {"center": p.center.tolist(), "radius": p.radius, "learnable": p.learnable}
                for p in scene.primitives
            ],
        },
        "rig": {
            "radius": rig.radius,
            "intrinsics": {
                "width": rig.intrinsics.width,
                "height": rig.intrinsics.height,
                "fx": rig.intrinsics.fx,
                "fy": rig.intrinsics.fy,
                "cx": rig.intrinsics.cx,
                "cy": rig.intrinsics.cy,
            },
            "true_poses": [_pose_to_list(p) for p in rig.true_poses],
            "init_poses": [_pose_to_list(p) for p in rig.init_poses],
            "outlier_flags": rig.outlier_flags.astype(int).tolist(),
        },
    }
    if matches is not None:
        doc["matches"] = {
            "counts": matches.counts.tolist(),
            "pairs": {f"{i},{j}": arr.tolist() for (i, j), arr in matches.pairs.items()},
        }
    return doc


def scenario_from_dict(doc: dict):
    try:
        if doc.get("version") != FORMAT_VERSION:
            raise InvalidArgumentError(f"unsupported scenario version {doc.get('version')!r}")
        sc = doc["scene"]
        scene = AnalyticScene(
            [
                SpherePrimitive(np.array(s["center"]), s["radius"], bool(s.get("learnable", True)))
                for s in sc["spheres"]
            ],
            color_seed=int(sc["color_seed"]),
            color_phases=np.array(sc["color_phases"]),
        )
        validate_unit_bound(scene)
        rg = doc["rig"]
        K = Intrinsics(**rg["intrinsics"])
        rig = CameraRig(
            [_pose_from_dict(p) for p in rg["true_poses"]],
            [_pose_from_dict(p) for p in rg["init_poses"]],
            K,
            np.array(rg["outlier_flags"], dtype=bool),
            radius=float(rg["radius"]),
        )
        matches = None
        if "matches" in doc:
            pairs = {}
            for key, rows in doc["matches"]["pairs"].items():
                i, j = (int(x) for x in key.split(","))
                pairs[(i, j)] = np.array(rows, dtype=float).reshape(-1, 4)
            matches = MatchTable(np.array(doc["matches"]["counts"], dtype=int), pairs)
        return scene, rig, matches
    except (KeyError, TypeError) as exc:
        raise InvalidArgumentError(f"malformed scenario document: {exc!r}") from exc


def save_scenario(path, scene, rig, matches=None):
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scene, rig, matches), fh, sort_keys=True)


def load_scenario(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(str(path), exc.msg, offset=exc.pos) from exc
    return scenario_from_dict(doc)


def save_image_blob(prefix, image: np.ndarray, camera_id: int):
    """Write ``<prefix>.bin`` (row-major float32) and ``<prefix>.json``."""
    arr = np.ascontiguousarray(image, dtype=np.float32)
    with open(f"{prefix}.bin", "wb") as fh:
        fh.write(arr.tobytes())
    header = {
        "width": int(arr.shape[1]),
        "height": int(arr.shape[0]),
        "channels": int(arr.shape[2]),
        "dtype": "float32",
        "camera_id": int(camera_id),
    }
    with open(f"{prefix}.json", "w") as fh:
        json.dump(header, fh, sort_keys=True)


def load_image_blob(prefix):
    try:
        with open(f"{prefix}.json") as fh:
            header = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{prefix}.json", exc.msg, offset=exc.pos) from exc
    shape = (header["height"], header["width"], header["channels"])
    data = np.fromfile(f"{prefix}.bin", dtype=np.float32)
    if data.size != shape[0] * shape[1] * shape[2]:
        raise FileFormatError(
            f"{prefix}.bin", f"expected {shape[0] * shape[1] * shape[2]} float32 values, found {data.size}"
        )
    return data.reshape(shape).astype(float), header
