"""Volumetric distribution alignment: soft-IoU between voxelized
mixture-of-Gaussians densities of two rays' sample points.

For a matched pixel pair, each ray contributes its top-k compositing weights
(ties broken toward smaller depth), renormalized to sum to one.  Both point
sets are splatted onto a shared R^3 voxel grid as isotropic Gaussians of
bandwidth sigma_g = 6 / R (world units): voxel value

    D(v) = sum_k w_k * exp(-||v - p_k||^2 / (2 sigma_g^2)),

with each point's contribution truncated beyond 3 sigma_g per axis (an
axis-aligned box: it keeps everything a Euclidean ball would keep, admits only
corner values below e^-4.5 of the peak, and factorizes the splat into three
1-D Gaussians).  The grid covers the union bounding box of both point sets padded
by 3 sigma_g on every side, so no in-set point is ever edge-clipped; a
degenerate bbox still yields a cube of side 6 sigma_g.

The alignment loss is  L = 1 - sum min(D_a, D_b) / (sum max(D_a, D_b) + 1e-8),
zero for identical densities, one for disjoint supports.  The backward pass
differentiates through the kernel values, the weight renormalization AND the
bbox-dependent voxel centers (min/max over point coordinates route gradient
to the extremal points), so translating both point sets together leaves the
loss exactly unchanged.  Top-k selection and truncation masks are treated as
frozen: their switch points are kinks, which is why the finite-difference
tolerance for this loss is looser than for the photometric path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyRayError, InvalidArgumentError

IOU_EPS = 1e-8
TRUNCATION_SIGMAS = 3.0
DEFAULT_TOP_K = 8
DEFAULT_RESOLUTION = 64


def grid_sigma(resolution: int) -> float:
    """Kernel bandwidth sigma_g = 6 / R in world units."""
    if resolution < 2:
        raise InvalidArgumentError("grid resolution must be at least 2")
    return 6.0 / resolution


@dataclass
class GridGeometry:
    box_lo: np.ndarray    # (3,)
    box_hi: np.ndarray    # (3,)
    resolution: int
    sigma: float

    @property
    def spacing(self) -> np.ndarray:
        return (self.box_hi - self.box_lo) / self.resolution

    def axis_centers(self, axis: int) -> np.ndarray:
        sp = self.spacing[axis]
        return self.box_lo[axis] + (np.arange(self.resolution) + 0.5) * sp

    def same_as(self, other: "GridGeometry") -> bool:
        return (
            self.resolution == other.resolution
            and self.sigma == other.sigma
            and np.array_equal(self.box_lo, other.box_lo)
            and np.array_equal(self.box_hi, other.box_hi)
        )


@dataclass
class WeightedPointSet:
    points: np.ndarray    # (k, 3)
    weights: np.ndarray   # (k,), non-negative, sum 1

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.points) != len(self.weights):
            raise InvalidArgumentError("points/weights length mismatch")
        if (self.weights < -1e-12).any():
            raise InvalidArgumentError("weights must be non-negative")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError("weights must sum to 1 (renormalize first)")


@dataclass
class VoxelDensityGrid:
    geometry: GridGeometry
    values: np.ndarray    # (R, R, R)


def top_k_points(weights: np.ndarray, points: np.ndarray, depths: np.ndarray, k: int = DEFAULT_TOP_K):
    """Indices of the k largest weights, ties broken toward smaller depth.

    Raises EmptyRayError when no weight is positive.  The returned
    WeightedPointSet carries the renormalized weights.
    """
    weights = np.asarray(weights, dtype=float)
    if len(weights) < k:
        raise InvalidArgumentError(f"ray has {len(weights)} samples, need >= k = {k}")
    if not (weights > 0.0).any():
        raise EmptyRayError("all compositing weights vanish on this ray")
    order = np.lexsort((np.asarray(depths, dtype=float), -weights))
    idx = np.sort(order[:k])  # keep depth order; selection set is what matters
    w = weights[idx]
    wbar = w / w.sum()
    return idx, WeightedPointSet(np.asarray(points, dtype=float)[idx], wbar)


def build_grid(points_a: np.ndarray, points_b: np.ndarray,
               resolution: int = DEFAULT_RESOLUTION,
               sigma: float | None = None) -> GridGeometry:
    """Shared grid over the union bbox of both sets, padded 3 sigma_g per side.

    ``sigma`` overrides the resolution-derived bandwidth; ``None`` keeps
    ``grid_sigma(resolution)``.
    """
    pts = np.vstack([np.asarray(points_a, dtype=float), np.asarray(points_b, dtype=float)])
    if not np.isfinite(pts).all():
        raise InvalidArgumentError("non-finite point coordinates")
    if sigma is None:
        sigma = grid_sigma(resolution)
    elif sigma <= 0.0:
        raise InvalidArgumentError(f"kernel bandwidth must be positive, got {sigma}")
    pad = TRUNCATION_SIGMAS * sigma
    lo = pts.min(axis=0) - pad
    hi = pts.max(axis=0) + pad
    return GridGeometry(lo, hi, resolution, sigma)


def _axis_kernels(geom: GridGeometry, points: np.ndarray):
    """Per-axis truncated 1-D Gaussians g[axis][k, a] and centered offsets."""
    cut = TRUNCATION_SIGMAS * geom.sigma
    inv_two_s2 = 1.0 / (2.0 * geom.sigma ** 2)
    gs, offs = [], []
    for ax in range(3):
        v = geom.axis_centers(ax)                      # (R,)
        off = v[None, :] - points[:, ax][:, None]      # (k, R)
        g = np.exp(-(off ** 2) * inv_two_s2)
        g[np.abs(off) > cut] = 0.0
        gs.append(g)
        offs.append(off)
    return gs, offs


def voxelize_mog(point_set: WeightedPointSet, geom: GridGeometry) -> VoxelDensityGrid:
    """Splat the weighted points onto the grid (separable truncated Gaussians)."""
    (gx, gy, gz), _ = _axis_kernels(geom, point_set.points)
    wgx = point_set.weights[:, None] * gx
    values = np.einsum("ka,kb,kc->abc", wgx, gy, gz, optimize=True)
    return VoxelDensityGrid(geom, values)


def iou_loss(grid_a: VoxelDensityGrid, grid_b: VoxelDensityGrid) -> float:
    """1 - soft IoU of the two densities; in [0, 1]."""
    if not grid_a.geometry.same_as(grid_b.geometry):
        raise InvalidArgumentError("IoU requires identical grid geometries")
    inter = np.minimum(grid_a.values, grid_b.values).sum()
    union = np.maximum(grid_a.values, grid_b.values).sum()
    return float(1.0 - inter / (union + IOU_EPS))


# ---------------------------------------------------------------------------
# Pair loss with gradients
# ---------------------------------------------------------------------------

def _voxelize_backward(point_set: WeightedPointSet, geom: GridGeometry, dD: np.ndarray):
    """Gradients of sum(dD * D) w.r.t. points, weights and voxel centers.

    Returns (d_points (k,3), d_weights (k,), d_centers_per_axis list of (R,)).
    """
    (gx, gy, gz), (ox, oy, oz) = _axis_kernels(geom, point_set.points)
    w = point_set.weights
    inv_s2 = 1.0 / geom.sigma ** 2
    # Contract dD against two axes at a time.
    dG_x = np.einsum("abc,kb,kc->ka", dD, gy, gz, optimize=True)   # d/d(w*gx)
    wgx = w[:, None] * gx
    dG_y = np.einsum("abc,ka,kc->kb", dD, wgx, gz, optimize=True)
    dG_z = np.einsum("abc,ka,kb->kc", dD, wgx, gy, optimize=True)
    d_weights = (dG_x * gx).sum(axis=1)
    d_points = np.empty((len(w), 3))
    d_centers = []
    for ax, (dG, g, off, wk) in enumerate(
        [(dG_x, gx, ox, w[:, None]), (dG_y, gy, oy, 1.0), (dG_z, gz, oz, 1.0)]
    ):
        # d g / d p = g * off / sigma^2 ; d g / d v = -that
        core = dG * g * off * inv_s2 * wk
        d_points[:, ax] = core.sum(axis=1)
        d_centers.append(-core.sum(axis=0))
    return d_points, d_weights, d_centers


@dataclass
class PairLossGrads:
    """Per-ray upstream gradients produced by the pair loss backward."""

    d_weights_a: np.ndarray   # (n,) full-length, zeros off the top-k
    d_points_a: np.ndarray    # (n, 3)
    d_weights_b: np.ndarray
    d_points_b: np.ndarray


def vda_match_loss(result_a, result_b, k: int = DEFAULT_TOP_K,
                   resolution: int = DEFAULT_RESOLUTION,
                   sigma: float | None = None, with_grads: bool = False):
    """Alignment loss for one matched ray pair.

    ``result_a`` / ``result_b`` are ray render results (``weights``,
    ``points``, ``taus`` attributes).  With ``with_grads`` the return value is
    (loss, PairLossGrads); gradients flow into the selected weights (through
    the renormalization), the selected points, and -- via the bbox -- the
    extremal points of the union cloud.
    """
    idx_a, set_a = top_k_points(result_a.weights, result_a.points, result_a.taus, k)
    idx_b, set_b = top_k_points(result_b.weights, result_b.points, result_b.taus, k)
    geom = build_grid(set_a.points, set_b.points, resolution, sigma=sigma)
    Da = voxelize_mog(set_a, geom).values
    Db = voxelize_mog(set_b, geom).values
    inter = np.minimum(Da, Db).sum()
    union = np.maximum(Da, Db).sum()
    loss = float(1.0 - inter / (union + IOU_EPS))
    if not with_grads:
        return loss

    # d loss / d D through min/max (0.5 at exact ties keeps the swap symmetry)
    d_inter = -1.0 / (union + IOU_EPS)
    d_union = inter / (union + IOU_EPS) ** 2
    a_lt = Da < Db
    b_lt = Db < Da
    tie = ~(a_lt | b_lt)
    dDa = d_inter * (a_lt + 0.5 * tie) + d_union * (b_lt + 0.5 * tie)
    dDb = d_inter * (b_lt + 0.5 * tie) + d_union * (a_lt + 0.5 * tie)

    dp_a, dwbar_a, dcent_a = _voxelize_backward(set_a, geom, dDa)
    dp_b, dwbar_b, dcent_b = _voxelize_backward(set_b, geom, dDb)

    # Voxel centers depend on the union bbox: v_m = (lo - 3s) + (m + .5) h,
    # h = (hi - lo + 6s)/R  =>  dv/dlo = 1 - (m+.5)/R, dv/dhi = (m+.5)/R.
    R = geom.resolution
    frac = (np.arange(R) + 0.5) / R
    all_pts = np.vstack([set_a.points, set_b.points])
    arg_lo = all_pts.argmin(axis=0)
    arg_hi = all_pts.argmax(axis=0)
    d_all = np.zeros_like(all_pts)
    for ax in range(3):
        dv = dcent_a[ax] + dcent_b[ax]
        d_all[arg_lo[ax], ax] += float((dv * (1.0 - frac)).sum())
        d_all[arg_hi[ax], ax] += float((dv * frac).sum())
    ka = len(set_a.points)
    dp_a += d_all[:ka]
    dp_b += d_all[ka:]

    def scatter(n, idx, dwbar, dp, sel_w):
        # renormalization wbar = w / sum(w): dL/dw_m = (dwbar_m - dwbar.wbar)/S
        dw_full = np.zeros(n)
        dx_full = np.zeros((n, 3))
        S = sel_w.sum()
        wbar = sel_w / S
        dw_full[idx] = (dwbar - float(dwbar @ wbar)) / S
        dx_full[idx] = dp
        return dw_full, dx_full

    dw_a, dx_a = scatter(len(result_a.weights), idx_a, dwbar_a, dp_a,
                         np.asarray(result_a.weights, dtype=float)[idx_a])
    dw_b, dx_b = scatter(len(result_b.weights), idx_b, dwbar_b, dp_b,
                         np.asarray(result_b.weights, dtype=float)[idx_b])
    return loss, PairLossGrads(dw_a, dx_a, dw_b, dx_b)


def vda_pair_loss(scene, pose_a, pose_b, K, pixel_pairs, params,
                  k: int = DEFAULT_TOP_K, resolution: int = DEFAULT_RESOLUTION) -> float:
    """Mean alignment loss over matched pixel pairs rendered from two cameras.

    ``pixel_pairs`` is (M, 4) rows [u_a, v_a, u_b, v_b].  Rays whose weights
    all vanish are skipped; if every pair is skipped the loss is 0.
    """
    from . import renderer  # deferred to keep the module dependency one-way

    pairs = np.asarray(pixel_pairs, dtype=float).reshape(-1, 4)
    ra = renderer.render_rays(scene, pose_a, K, pairs[:, 0:2], params)
    rb = renderer.render_rays(scene, pose_b, K, pairs[:, 2:4], params)
    losses = []
    for m in range(len(pairs)):
        res_a = renderer.RayRenderResult(ra.colors[m], ra.weights[m], ra.points[m],
                                         ra.transmittance[m], ra.taus[m], float(ra.accumulated[m]))
        res_b = renderer.RayRenderResult(rb.colors[m], rb.weights[m], rb.points[m],
                                         rb.transmittance[m], rb.taus[m], float(rb.accumulated[m]))
        try:
            losses.append(vda_match_loss(res_a, res_b, k=k, resolution=resolution))
        except EmptyRayError:
            continue
    return float(np.mean(losses)) if losses else 0.0
