"""Camera geometry: axis-angle rotations, camera-to-world poses, pinhole rays.

Conventions, fixed across the whole package:

- Frames are right-handed.  A pose is **camera-to-world**: ``t`` is the camera
  center in world coordinates and the optical axis is ``R @ [0, 0, 1]``.
- The camera frame has +x right, +y down (image row direction), +z forward.
- Rotations are stored as rotation vectors r = angle * unit_axis (radians).
  Pose updates during optimization are *additive* in this parameterization;
  vectors are only renormalized to magnitude <= pi when exported.
- Pixel coordinates (u, v) are continuous with u in [0, width) and
  v in [0, height); the center of integer pixel (col, row) is
  (col + 0.5, row + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, InvalidArgumentError

# Below this rotation-vector magnitude, Rodrigues' formula is replaced by its
# second-order Taylor expansion to avoid 0/0 in the sin/cos coefficient terms.
ROTATION_TAYLOR_EPS = 1e-8

# Threshold on |depth| below which projection is refused (point on the plane
# through the camera center, parallel to the image plane).
PROJECTION_DEPTH_EPS = 1e-9

_IDENTITY3 = np.eye(3)


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v]_x with [v]_x @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_to_matrix(r: np.ndarray) -> np.ndarray:
    """Rodrigues' formula R = I + sin(t)/t [r]_x + (1-cos(t))/t^2 [r]_x^2.

    For ||r|| < ROTATION_TAYLOR_EPS the coefficient functions are replaced by
    their second-order Taylor expansions (1 - t^2/6, 1/2 - t^2/24).
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (3,):
        raise InvalidArgumentError(f"rotation vector must have shape (3,), got {r.shape}")
    theta2 = float(r @ r)
    theta = math.sqrt(theta2)
    K = skew(r)
    if theta < ROTATION_TAYLOR_EPS:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta2
    return _IDENTITY3 + a * K + b * (K @ K)


def axis_angle_jacobian(r: np.ndarray) -> np.ndarray:
    """Stack of partial derivatives dR/dr_a, shape (3, 3, 3) indexed [a, i, j].

    Uses the closed form
        dR/dr_a = ( r_a [r]_x + [ r x ((I - R) e_a) ]_x ) / ||r||^2  @ R
    with the small-angle limit dR/dr_a -> [e_a]_x as r -> 0.
    """
    r = np.asarray(r, dtype=float)
    theta2 = float(r @ r)
    R = axis_angle_to_matrix(r)
    out = np.empty((3, 3, 3))
    if theta2 < 1e-14:
        # First-order expansion about r: exact at r = 0, error O(||r||).
        K = skew(r)
        for a in range(3):
            Ea = skew(_IDENTITY3[a])
            out[a] = Ea + 0.5 * (Ea @ K + K @ Ea)
        return out
    ImR = _IDENTITY3 - R
    for a in range(3):
        v = np.cross(r, ImR[:, a])
        out[a] = ((r[a] * skew(r) + skew(v)) / theta2) @ R
    return out


def matrix_to_axis_angle(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`axis_angle_to_matrix`; returns the magnitude <= pi vector."""
    R = np.asarray(R, dtype=float)
    tr = float(np.trace(R))
    cos_theta = max(-1.0, min(1.0, (tr - 1.0) / 2.0))
    theta = math.acos(cos_theta)
    if theta < 1e-10:
        # R ~ I + [r]_x ; read the vector off the antisymmetric part.
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta > math.pi - 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from the
        # dominant column of R + I (which equals 2 axis axis^T near theta=pi).
        M = R + _IDENTITY3
        col = int(np.argmax(np.diag(M)))
        axis = M[:, col]
        axis = axis / np.linalg.norm(axis)
        # Fix the sign using the antisymmetric part where it is non-zero.
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if w @ axis < 0.0:
            axis = -axis
        return theta * axis
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return (theta / (2.0 * math.sin(theta))) * w


def canonicalize_axis_angle(r: np.ndarray) -> np.ndarray:
    """Map r to the equivalent vector with magnitude in [0, pi]."""
    r = np.asarray(r, dtype=float)
    theta = float(np.linalg.norm(r))
    if theta <= math.pi:
        return r.copy()
    wrapped = math.fmod(theta, 2.0 * math.pi)
    if wrapped > math.pi:
        wrapped -= 2.0 * math.pi  # negative: flip through the antipode
    return r * (wrapped / theta)


def rotation_geodesic_deg(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees."""
    tr = float(np.trace(Ra @ Rb.T))
    cos_theta = max(-1.0, min(1.0, (tr - 1.0) / 2.0))
    return math.degrees(math.acos(cos_theta))


# ---------------------------------------------------------------------------
# Poses, intrinsics, rays
# ---------------------------------------------------------------------------

@dataclass
class PoseMean:
    """Camera-to-world pose: rotation vector ``r`` and camera center ``t``."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float).reshape(3)
        self.t = np.asarray(self.t, dtype=float).reshape(3)
        if not (np.isfinite(self.r).all() and np.isfinite(self.t).all()):
            raise InvalidArgumentError("pose contains non-finite entries")

    @property
    def rotation(self) -> np.ndarray:
        return axis_angle_to_matrix(self.r)

    def canonicalized(self) -> "PoseMean":
        return PoseMean(canonicalize_axis_angle(self.r), self.t.copy())


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics shared by every camera of a rig."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgumentError("image dimensions must be positive")
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0.0 <= self.cx <= self.width and 0.0 <= self.cy <= self.height):
            raise InvalidArgumentError("principal point must lie inside the image")


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit norm


def pixel_to_camera_dirs(K: Intrinsics, pixels: np.ndarray) -> np.ndarray:
    """Unnormalized camera-frame directions ((u-cx)/fx, (v-cy)/fy, 1) per pixel."""
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    u, v = pixels[:, 0], pixels[:, 1]
    if ((u < 0) | (u >= K.width) | (v < 0) | (v >= K.height)).any():
        raise InvalidArgumentError("pixel coordinates outside image bounds")
    d = np.empty((len(pixels), 3))
    d[:, 0] = (u - K.cx) / K.fx
    d[:, 1] = (v - K.cy) / K.fy
    d[:, 2] = 1.0
    return d


def generate_rays(pose: PoseMean, K: Intrinsics, pixels: np.ndarray):
    """World-space rays through the given pixels.

    Returns (origins (B,3), unit directions (B,3)).  Origins are all at the
    camera center; directions are normalize(R @ k) with k the camera-frame
    pixel direction.
    """
    k = pixel_to_camera_dirs(K, pixels)
    R = axis_angle_to_matrix(np.asarray(pose.r, dtype=float))
    d_world = k @ R.T
    norms = np.linalg.norm(d_world, axis=1, keepdims=True)
    d_unit = d_world / norms
    origins = np.broadcast_to(np.asarray(pose.t, dtype=float), d_unit.shape).copy()
    return origins, d_unit


def generate_ray(pose: PoseMean, K: Intrinsics, pixel) -> Ray:
    origins, dirs = generate_rays(pose, K, np.asarray(pixel, dtype=float).reshape(1, 2))
    return Ray(origins[0], dirs[0])


def project(pose: PoseMean, K: Intrinsics, point: np.ndarray):
    """Project a world point; returns ((u, v), depth).

    Depth is the camera-frame z coordinate, reported with its sign; points
    with |depth| < PROJECTION_DEPTH_EPS raise DegenerateGeometryError.
    """
    uv, depth = project_batch(pose, K, np.asarray(point, dtype=float).reshape(1, 3))
    return uv[0], float(depth[0])


def project_batch(pose: PoseMean, K: Intrinsics, points: np.ndarray):
    """Vectorized :func:`project`; returns (uv (B,2), depth (B,))."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    R = axis_angle_to_matrix(np.asarray(pose.r, dtype=float))
    Xc = (points - np.asarray(pose.t, dtype=float)) @ R  # == R.T @ (X - t), row-wise
    depth = Xc[:, 2]
    if (np.abs(depth) < PROJECTION_DEPTH_EPS).any():
        raise DegenerateGeometryError("point lies on the camera plane (|depth| < 1e-9)")
    uv = np.empty((len(points), 2))
    uv[:, 0] = K.fx * Xc[:, 0] / depth + K.cx
    uv[:, 1] = K.fy * Xc[:, 1] / depth + K.cy
    return uv, depth


def look_at_pose(center: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> PoseMean:
    """Camera-to-world pose at ``center`` looking at ``target``.

    The image +y (down) direction is chosen so that world ``up`` points up in
    the image; when the optical axis is parallel to ``up`` a fixed fallback
    axis is used instead.
    """
    center = np.asarray(center, dtype=float)
    target = np.asarray(target, dtype=float)
    fwd = target - center
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise DegenerateGeometryError("look-at target coincides with camera center")
    fwd = fwd / n
    up = np.asarray(up, dtype=float)
    down = -(up - (up @ fwd) * fwd)
    dn = np.linalg.norm(down)
    if dn < 1e-9:  # looking straight along 'up': pick an arbitrary stable axis
        alt = np.array([1.0, 0.0, 0.0])
        down = -(alt - (alt @ fwd) * fwd)
        dn = np.linalg.norm(down)
    down = down / dn
    right = np.cross(down, fwd)
    R = np.stack([right, down, fwd], axis=1)
    return PoseMean(matrix_to_axis_angle(R), center)
