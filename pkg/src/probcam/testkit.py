"""Self-contained oracles used by the test suite (and shipped so the
acceptance run is a single ``pytest`` invocation).

Everything in here is deliberately written as an *independent* arithmetic
path from the production code it checks:

- :func:`fd_gradient` differentiates any scalar function by central
  differences and flags coordinates that sit near a kink.
- quaternion helpers re-derive rotations without touching the Rodrigues
  code in :mod:`probcam.geometry`.
- :func:`reference_nn` is the exhaustive nearest-neighbour fallback for the
  spatial index used by the evaluation metrics.
- :class:`ReferenceAdam` is a plain-Python scalar Adam used to pin the
  vectorized optimizer.
- :func:`rng_stream` derives named, reproducible RNG streams from one seed.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailureError

# Relative disagreement between the two one-sided slopes above which a
# coordinate is reported as sitting near a kink (|x| at 0 is the canonical
# case: the one-sided slopes are +1 and -1).
KINK_REL_GAP = 0.25


@dataclass
class FDGradient:
    """Result of a finite-difference gradient probe."""

    grad: np.ndarray          # central-difference estimate, shape of x
    kink_mask: np.ndarray     # bool, True where the probes disagree (unreliable)


def fd_gradient(f, x, h: float = 1e-5) -> FDGradient:
    """Central finite-difference gradient of scalar ``f`` at ``x``.

    For every coordinate the forward slope (f(x+h)-f(x))/h and backward slope
    (f(x)-f(x-h))/h are compared; where they disagree badly (sign flip or a
    large relative gap) the coordinate is flagged in ``kink_mask`` so callers
    can exclude it from agreement checks.  Non-finite probe values raise
    :class:`NumericalFailureError`.
    """
    x = np.asarray(x, dtype=float)
    flat = x.ravel().copy()
    grad = np.zeros_like(flat)
    kink = np.zeros(flat.shape, dtype=bool)
    f0 = float(f(flat.reshape(x.shape)))
    if not math.isfinite(f0):
        raise NumericalFailureError("fd_gradient", "objective non-finite at base point")
    for i in range(flat.size):
        xi = flat[i]
        flat[i] = xi + h
        fp = float(f(flat.reshape(x.shape)))
        flat[i] = xi - h
        fm = float(f(flat.reshape(x.shape)))
        flat[i] = xi
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericalFailureError("fd_gradient", f"objective non-finite at probe {i}")
        fwd = (fp - f0) / h
        bwd = (f0 - fm) / h
        grad[i] = (fp - fm) / (2.0 * h)
        scale = max(abs(fwd), abs(bwd))
        if scale > 0.0 and abs(fwd - bwd) > KINK_REL_GAP * scale + 1e-12:
            kink[i] = True
    return FDGradient(grad.reshape(x.shape), kink.reshape(x.shape))


def fd_check(analytic, fd: FDGradient, rel: float, abs_floor: float = 1e-9):
    """Return (ok, worst_rel) comparing ``analytic`` to ``fd`` off-kink."""
    a = np.asarray(analytic, dtype=float).ravel()
    g = fd.grad.ravel()
    mask = ~fd.kink_mask.ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(g)), abs_floor / rel)
    err = np.abs(a - g) / denom
    err = err[mask]
    worst = float(err.max()) if err.size else 0.0
    return worst <= rel, worst


# ---------------------------------------------------------------------------
# Quaternion oracle (independent of the Rodrigues path in probcam.geometry)
# ---------------------------------------------------------------------------

def quat_from_axis_angle(r) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation vector."""
    r = np.asarray(r, dtype=float)
    theta = float(np.linalg.norm(r))
    if theta < 1e-30:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = r / theta
    half = 0.5 * theta
    return np.concatenate(([math.cos(half)], math.sin(half) * axis))


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector ``v`` by unit quaternion ``q`` via q * (0,v) * conj(q)."""
    v = np.asarray(v, dtype=float)
    qv = np.concatenate(([0.0], v))
    qc = q * np.array([1.0, -1.0, -1.0, -1.0])
    return quat_mul(quat_mul(q, qv), qc)[1:]


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


# ---------------------------------------------------------------------------
# Exhaustive nearest neighbour
# ---------------------------------------------------------------------------

def reference_nn(queries, points, p: int = 1):
    """Exhaustive nearest-neighbour search, ties broken by lowest index.

    Returns (distances, indices) for each query under the Minkowski-p metric
    (p=1 or p=2).  O(M*N) on purpose; this is the oracle.
    """
    queries = np.asarray(queries, dtype=float)
    points = np.asarray(points, dtype=float)
    dists = np.empty(len(queries))
    idx = np.empty(len(queries), dtype=int)
    for k, q in enumerate(queries):
        diff = np.abs(points - q)
        d = diff.sum(axis=1) if p == 1 else np.sqrt((diff ** 2).sum(axis=1))
        # argmin returns the first (lowest-index) minimiser, which is the tie rule
        idx[k] = int(np.argmin(d))
        dists[k] = d[idx[k]]
    return dists, idx


# ---------------------------------------------------------------------------
# Reference Adam (scalar, plain Python floats)
# ---------------------------------------------------------------------------

@dataclass
class ReferenceAdam:
    """Textbook Adam on one scalar, used to pin the vectorized optimizer."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: float = 0.0
    v: float = 0.0
    t: int = 0

    def step(self, x: float, g: float) -> float:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return x - self.lr * m_hat / (math.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# Analytic ray-sphere first hit (sharp-limit rendering oracle)
# ---------------------------------------------------------------------------

def ray_sphere_first_hit(origins, dirs, centers, radii, t_near: float, t_far: float):
    """Smallest intersection parameter in [t_near, t_far] over all spheres.

    ``origins``/``dirs`` are (B, 3) with unit directions; returns
    (hit (B,) bool, t_hit (B,), margin (B,)).  ``margin`` is the smallest
    |closest-approach distance - radius| over spheres: rays with a tiny
    margin graze a silhouette, where the sharp-limit color is genuinely
    discontinuous and no tolerance applies.
    """
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    radii = np.asarray(radii, dtype=float).reshape(-1)
    B = len(origins)
    t_hit = np.full(B, np.inf)
    margin = np.full(B, np.inf)
    for c, r in zip(centers, radii):
        oc = origins - c                          # (B, 3)
        b = np.einsum("bi,bi->b", oc, dirs)       # since ||d|| = 1
        cc = np.einsum("bi,bi->b", oc, oc) - r * r
        disc = b * b - cc
        # closest-approach distance to the sphere surface
        d_perp = np.sqrt(np.maximum(np.einsum("bi,bi->b", oc, oc) - b * b, 0.0))
        margin = np.minimum(margin, np.abs(d_perp - r))
        ok = disc > 0.0
        sq = np.sqrt(np.maximum(disc, 0.0))
        for root in (-b - sq, -b + sq):
            valid = ok & (root >= t_near) & (root <= t_far)
            t_hit[valid] = np.minimum(t_hit[valid], root[valid])
    hit = np.isfinite(t_hit)
    return hit, t_hit, margin


# ---------------------------------------------------------------------------
# Seeded RNG streams
# ---------------------------------------------------------------------------

def rng_stream(seed: int, label: str) -> np.random.Generator:
    """A named, reproducible PCG64 stream derived from (seed, label).

    Distinct labels give statistically independent streams; the same
    (seed, label) pair always gives the same stream.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(label.encode())]))
