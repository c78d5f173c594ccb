"""Per-camera confidence: a static, match-derived prior blended with a
dynamic, rendering-quality estimate.

Static part: eta_i is the mean match count of camera i over its co-visible
neighbors; min-max normalization (with a 1e-5 guard against a flat field)
plus a 1e-3 floor produces the prior gamma0.

Dynamic part: every step that renders camera i pushes the batch PSNR
(10 * log10(1 / mse), mse floored at 1e-10, peak value 1.0) into a FIFO
buffer of capacity 100.  On update, cameras with non-empty buffers get
gamma_hat = min-max normalized mean buffer PSNR and the blend
gamma = (1 - alpha) * gamma0 + alpha * gamma_hat with alpha = 0.7, clamped to
[0, 1].  Cameras that were never rendered keep gamma = gamma0; if only a
single camera has data, its min-max is degenerate and it also keeps gamma0.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .probpose import GAMMA_FLOOR

MINMAX_EPS = 1e-5
MSE_FLOOR = 1e-10
BUFFER_CAPACITY = 100
BLEND_ALPHA = 0.7


def static_reliability(counts: np.ndarray) -> np.ndarray:
    """eta_i = mean over co-visible neighbors j of counts[i, j] (0 if none)."""
    counts = np.asarray(counts, dtype=float)
    eta = np.zeros(len(counts))
    for i, row in enumerate(counts):
        nz = row[row > 0]
        if len(nz):
            eta[i] = nz.mean()
    return eta


def normalize_confidence(eta: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1] and floor at GAMMA_FLOOR.

    A flat field (max == min) maps everyone to the floor rather than
    dividing by zero -- no camera is more reliable than another.
    """
    eta = np.asarray(eta, dtype=float)
    lo, hi = eta.min(), eta.max()
    g = (eta - lo) / (hi - lo + MINMAX_EPS)
    return np.maximum(g, GAMMA_FLOOR)


def psnr_from_mse(mse: float) -> float:
    """PSNR against peak value 1.0, with the MSE floored at 1e-10."""
    return 10.0 * math.log10(1.0 / max(float(mse), MSE_FLOOR))


@dataclass
class ConfidenceTracker:
    """Holds gamma0, the PSNR buffers and the current blended gamma."""

    gamma0: np.ndarray
    alpha: float = BLEND_ALPHA
    capacity: int = BUFFER_CAPACITY
    buffers: list = field(default_factory=list)
    gamma: np.ndarray = None
    gamma_hat: np.ndarray = None   # last dynamic estimate (NaN where unset)
    frozen: bool = False           # ablation: gamma pinned to gamma0 forever

    def __post_init__(self):
        self.gamma0 = np.asarray(self.gamma0, dtype=float)
        if ((self.gamma0 < 0.0) | (self.gamma0 > 1.0)).any():
            raise InvalidArgumentError("gamma0 must lie in [0, 1]")
        if not self.buffers:
            self.buffers = [deque(maxlen=self.capacity) for _ in self.gamma0]
        if self.gamma is None:
            self.gamma = self.gamma0.copy()
        if self.gamma_hat is None:
            self.gamma_hat = np.full(len(self.gamma0), np.nan)

    @property
    def n_cameras(self) -> int:
        return len(self.gamma0)

    def record_psnr(self, cam: int, mse: float):
        self.buffers[cam].append(psnr_from_mse(mse))

    def update_dynamic(self) -> np.ndarray:
        """Recompute the blended gamma from the current buffers."""
        if self.frozen:
            return self.gamma
        filled = [i for i, b in enumerate(self.buffers) if len(b)]
        if len(filled) >= 2:
            means = np.array([float(np.mean(self.buffers[i])) for i in filled])
            lo, hi = means.min(), means.max()
            ghat = (means - lo) / (hi - lo + MINMAX_EPS)
            for i, g in zip(filled, ghat):
                self.gamma_hat[i] = g
                self.gamma[i] = float(
                    np.clip((1.0 - self.alpha) * self.gamma0[i] + self.alpha * g, 0.0, 1.0)
                )
        # With zero or one informative camera the min-max is degenerate:
        # affected cameras keep their static prior.
        return self.gamma
