"""Gaussian kernel machinery and the closed-form moment-restriction statistic.

The statistic ``mmr_statistic(R, K) = (1/n^2) * sum_ij K_ij <r_i, r_j>`` is the
plug-in V-statistic of the kernelized conditional moment restriction on the
regression residuals R; it is nonnegative whenever K is positive semidefinite
and vanishes exactly when the restriction holds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from rep4ex.numcore.rng import RngStream

MEDIAN_SUBSAMPLE = 2000
_DEFAULT_SUBSAMPLE_STREAM = ("median-heuristic", 0)


class DegenerateSampleError(RuntimeError):
    """All pairwise distances are zero; no bandwidth can be formed."""


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel k(a, a') = exp(-||a - a'||^2 / (2 * bandwidth^2))."""

    bandwidth: float
    kind: str = "gaussian"

    def __post_init__(self):
        if self.bandwidth <= 0.0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")


def median_heuristic(points: np.ndarray, stream: RngStream | None = None) -> float:
    """Median pairwise Euclidean distance of the rows of ``points``.

    Samples of more than ``MEDIAN_SUBSAMPLE`` rows are subsampled without
    replacement first (deterministically; pass ``stream`` to control the
    draw).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError("median_heuristic needs a 2-D sample with at least two rows")
    n = points.shape[0]
    if n > MEDIAN_SUBSAMPLE:
        if stream is None:
            stream = RngStream(0).derive(*_DEFAULT_SUBSAMPLE_STREAM)
        idx = stream.choice(n, MEDIAN_SUBSAMPLE, replace=False)
        points = points[np.sort(idx)]
    bandwidth = float(np.median(pdist(points)))
    if bandwidth <= 0.0:
        raise DegenerateSampleError("degenerate sample: median pairwise distance is zero")
    return bandwidth


def gram(points: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """n x n Gaussian kernel matrix over the rows of ``points``."""
    points = np.asarray(points, dtype=np.float64)
    sq = cdist(points, points, "sqeuclidean")
    return np.exp(-sq / (2.0 * spec.bandwidth**2))


def mmr_statistic(residuals: np.ndarray, kernel: np.ndarray) -> float:
    """(1/n^2) * trace(R^T K R), computed column by column as quadratic forms."""
    residuals = np.asarray(residuals, dtype=np.float64)
    n = residuals.shape[0]
    if kernel.shape != (n, n):
        raise ValueError(f"kernel shape {kernel.shape} incompatible with residuals {residuals.shape}")
    return float(np.sum(residuals * (kernel @ residuals)) / (n * n))


def mmr_gradient(residuals: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """d(mmr_statistic)/dR = (2/n^2) * K @ R for symmetric K."""
    n = residuals.shape[0]
    return (2.0 / (n * n)) * (kernel @ residuals)
