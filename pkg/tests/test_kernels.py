"""Bandwidth heuristic, Gaussian Gram matrices, and the restriction statistic."""

import numpy as np
import pytest

from conftest import central_difference, relative_error
from rep4ex.kernels import (
    DegenerateSampleError,
    KernelSpec,
    gram,
    median_heuristic,
    mmr_gradient,
    mmr_statistic,
)
from rep4ex.numcore import RngStream


def test_median_heuristic_two_points():
    points = np.array([[0.0, 0.0], [3.0, 0.0]])
    assert median_heuristic(points) == pytest.approx(3.0, abs=1e-15)


def test_median_heuristic_three_collinear_points():
    # Pairwise distances {1, 1, 2}; the median is 1.
    points = np.array([[0.0], [1.0], [2.0]])
    assert median_heuristic(points) == pytest.approx(1.0, abs=1e-15)


def test_median_heuristic_scales_linearly():
    rng = np.random.default_rng(0)
    points = rng.standard_normal((50, 3))
    assert median_heuristic(4.0 * points) == pytest.approx(
        4.0 * median_heuristic(points), rel=1e-12)


def test_median_heuristic_subsample_is_deterministic():
    rng = np.random.default_rng(1)
    points = rng.standard_normal((3000, 2))
    b1 = median_heuristic(points)
    b2 = median_heuristic(points)
    assert b1 == b2
    full = float(np.median(np.linalg.norm(
        points[None, :2000] - points[:2000, None], axis=-1)[
            np.triu_indices(2000, 1)]))
    # Subsampled estimate sits near the population value.
    assert abs(b1 - full) / full < 0.05


def test_median_heuristic_rejects_degenerate_samples():
    with pytest.raises(DegenerateSampleError):
        median_heuristic(np.zeros((10, 2)))
    with pytest.raises(ValueError):
        median_heuristic(np.zeros((1, 2)))


def test_kernel_spec_validates_bandwidth():
    with pytest.raises(ValueError):
        KernelSpec(0.0)
    with pytest.raises(ValueError):
        KernelSpec(-1.0)


def test_gram_entries_and_symmetry():
    points = np.array([[0.0], [1.0], [3.0]])
    k = gram(points, KernelSpec(2.0))
    assert np.allclose(np.diag(k), 1.0)
    assert k[0, 1] == pytest.approx(np.exp(-1.0 / 8.0), abs=1e-15)
    assert k[0, 2] == pytest.approx(np.exp(-9.0 / 8.0), abs=1e-15)
    assert np.array_equal(k, k.T)


def test_gram_is_positive_semidefinite():
    rng = np.random.default_rng(2)
    points = rng.standard_normal((60, 2))
    k = gram(points, KernelSpec(median_heuristic(points)))
    eigs = np.linalg.eigvalsh(k)
    assert eigs.min() > -1e-10


def _brute_force_statistic(residuals, kernel):
    n, d = residuals.shape
    total = 0.0
    for i in range(n):
        for j in range(n):
            dot = 0.0
            for c in range(d):
                dot += residuals[i, c] * residuals[j, c]
            total += kernel[i, j] * dot
    return total / (n * n)


def test_statistic_matches_brute_force():
    for seed in range(8):
        stream = RngStream(seed)
        n = 5 + seed * 3
        d = 1 + seed % 3
        points = stream.standard_normal((n, 2))
        residuals = stream.standard_normal((n, d))
        k = gram(points, KernelSpec(median_heuristic(points)))
        fast = mmr_statistic(residuals, k)
        brute = _brute_force_statistic(residuals, k)
        assert abs(fast - brute) <= 1e-12 * max(1.0, abs(brute))


def test_statistic_is_nonnegative_for_psd_kernels():
    for seed in range(20):
        stream = RngStream(1000 + seed)
        points = stream.standard_normal((30, 1))
        residuals = 3.0 * stream.standard_normal((30, 2))
        k = gram(points, KernelSpec(median_heuristic(points)))
        assert mmr_statistic(residuals, k) >= -1e-12


def test_statistic_vanishes_on_zero_residuals():
    points = np.linspace(0.0, 1.0, 10).reshape(-1, 1)
    k = gram(points, KernelSpec(1.0))
    assert mmr_statistic(np.zeros((10, 3)), k) == 0.0


def test_gradient_matches_finite_differences():
    stream = RngStream(7)
    points = stream.standard_normal((12, 2))
    residuals = stream.standard_normal((12, 2))
    k = gram(points, KernelSpec(median_heuristic(points)))
    analytic = mmr_gradient(residuals, k)
    fd = central_difference(lambda r: mmr_statistic(r, k), residuals.copy())
    assert relative_error(analytic, fd) < 1e-8


def test_statistic_rejects_mismatched_kernel():
    with pytest.raises(ValueError):
        mmr_statistic(np.ones((5, 1)), np.ones((4, 4)))
