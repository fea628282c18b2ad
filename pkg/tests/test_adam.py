"""Adam update rule against hand-computed steps and a known minimizer."""

import numpy as np
import pytest

from rep4ex.numcore import AdamState, GradientBlowupError, adam_update


def test_first_step_is_lr_times_normalized_gradient():
    # After bias correction the first step is lr * g / (|g| + eps).
    w = np.array([[1.0, -2.0]])
    g = np.array([[0.3, -0.7]])
    state = AdamState([w])
    adam_update([w], [g.copy()], state, lr=0.01)
    expected = np.array([[1.0, -2.0]]) - 0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(w, expected, atol=1e-12)
    assert state.step == 1


def test_constant_gradient_step_approaches_lr_sign():
    w = np.array([[0.0]])
    g = np.array([[2.5]])
    state = AdamState([w])
    prev = w.copy()
    for _ in range(200):
        prev = w.copy()
        adam_update([w], [g.copy()], state, lr=0.05)
    last_step = float(prev[0, 0] - w[0, 0])
    assert last_step == pytest.approx(0.05, rel=1e-6)


def test_minimizes_shifted_quadratic():
    # min (w - 5)^2 from w = 0: 500 steps at lr 0.05 land within 0.01.
    w = np.array([[0.0]])
    state = AdamState([w])
    for _ in range(500):
        grad = 2.0 * (w - 5.0)
        adam_update([w], [grad], state, lr=0.05)
    assert abs(w[0, 0] - 5.0) < 0.01


def test_updates_are_in_place_and_aligned():
    w1 = np.zeros((2, 2))
    w2 = np.zeros((1, 3))
    keep1, keep2 = w1, w2
    state = AdamState([w1, w2])
    adam_update([w1, w2], [np.ones((2, 2)), -np.ones((1, 3))], state)
    assert keep1 is w1 and keep2 is w2
    assert np.all(w1 < 0.0) and np.all(w2 > 0.0)


def test_nonfinite_gradient_raises_with_step_index():
    w = np.zeros((1, 1))
    state = AdamState([w])
    adam_update([w], [np.ones((1, 1))], state)
    with pytest.raises(GradientBlowupError, match="step 2"):
        adam_update([w], [np.array([[np.nan]])], state)


def test_moments_follow_the_recursions():
    w = np.array([[0.0]])
    state = AdamState([w])
    g1, g2 = np.array([[1.0]]), np.array([[-3.0]])
    adam_update([w], [g1.copy()], state, lr=0.001)
    adam_update([w], [g2.copy()], state, lr=0.001)
    m = 0.9 * (0.1 * 1.0) + 0.1 * (-3.0)
    v = 0.999 * (0.001 * 1.0) + 0.001 * 9.0
    assert state.m[0][0, 0] == pytest.approx(m, abs=1e-15)
    assert state.v[0][0, 0] == pytest.approx(v, abs=1e-15)
