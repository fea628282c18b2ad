"""Adam with bias correction for lists of parameter matrices."""

from __future__ import annotations

import numpy as np

DEFAULT_LR = 0.005
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8


class GradientBlowupError(RuntimeError):
    """A non-finite adjoint reached the optimizer."""


class AdamState:
    """First/second moment accumulators plus the step counter."""

    def __init__(self, params: list[np.ndarray]):
        self.step = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def adam_update(
    params: list[np.ndarray],
    adjoints: list[np.ndarray],
    state: AdamState,
    lr: float = DEFAULT_LR,
    beta1: float = DEFAULT_BETA1,
    beta2: float = DEFAULT_BETA2,
    eps: float = DEFAULT_EPS,
) -> None:
    """One in-place Adam step over aligned parameter/adjoint lists."""
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, adjoints)):
        if not np.all(np.isfinite(g)):
            raise GradientBlowupError(f"gradient blow-up at step {t} (parameter {i})")
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / (1.0 - beta1**t)
        v_hat = state.v[i] / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
