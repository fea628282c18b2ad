"""Shared test helpers: finite differences and tiny training configs."""

import numpy as np

from rep4ex.models import TrainConfig


def central_difference(f, x, h=1e-5):
    """Elementwise central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f(x)
        flat[i] = keep - h
        down = f(x)
        flat[i] = keep
        out[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic, reference):
    """Max elementwise |a - r| / max(|a|, |r|, 1)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(reference)))
    return float(np.max(np.abs(analytic - reference) / scale))


def tiny_config(**overrides):
    """Small architecture and epoch count so unit tests stay fast."""
    base = dict(epochs=60, batch_size=64, hidden=(16, 16))
    base.update(overrides)
    return TrainConfig(**base)
