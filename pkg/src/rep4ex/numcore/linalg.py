"""Ridge-stabilized normal-equation least squares.

Design matrices here are tiny (at most a dozen columns), so normal equations
with a trace-scaled ridge are both fast and well conditioned, and keep the
projection onto the residual space an explicit linear map (see
:func:`annihilator`), which is what lets gradients flow through per-batch
regressions without differentiating the coefficient solve.
"""

from __future__ import annotations

import numpy as np

RIDGE_SCALE = 1e-10


class DegenerateDesignError(RuntimeError):
    """Gram matrix is not positive definite even after the ridge."""


def _gram_with_ridge(design: np.ndarray) -> np.ndarray:
    gram = design.T @ design
    return gram + RIDGE_SCALE * np.trace(gram) * np.eye(gram.shape[0])


def least_squares_fit(design: np.ndarray, targets: np.ndarray):
    """Solve min ||design @ coef - targets||^2 via ridged normal equations.

    ``design`` is n x (k+1) with a leading ones column, ``targets`` is n x d.
    Returns ``(coef, residuals)`` with coef (k+1) x d.
    """
    design = np.asarray(design, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if design.shape[0] <= design.shape[1]:
        raise DegenerateDesignError(
            f"degenerate design: n={design.shape[0]} rows for {design.shape[1]} columns"
        )
    gram = _gram_with_ridge(design)
    try:
        np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise DegenerateDesignError("degenerate design: Gram matrix not positive definite") from None
    coef = np.linalg.solve(gram, design.T @ targets)
    residuals = targets - design @ coef
    return coef, residuals


def annihilator(design: np.ndarray) -> np.ndarray:
    """The matrix P with P @ targets = least-squares residuals; depends on design only."""
    design = np.asarray(design, dtype=np.float64)
    gram = _gram_with_ridge(design)
    try:
        np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise DegenerateDesignError("degenerate design: Gram matrix not positive definite") from None
    return np.eye(design.shape[0]) - design @ np.linalg.solve(gram, design.T)


def residual_factors(design: np.ndarray):
    """Factors (design, E) of the residual map I - design @ E, avoiding the n x n matrix.

    ``residuals = targets - design @ (E @ targets)`` reproduces
    ``annihilator(design) @ targets`` exactly.
    """
    design = np.asarray(design, dtype=np.float64)
    gram = _gram_with_ridge(design)
    try:
        np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise DegenerateDesignError("degenerate design: Gram matrix not positive definite") from None
    return design, np.linalg.solve(gram, design.T)
