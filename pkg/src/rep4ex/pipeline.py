"""End-to-end procedure: representation, control variables, do-estimation.

The full pipeline is

  1. train the penalized autoencoder (plain warm start, then penalized run),
  2. regress the representation on the actions,
  3. keep the regression residuals as control variables,
  4. fit the additive regressor  y ~ structural(rep) + control(ctrl),
  5. answer "what if A were set to a*" by averaging the structural net over
     predicted-representation + control-sample points, minus the fitted
     mean offset.

Also here: the conditional (per-x) estimator, the affine-recovery R^2 metric,
the penalty-weight selection heuristic, the direct action-to-outcome
baseline, and support-disjoint data splits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .models import (
    AdditiveRegressor,
    AutoencoderModel,
    LinearFit,
    TrainConfig,
    fit_additive_regressor,
    reconstruction_mse,
    residual_projection,
    train_autoencoder,
    train_regression_net,
)
from .numcore import RngStream, least_squares_fit
from .scm import Dataset


class DegenerateSplitError(RuntimeError):
    """A requested data split leaves one side too small to be usable."""


EVAL_GRID_POINTS = 121
EVAL_GRID_HALF_WIDTH = 3.0
TEST_INTERVENTION_COUNT = 100
TEST_INTERVENTION_BOX = (-3.0, -1.0)


@dataclass
class Rep4ExModel:
    """Everything the do-estimators need, fitted on one training set."""

    autoencoder: AutoencoderModel | None
    linear_fit: LinearFit
    regressor: AdditiveRegressor
    mean_correction: float
    controls: np.ndarray
    dim_z: int

    def __post_init__(self):
        if not np.isfinite(self.mean_correction):
            raise ValueError("mean correction must be finite")

    def encode(self, x: np.ndarray) -> np.ndarray:
        if self.autoencoder is None:
            raise ValueError("model was fit on oracle latents; it has no encoder")
        return self.autoencoder.encode(x)


@dataclass(frozen=True)
class AffineWitness:
    """Affine map from representation to latent, with its goodness of fit."""

    coef: np.ndarray       # d x d
    intercept: np.ndarray  # 1 x d
    r_squared: float

    def predict(self, rep: np.ndarray) -> np.ndarray:
        return np.atleast_2d(rep) @ self.coef.T + self.intercept


def run_rep4ex(train: Dataset, dim_z: int, mmr_weight: float,
               stream: RngStream, config: TrainConfig = TrainConfig(),
               oracle_latents: np.ndarray | None = None,
               autoencoder: AutoencoderModel | None = None) -> Rep4ExModel:
    """Fit the full pipeline on one training set.

    ``oracle_latents`` (n x d) replaces the learned representation with a
    known latent sample; the autoencoder stage is skipped entirely.
    ``autoencoder`` short-circuits the encoder training with a model that is
    already fitted, e.g. the winner of a ``choose_lambda`` sweep.
    """
    if train.y is None:
        raise ValueError("training data must include the outcome column")
    if oracle_latents is not None:
        rep = np.asarray(oracle_latents, dtype=np.float64)
        autoencoder = None
    elif autoencoder is not None:
        rep = autoencoder.encode(train.x)
    else:
        plain = train_autoencoder(train, dim_z, 0.0,
                                  stream.derive("ae-plain"), config)
        if mmr_weight > 0.0:
            autoencoder = train_autoencoder(train, dim_z, mmr_weight,
                                            stream.derive("ae-penalized"),
                                            config, init=plain)
        else:
            autoencoder = plain
        rep = autoencoder.encode(train.x)
    linear_fit, controls = residual_projection(rep, train.a)
    regressor = fit_additive_regressor(rep, controls, train.y,
                                       stream.derive("regressor"), config)
    mean_correction = float(np.mean(regressor.structural_value(rep))
                            - np.mean(train.y))
    return Rep4ExModel(autoencoder=autoencoder, linear_fit=linear_fit,
                       regressor=regressor, mean_correction=mean_correction,
                       controls=controls, dim_z=rep.shape[1])


def estimate_do(model: Rep4ExModel, a_star: np.ndarray,
                controls: np.ndarray | None = None) -> float:
    """Mean outcome if the action were set to a_star.

    Averages the structural net over predicted-representation + control
    points and subtracts the fitted mean offset, so any constant the
    additive fit moved between its two subnets cancels.
    """
    ctrl = model.controls if controls is None else controls
    base = model.linear_fit.predict(a_star)
    vals = model.regressor.structural_value(base + ctrl)
    return float(np.mean(vals)) - model.mean_correction


def estimate_do_given_x(model: Rep4ExModel, x: np.ndarray, a_star: np.ndarray):
    """Expected outcome under do(A = a_star) for the unit that produced x.

    Uses the unit's own representation as the control anchor:
    structural(rep) + control(rep - predicted rep at a_star).
    Scalar for a single row, 1-D array for a batch.
    """
    single = np.asarray(x).ndim == 1
    rep = model.encode(np.atleast_2d(x))
    shift = rep - model.linear_fit.predict(a_star)
    out = model.regressor.structural_value(rep) \
        + model.regressor.control_value(shift)
    return float(out[0, 0]) if single else out[:, 0]


def r_squared_affine(encode: Callable[[np.ndarray], np.ndarray],
                     data: Dataset) -> AffineWitness:
    """How affinely the representation explains the hidden latents.

    Regresses hidden Z on [1 | encode(X)] and averages the per-coordinate
    R^2 uniformly. Exact affine recovery gives 1 up to rounding.
    """
    z = data.hidden.z
    rep = np.asarray(encode(data.x), dtype=np.float64)
    design = np.hstack([np.ones((rep.shape[0], 1)), rep])
    coef, resid = least_squares_fit(design, z)
    sse = np.sum(resid * resid, axis=0)
    centered = z - z.mean(axis=0)
    sst = np.sum(centered * centered, axis=0)
    if np.any(sst <= 0.0):
        raise ValueError("a latent coordinate is constant; R^2 undefined")
    r2 = float(np.mean(1.0 - sse / sst))
    return AffineWitness(coef=coef[1:].T.copy(), intercept=coef[:1].copy(),
                         r_squared=r2)


class LambdaChoice(NamedTuple):
    selected: float
    baseline_recon: float
    table: list[dict]
    models: dict[float, AutoencoderModel]


def choose_lambda(candidates, data: Dataset, dim_z: int, stream: RngStream,
                  config: TrainConfig = TrainConfig(),
                  cutoff: float = 0.2) -> LambdaChoice:
    """Pick the penalty weight by reconstruction-loss inflation.

    Trains the plain model once and every candidate warm-started from it;
    scanning candidates from largest to smallest, the first whose
    reconstruction loss exceeds the plain model's by less than ``cutoff``
    (relatively) wins; if none qualifies the smallest candidate is used.
    The smallest candidate is the fallback and is never tested itself.
    """
    cands = [float(c) for c in candidates]
    if not cands:
        raise ValueError("candidate list is empty")
    if any(cands[i] <= cands[i + 1] for i in range(len(cands) - 1)):
        raise ValueError("candidates must be strictly decreasing")
    baseline = train_autoencoder(data, dim_z, 0.0,
                                 stream.derive("baseline"), config)
    baseline_recon = reconstruction_mse(baseline, data.x)
    models: dict[float, AutoencoderModel] = {0.0: baseline}
    table = []
    for i, lam in enumerate(cands):
        model = train_autoencoder(data, dim_z, lam,
                                  stream.derive("candidate", i), config,
                                  init=baseline)
        models[lam] = model
        recon = reconstruction_mse(model, data.x)
        table.append({"mmr_weight": lam, "recon": recon,
                      "inflation": recon / baseline_recon - 1.0})
    selected = cands[-1]
    for row in table[:-1]:
        if row["inflation"] < cutoff:
            selected = row["mmr_weight"]
            break
    return LambdaChoice(selected, baseline_recon, table, models)


def mlp_baseline(a_train: np.ndarray, y_train: np.ndarray,
                 a_eval: np.ndarray, stream: RngStream,
                 config: TrainConfig = TrainConfig()) -> np.ndarray:
    """Direct regression of the outcome on the action, evaluated on a grid."""
    net = train_regression_net(np.asarray(a_train, dtype=np.float64),
                               np.asarray(y_train, dtype=np.float64),
                               stream, config)
    return net.forward(np.atleast_2d(a_eval))[:, 0]


def evaluation_grid(half_width: float = EVAL_GRID_HALF_WIDTH,
                    points: int = EVAL_GRID_POINTS) -> np.ndarray:
    """Equally spaced 1-D intervention grid used by the extrapolation runs."""
    return np.linspace(-half_width, half_width, points)


def draw_test_interventions(dim_a: int, stream: RngStream,
                            count: int = TEST_INTERVENTION_COUNT) -> np.ndarray:
    """Multi-dim test interventions: uniform draws outside the training box."""
    low, high = TEST_INTERVENTION_BOX
    return stream.uniform(low, high, (count, dim_a))


def split_extrapolation_aware(data: Dataset, q: float) -> tuple[Dataset, Dataset]:
    """Hold out the top q-fraction along the first action coordinate.

    The two sides have disjoint action support along that coordinate, so the
    held-out side genuinely requires extrapolation.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("hold-out fraction must lie strictly between 0 and 1")
    first = data.a[:, 0]
    threshold = np.quantile(first, 1.0 - q)
    test_mask = first > threshold
    _check_split_sizes(test_mask, data.a.shape[1])
    return (data.subset(np.flatnonzero(~test_mask)),
            data.subset(np.flatnonzero(test_mask)))


def split_random(data: Dataset, q: float,
                 stream: RngStream) -> tuple[Dataset, Dataset]:
    """Plain random q-fraction hold-out, for comparison with the aware split."""
    if not 0.0 < q < 1.0:
        raise ValueError("hold-out fraction must lie strictly between 0 and 1")
    n = len(data)
    n_test = int(round(q * n))
    perm = stream.permutation(n)
    test_mask = np.zeros(n, dtype=bool)
    test_mask[perm[:n_test]] = True
    _check_split_sizes(test_mask, data.a.shape[1])
    return (data.subset(np.flatnonzero(~test_mask)),
            data.subset(np.flatnonzero(test_mask)))


def _check_split_sizes(test_mask: np.ndarray, dim_a: int) -> None:
    smallest = min(int(test_mask.sum()), int((~test_mask).sum()))
    if smallest < dim_a + 2:
        raise DegenerateSplitError(
            f"degenerate split: a side has only {smallest} rows")


@dataclass(frozen=True)
class ExperimentRecord:
    """One metric value (or error) for one method at one grid point."""

    experiment_id: str
    method: str
    params: dict
    rep: int
    metric: str
    value: float | None
    error: str | None = None

    def cell(self, column: str):
        if column == "method":
            return self.method
        if column == "rep":
            return self.rep
        if column == "error":
            return self.error
        if column == self.metric:
            return self.value
        return self.params.get(column)
