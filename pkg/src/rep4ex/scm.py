"""Structural-model data generators.

The generating process is

    A -> Z -> X,   Z := alpha * M A + V,   X := g(Z),   Y := l(Z) + U,

with actions A uniform on a box, latent noise V Gaussian with a random full
covariance, g a random injective-by-construction mixing network, and (for
outcome tasks) U := h(V) + eps so the latent noise confounds the outcome.
Everything is drawn from named substreams of a single integer seed, so a
config is fully reproducible from (constructor arguments, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numcore import RngStream
from .tableio import write_csv, write_sidecar

LEAKY_SLOPE = 0.01
MIXING_WIDTHS = (16, 16, 16)
OUTCOME_WIDTH = 64
MIN_SINGULAR = 1e-6
CENTER_SAMPLES = 100_000
MIN_MC_SAMPLES = 10_000


class ConfigError(ValueError):
    """Raised for structurally invalid generator configurations."""


def _leaky_relu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, LEAKY_SLOPE * x)


@dataclass(frozen=True)
class MixingNetwork:
    """Fully connected net with LeakyReLU hidden layers and linear output.

    All weights and biases are i.i.d. Uniform(-1, 1); with more output than
    input coordinates this is injective on bounded sets with probability one,
    which is what representation recovery needs from the latent-to-observed
    map.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    @staticmethod
    def draw(dim_in: int, dim_out: int, stream: RngStream,
             widths: tuple[int, ...] = MIXING_WIDTHS) -> "MixingNetwork":
        dims = (dim_in, *widths, dim_out)
        weights = []
        biases = []
        for din, dout in zip(dims[:-1], dims[1:]):
            weights.append(stream.uniform(-1.0, 1.0, (din, dout)))
            biases.append(stream.uniform(-1.0, 1.0, (1, dout)))
        return MixingNetwork(tuple(weights), tuple(biases))

    def __call__(self, z: np.ndarray) -> np.ndarray:
        h = np.asarray(z, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = _leaky_relu(h)
        return h


@dataclass(frozen=True)
class TanhNetwork:
    """One-hidden-layer tanh net with Uniform(-1, 1) weights, scalar output."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    offset: float = 0.0

    @staticmethod
    def draw(dim_in: int, stream: RngStream, width: int = OUTCOME_WIDTH) -> "TanhNetwork":
        return TanhNetwork(
            w1=stream.uniform(-1.0, 1.0, (dim_in, width)),
            b1=stream.uniform(-1.0, 1.0, (1, width)),
            w2=stream.uniform(-1.0, 1.0, (width, 1)),
            b2=stream.uniform(-1.0, 1.0, (1, 1)),
        )

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return np.tanh(z @ self.w1 + self.b1) @ self.w2 + self.b2 - self.offset

    def centered(self, samples: np.ndarray) -> "TanhNetwork":
        """Return a copy shifted so the mean output over `samples` is zero."""
        raw = np.tanh(samples @ self.w1 + self.b1) @ self.w2 + self.b2
        return TanhNetwork(self.w1, self.b1, self.w2, self.b2,
                           offset=self.offset + float(np.mean(raw)))


def _cubic_confounder(v: np.ndarray) -> np.ndarray:
    return v ** 3 / 5.0


def _sine_outcome(z: np.ndarray) -> np.ndarray:
    return -2.0 * z + 10.0 * np.sin(z)


def draw_action_matrix(dim_z: int, dim_a: int, stream: RngStream) -> np.ndarray:
    """Uniform(-2, 2) entries, redrawn until numerically full row rank."""
    while True:
        mat = stream.uniform(-2.0, 2.0, (dim_z, dim_a))
        if np.linalg.svd(mat, compute_uv=False).min() > MIN_SINGULAR:
            return mat


def draw_noise_cov(dim: int, stream: RngStream) -> np.ndarray:
    """B B^T + diag(w) with B, w entrywise Uniform(0, 1): full, positive definite."""
    b = stream.uniform(0.0, 1.0, (dim, dim))
    w = stream.uniform(0.0, 1.0, (dim,))
    return b @ b.T + np.diag(w)


@dataclass(frozen=True)
class HiddenBlock:
    """Latent draws kept out of the training path; tests and oracles only."""

    z: np.ndarray
    v: np.ndarray
    u: np.ndarray | None


@dataclass(frozen=True)
class Dataset:
    a: np.ndarray
    x: np.ndarray
    y: np.ndarray | None
    _hidden: HiddenBlock = field(repr=False)

    def __post_init__(self):
        for arr in (self.a, self.x, self.y, self._hidden.z, self._hidden.v,
                    self._hidden.u):
            if arr is not None:
                arr.setflags(write=False)
        n = len(self.a)
        if self.x.shape[0] != n or (self.y is not None and self.y.shape[0] != n):
            raise ConfigError("dataset blocks disagree on sample count")

    def __len__(self) -> int:
        return len(self.a)

    @property
    def hidden(self) -> HiddenBlock:
        """Ground-truth latents. Estimators must not touch these."""
        return self._hidden

    def subset(self, idx: np.ndarray) -> "Dataset":
        h = self._hidden
        return Dataset(
            a=self.a[idx], x=self.x[idx],
            y=None if self.y is None else self.y[idx],
            _hidden=HiddenBlock(z=h.z[idx], v=h.v[idx],
                                u=None if h.u is None else h.u[idx]),
        )


def _gaussian(stream: RngStream, n: int, cov_chol: np.ndarray) -> np.ndarray:
    return stream.standard_normal((n, cov_chol.shape[0])) @ cov_chol.T


@dataclass(frozen=True)
class ScmUnmixConfig:
    """Representation-recovery task: observe (A, X), no outcome."""

    dim_z: int
    dim_a: int
    dim_x: int
    alpha: float
    seed: int
    action_matrix: np.ndarray
    noise_cov: np.ndarray
    mixing: MixingNetwork

    def stream(self, *keys) -> RngStream:
        return RngStream(self.seed).derive("scm-unmix", *keys)

    def to_json_dict(self) -> dict:
        return {
            "task": "unmix",
            "dim_z": self.dim_z, "dim_a": self.dim_a, "dim_x": self.dim_x,
            "alpha": self.alpha, "seed": self.seed,
            "action_matrix": self.action_matrix.tolist(),
            "noise_cov": self.noise_cov.tolist(),
        }


@dataclass(frozen=True)
class ScmExtrapConfig:
    """Outcome task: observe (A, X, Y), A restricted to [-gamma, gamma]^k."""

    dim_z: int
    dim_a: int
    dim_x: int
    gamma: float
    seed: int
    outcome: str
    action_matrix: np.ndarray
    noise_cov: np.ndarray
    mixing: MixingNetwork
    confounder_net: TanhNetwork | None
    outcome_net: TanhNetwork | None
    rho: float | None = None
    sigma_x: float = 0.0

    def stream(self, *keys) -> RngStream:
        return RngStream(self.seed).derive("scm-extrap", *keys)

    def outcome_fn(self, z: np.ndarray) -> np.ndarray:
        if self.outcome == "sine":
            return _sine_outcome(z)
        return self.outcome_net(z)

    def confounder_fn(self, v: np.ndarray) -> np.ndarray:
        if self.outcome == "sine":
            return _cubic_confounder(v)
        return self.confounder_net(v)

    def to_json_dict(self) -> dict:
        return {
            "task": "extrap",
            "dim_z": self.dim_z, "dim_a": self.dim_a, "dim_x": self.dim_x,
            "gamma": self.gamma, "seed": self.seed, "outcome": self.outcome,
            "rho": self.rho, "sigma_x": self.sigma_x,
            "action_matrix": self.action_matrix.tolist(),
            "noise_cov": self.noise_cov.tolist(),
        }


def _check_dims(dim_z: int, dim_a: int) -> None:
    if dim_z < 1 or dim_a < 1:
        raise ConfigError("dimensions must be positive")
    if dim_a < dim_z:
        raise ConfigError("need dim_a >= dim_z for the action matrix to have full row rank")


def make_unmix_config(dim_z: int, alpha: float, seed: int,
                      dim_a: int | None = None, dim_x: int = 10) -> ScmUnmixConfig:
    dim_a = dim_z if dim_a is None else dim_a
    _check_dims(dim_z, dim_a)
    if alpha < 0.0:
        raise ConfigError("intervention strength must be nonnegative")
    root = RngStream(seed).derive("scm-unmix")
    return ScmUnmixConfig(
        dim_z=dim_z, dim_a=dim_a, dim_x=dim_x, alpha=float(alpha), seed=seed,
        action_matrix=draw_action_matrix(dim_z, dim_a, root.derive("action-matrix")),
        noise_cov=draw_noise_cov(dim_z, root.derive("noise-cov")),
        mixing=MixingNetwork.draw(dim_z, dim_x, root.derive("mixing")),
    )


def make_extrap_config(dim_z: int, gamma: float, seed: int,
                       dim_a: int | None = None, dim_x: int | None = None,
                       outcome: str | None = None, rho: float | None = None,
                       sigma_x: float = 0.0) -> ScmExtrapConfig:
    dim_a = dim_z if dim_a is None else dim_a
    _check_dims(dim_z, dim_a)
    if gamma <= 0.0:
        raise ConfigError("training-support half-width must be positive")
    if dim_x is None:
        dim_x = 2 if dim_z == 1 else 10
    if outcome is None:
        outcome = "sine" if dim_z == 1 else "tanh-nets"
    if outcome not in ("sine", "tanh-nets"):
        raise ConfigError(f"unknown outcome kind: {outcome!r}")
    if outcome == "sine" and dim_z != 1:
        raise ConfigError("the sine outcome pair is one-dimensional")
    if rho is not None and dim_z != 1:
        raise ConfigError("confounding mode is one-dimensional")
    if rho is not None and not 0.0 <= rho < 1.0:
        raise ConfigError("correlation must lie in [0, 1)")
    if sigma_x < 0.0:
        raise ConfigError("observation noise scale must be nonnegative")

    root = RngStream(seed).derive("scm-extrap")
    action_matrix = draw_action_matrix(dim_z, dim_a, root.derive("action-matrix"))
    # In the correlated-noise mode V is standard normal by definition.
    if rho is not None:
        noise_cov = np.eye(1)
    else:
        noise_cov = draw_noise_cov(dim_z, root.derive("noise-cov"))

    confounder_net = outcome_net = None
    if outcome == "tanh-nets":
        confounder_net = TanhNetwork.draw(dim_z, root.derive("confounder-net"))
        outcome_net = TanhNetwork.draw(dim_z, root.derive("outcome-net"))
        # Center the confounder so it does not shift the outcome mean.
        v_ref = _gaussian(root.derive("confounder-center"), CENTER_SAMPLES,
                          np.linalg.cholesky(noise_cov))
        confounder_net = confounder_net.centered(v_ref)

    return ScmExtrapConfig(
        dim_z=dim_z, dim_a=dim_a, dim_x=dim_x, gamma=float(gamma), seed=seed,
        outcome=outcome, action_matrix=action_matrix, noise_cov=noise_cov,
        mixing=MixingNetwork.draw(dim_z, dim_x, root.derive("mixing")),
        confounder_net=confounder_net, outcome_net=outcome_net,
        rho=rho, sigma_x=float(sigma_x),
    )


def sample_unmix(config: ScmUnmixConfig, n: int,
                 stream: RngStream | None = None, draw: int = 0) -> Dataset:
    if stream is None:
        stream = config.stream("sample", draw)
    a = stream.uniform(-1.0, 1.0, (n, config.dim_a))
    v = _gaussian(stream, n, np.linalg.cholesky(config.noise_cov))
    z = config.alpha * a @ config.action_matrix.T + v
    return Dataset(a=a, x=config.mixing(z), y=None,
                   _hidden=HiddenBlock(z=z, v=v, u=None))


def sample_extrap(config: ScmExtrapConfig, n: int,
                  stream: RngStream | None = None, draw: int = 0) -> Dataset:
    if stream is None:
        stream = config.stream("sample", draw)
    a = stream.uniform(-config.gamma, config.gamma, (n, config.dim_a))
    if config.rho is not None:
        # (U, V) jointly Gaussian, unit variances, correlation rho.
        cov = np.array([[1.0, config.rho], [config.rho, 1.0]])
        uv = _gaussian(stream, n, np.linalg.cholesky(cov))
        u, v = uv[:, :1], uv[:, 1:]
    else:
        v = _gaussian(stream, n, np.linalg.cholesky(config.noise_cov))
        u = config.confounder_fn(v) + stream.standard_normal((n, 1))
    z = a @ config.action_matrix.T + v
    x = config.mixing(z)
    if config.sigma_x > 0.0:
        x = x + config.sigma_x * stream.standard_normal(x.shape)
    y = config.outcome_fn(z) + u
    return Dataset(a=a, x=x, y=y, _hidden=HiddenBlock(z=z, v=v, u=u))


def true_do_mean(config: ScmExtrapConfig, a_star: np.ndarray,
                 n_mc: int = 100_000,
                 stream: RngStream | None = None) -> tuple[float, float]:
    """Monte Carlo E[Y | do(A = a*)] = E_V[l(M a* + V)], with its std error.

    Valid because setting A by intervention leaves the noise distribution
    alone, and the confounder term has mean zero under the noise law.
    """
    if n_mc < MIN_MC_SAMPLES:
        raise ConfigError(f"need at least {MIN_MC_SAMPLES} Monte Carlo draws")
    if stream is None:
        stream = config.stream("do-mean")
    a_star = np.asarray(a_star, dtype=np.float64).reshape(config.dim_a)
    v = _gaussian(stream, n_mc, np.linalg.cholesky(config.noise_cov))
    vals = config.outcome_fn(a_star @ config.action_matrix.T + v)
    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(n_mc))
    return mean, stderr


def true_do_curve(config: ScmExtrapConfig, a_grid: np.ndarray,
                  n_mc: int = 100_000,
                  stream: RngStream | None = None) -> tuple[np.ndarray, np.ndarray]:
    """true_do_mean over a whole grid of interventions, sharing one noise draw.

    Reusing the same Monte Carlo noise across grid points keeps the estimated
    curve smooth in the intervention and costs one draw instead of many.
    """
    if n_mc < MIN_MC_SAMPLES:
        raise ConfigError(f"need at least {MIN_MC_SAMPLES} Monte Carlo draws")
    if stream is None:
        stream = config.stream("do-mean")
    a_grid = np.atleast_2d(np.asarray(a_grid, dtype=np.float64))
    v = _gaussian(stream, n_mc, np.linalg.cholesky(config.noise_cov))
    means = np.empty(a_grid.shape[0])
    stderrs = np.empty(a_grid.shape[0])
    for j, a_star in enumerate(a_grid):
        vals = config.outcome_fn(a_star @ config.action_matrix.T + v)
        means[j] = np.mean(vals)
        stderrs[j] = np.std(vals, ddof=1) / np.sqrt(n_mc)
    return means, stderrs


def write_dataset_csv(dataset: Dataset, config, path: str | Path,
                      with_hidden: bool = False) -> None:
    """Columns a_0..,x_0..[,y][,z_0..,v_0..[,u]]; floats at 17 significant digits."""
    header = [f"a_{j}" for j in range(dataset.a.shape[1])]
    blocks = [dataset.a]
    header += [f"x_{j}" for j in range(dataset.x.shape[1])]
    blocks.append(dataset.x)
    if dataset.y is not None:
        header.append("y")
        blocks.append(dataset.y)
    if with_hidden:
        h = dataset.hidden
        header += [f"z_{j}" for j in range(h.z.shape[1])]
        blocks.append(h.z)
        header += [f"v_{j}" for j in range(h.v.shape[1])]
        blocks.append(h.v)
        if h.u is not None:
            header.append("u")
            blocks.append(h.u)
    table = np.hstack(blocks)
    write_csv(path, header, [[float(v) for v in row] for row in table])
    sidecar = dict(config.to_json_dict(), n=len(dataset), with_hidden=with_hidden)
    write_sidecar(str(path) + ".json", sidecar)
