"""Feed-forward nets and the training loops built on the autodiff tape.

Three trainable objects live here:

* plain and moment-regularized autoencoders (loss = per-sample reconstruction
  error + weight * restriction statistic, both on one tape so a single
  backward pass serves encoder and decoder),
* single regression networks (used for the direct action-to-outcome baseline
  and for supervised pretraining on known latents),
* the additive regressor y ~ structural(rep) + control(ctrl), two subnets
  whose outputs are summed in the output layer so additivity holds exactly.

All loops share the Adam hyperparameters (batch 256, lr 0.005, 1000 epochs)
and draw shuffles and initial weights from named substreams, so training is
bit-reproducible from (data, config, stream).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .kernels import KernelSpec, gram, median_heuristic
from .numcore import (
    AdamState,
    Graph,
    Node,
    RngStream,
    adam_update,
    least_squares_fit,
    residual_factors,
)

HIDDEN_WIDTHS = (32, 32, 32)
LEAKY_SLOPE = 0.01


class TrainingDivergedError(RuntimeError):
    """The loss or a gradient stopped being finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and architecture settings shared by all training loops."""

    epochs: int = 1000
    batch_size: int = 256
    learning_rate: float = 0.005
    hidden: tuple[int, ...] = HIDDEN_WIDTHS
    slope: float = LEAKY_SLOPE


@dataclass
class Mlp:
    """Dense net, LeakyReLU on hidden layers, identity output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    slope: float = LEAKY_SLOPE

    @staticmethod
    def init(dims: tuple[int, ...], stream: RngStream,
             slope: float = LEAKY_SLOPE) -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        weights = []
        biases = []
        for din, dout in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (din + dout))
            weights.append(stream.uniform(-limit, limit, (din, dout)))
            biases.append(np.zeros((1, dout)))
        return Mlp(weights, biases, slope)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.where(h > 0.0, h, self.slope * h)
        return h

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def clone(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.slope)

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "slope": self.slope,
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @staticmethod
    def from_dict(doc: dict) -> "Mlp":
        return Mlp([np.asarray(w, dtype=np.float64) for w in doc["weights"]],
                   [np.asarray(b, dtype=np.float64) for b in doc["biases"]],
                   float(doc["slope"]))


class MlpNodes:
    """An Mlp bound onto one tape: parameter nodes plus the layered forward."""

    def __init__(self, graph: Graph, mlp: Mlp):
        self.graph = graph
        self.slope = mlp.slope
        self.weight_nodes = [graph.param(w) for w in mlp.weights]
        self.bias_nodes = [graph.param(b) for b in mlp.biases]

    def forward(self, x: Node) -> Node:
        g = self.graph
        h = x
        last = len(self.weight_nodes) - 1
        for i, (wn, bn) in enumerate(zip(self.weight_nodes, self.bias_nodes)):
            h = g.add(g.matmul(h, wn), bn)
            if i < last:
                h = g.leaky_relu(h, self.slope)
        return h

    def param_nodes(self) -> list[Node]:
        # Same order as Mlp.params(): weights first, then biases.
        return [*self.weight_nodes, *self.bias_nodes]


@dataclass(frozen=True)
class LinearFit:
    """Least-squares affine map from actions to representation space."""

    coef: np.ndarray       # d x k
    intercept: np.ndarray  # 1 x d

    def predict(self, a: np.ndarray) -> np.ndarray:
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        return a @ self.coef.T + self.intercept


def residual_projection(rep: np.ndarray, a: np.ndarray) -> tuple[LinearFit, np.ndarray]:
    """Regress the representation on [1 | actions]; return fit and residuals."""
    rep = np.asarray(rep, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    design = np.hstack([np.ones((a.shape[0], 1)), a])
    coef, residuals = least_squares_fit(design, rep)
    fit = LinearFit(coef=coef[1:].T.copy(), intercept=coef[:1].copy())
    return fit, residuals


@dataclass
class AutoencoderModel:
    """Encoder/decoder pair plus the penalty weight it was trained with."""

    encoder: Mlp
    decoder: Mlp
    mmr_weight: float
    bandwidth: float | None
    trace: list[dict] = field(default_factory=list)
    seed_key: tuple[int, int] | None = None

    def encode(self, x: np.ndarray) -> np.ndarray:
        return self.encoder.forward(x)

    def decode(self, rep: np.ndarray) -> np.ndarray:
        return self.decoder.forward(rep)

    def to_dict(self) -> dict:
        return {"kind": "autoencoder",
                "mmr_weight": self.mmr_weight, "bandwidth": self.bandwidth,
                "seed_key": None if self.seed_key is None else list(self.seed_key),
                "trace": self.trace,
                "encoder": self.encoder.to_dict(), "decoder": self.decoder.to_dict()}

    @staticmethod
    def from_dict(doc: dict) -> "AutoencoderModel":
        seed_key = doc.get("seed_key")
        return AutoencoderModel(
            encoder=Mlp.from_dict(doc["encoder"]),
            decoder=Mlp.from_dict(doc["decoder"]),
            mmr_weight=float(doc["mmr_weight"]),
            bandwidth=None if doc["bandwidth"] is None else float(doc["bandwidth"]),
            trace=list(doc.get("trace", [])),
            seed_key=None if seed_key is None else (int(seed_key[0]), int(seed_key[1])),
        )


def reconstruction_mse(model: AutoencoderModel, x: np.ndarray) -> float:
    """Mean over samples of the squared reconstruction error norm."""
    x = np.asarray(x, dtype=np.float64)
    delta = x - model.decode(model.encode(x))
    return float(np.mean(np.sum(delta * delta, axis=1)))


class BatchLoss(NamedTuple):
    graph: Graph
    loss: Node
    recon: float
    penalty: float
    param_nodes: list[Node]


def ae_loss_batch(x_batch: np.ndarray, a_batch: np.ndarray,
                  model: AutoencoderModel,
                  kernel: KernelSpec | None) -> BatchLoss:
    """One tape holding reconstruction + weighted restriction penalty.

    The in-batch regression residual is expressed as rep - D (E rep), with
    (D, E) precomputed from the design [1 | a_batch] alone, so the backward
    pass sends gradients through the residual exactly as the annihilator
    projection would while never forming the batch-sized projection matrix.
    """
    g = Graph()
    b = x_batch.shape[0]
    xn = g.constant(x_batch)
    enc = MlpNodes(g, model.encoder)
    dec = MlpNodes(g, model.decoder)
    rep = enc.forward(xn)
    recon = g.smul(1.0 / b, g.sum(g.square(g.sub(xn, dec.forward(rep)))))
    loss = recon
    penalty_value = 0.0
    if model.mmr_weight > 0.0:
        if kernel is None:
            raise ValueError("a kernel spec is required when the penalty weight is positive")
        design, solver = residual_factors(
            np.hstack([np.ones((b, 1)), a_batch]))
        resid = g.sub(rep, g.matmul(g.constant(design),
                                    g.matmul(g.constant(solver), rep)))
        penalty = g.smul(1.0 / (b * b), g.quad_form(resid, gram(a_batch, kernel)))
        penalty_value = penalty.value[0, 0]
        loss = g.add(recon, g.smul(model.mmr_weight, penalty))
    return BatchLoss(g, loss, recon.value[0, 0], penalty_value,
                     enc.param_nodes() + dec.param_nodes())


def _adam_step(params: list[np.ndarray], param_nodes: list[Node],
               state: AdamState, lr: float) -> None:
    adjoints = [np.zeros_like(p) if node.adjoint is None else node.adjoint
                for node, p in zip(param_nodes, params)]
    adam_update(params, adjoints, state, lr=lr)


def _batch_slices(n: int, batch_size: int, perm: np.ndarray, min_rows: int):
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if idx.shape[0] >= min_rows:
            yield idx


def train_autoencoder(data, dim_z: int, mmr_weight: float, stream: RngStream,
                      config: TrainConfig = TrainConfig(),
                      init: AutoencoderModel | None = None) -> AutoencoderModel:
    """Minibatch-Adam training of the (optionally penalized) autoencoder.

    ``init`` warm-starts the parameters (the usual recipe: fit the plain
    autoencoder first, then start the penalized run from its solution).
    Incomplete trailing batches with fewer than dim_a + 2 rows are dropped,
    since the in-batch regression needs more rows than design columns.
    """
    a, x = data.a, data.x
    n, dim_x = x.shape
    if dim_z < 1:
        raise ValueError("representation dimension must be positive")
    if init is not None:
        encoder, decoder = init.encoder.clone(), init.decoder.clone()
    else:
        encoder = Mlp.init((dim_x, *config.hidden, dim_z),
                           stream.derive("init-encoder"), config.slope)
        decoder = Mlp.init((dim_z, *config.hidden, dim_x),
                           stream.derive("init-decoder"), config.slope)

    kernel = None
    bandwidth = None
    if mmr_weight > 0.0:
        # Bandwidth frozen on the full action sample before optimization.
        bandwidth = median_heuristic(a, stream.derive("bandwidth"))
        kernel = KernelSpec(bandwidth)

    model = AutoencoderModel(encoder, decoder, float(mmr_weight), bandwidth,
                             trace=[], seed_key=(stream.seed, stream.stream_id))
    params = encoder.params() + decoder.params()
    state = AdamState(params)
    shuffle = stream.derive("shuffle")
    min_rows = a.shape[1] + 2
    for epoch in range(config.epochs):
        perm = shuffle.permutation(n)
        recon_sum = penalty_sum = 0.0
        batches = 0
        for bi, idx in enumerate(_batch_slices(n, config.batch_size, perm, min_rows)):
            step = ae_loss_batch(x[idx], a[idx], model, kernel)
            if not np.isfinite(step.loss.value[0, 0]):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {bi}")
            step.graph.backward(step.loss)
            _adam_step(params, step.param_nodes, state, config.learning_rate)
            recon_sum += step.recon
            penalty_sum += step.penalty
            batches += 1
        model.trace.append({"recon": recon_sum / batches,
                            "mmr": penalty_sum / batches})
    return model


def train_regression_net(inputs: np.ndarray, targets: np.ndarray,
                         stream: RngStream,
                         config: TrainConfig = TrainConfig()) -> Mlp:
    """Fit targets ~ net(inputs) by minibatch Adam on the mean squared error."""
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = inputs.shape[0]
    net = Mlp.init((inputs.shape[1], *config.hidden, targets.shape[1]),
                   stream.derive("init"), config.slope)
    params = net.params()
    state = AdamState(params)
    shuffle = stream.derive("shuffle")
    for epoch in range(config.epochs):
        perm = shuffle.permutation(n)
        for bi, idx in enumerate(_batch_slices(n, config.batch_size, perm, 1)):
            g = Graph()
            bound = MlpNodes(g, net)
            pred = bound.forward(g.constant(inputs[idx]))
            loss = g.mean(g.square(g.sub(g.constant(targets[idx]), pred)))
            if not np.isfinite(loss.value[0, 0]):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {bi}")
            g.backward(loss)
            _adam_step(params, bound.param_nodes(), state, config.learning_rate)
    return net


def pretrain_on_latents(x: np.ndarray, latents: np.ndarray, stream: RngStream,
                        config: TrainConfig = TrainConfig()) -> AutoencoderModel:
    """Supervised warm start: encoder fits x -> latents, decoder latents -> x.

    Used by the oracle variant that initializes the penalized autoencoder at
    networks trained against the ground-truth latent sample.
    """
    encoder = train_regression_net(x, latents, stream.derive("encoder"), config)
    decoder = train_regression_net(latents, x, stream.derive("decoder"), config)
    return AutoencoderModel(encoder, decoder, 0.0, None, trace=[],
                            seed_key=(stream.seed, stream.stream_id))


@dataclass
class AdditiveRegressor:
    """y ~ structural(rep) + control(ctrl); the sum is the only interaction."""

    structural_net: Mlp
    control_net: Mlp

    def structural_value(self, rep: np.ndarray) -> np.ndarray:
        return self.structural_net.forward(rep)

    def control_value(self, ctrl: np.ndarray) -> np.ndarray:
        return self.control_net.forward(ctrl)

    def predict(self, rep: np.ndarray, ctrl: np.ndarray) -> np.ndarray:
        return self.structural_value(rep) + self.control_value(ctrl)


def fit_additive_regressor(rep: np.ndarray, controls: np.ndarray,
                           y: np.ndarray, stream: RngStream,
                           config: TrainConfig = TrainConfig()) -> AdditiveRegressor:
    """Joint minibatch-Adam fit of the two subnets on mean squared error."""
    rep = np.asarray(rep, dtype=np.float64)
    controls = np.asarray(controls, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not rep.shape[0] == controls.shape[0] == y.shape[0]:
        raise ValueError("misaligned rows across representation/controls/outcome")
    n = rep.shape[0]
    structural = Mlp.init((rep.shape[1], *config.hidden, 1),
                          stream.derive("init-structural"), config.slope)
    control = Mlp.init((controls.shape[1], *config.hidden, 1),
                       stream.derive("init-control"), config.slope)
    params = structural.params() + control.params()
    state = AdamState(params)
    shuffle = stream.derive("shuffle")
    for epoch in range(config.epochs):
        perm = shuffle.permutation(n)
        for bi, idx in enumerate(_batch_slices(n, config.batch_size, perm, 1)):
            g = Graph()
            s_nodes = MlpNodes(g, structural)
            c_nodes = MlpNodes(g, control)
            pred = g.add(s_nodes.forward(g.constant(rep[idx])),
                         c_nodes.forward(g.constant(controls[idx])))
            loss = g.mean(g.square(g.sub(g.constant(y[idx]), pred)))
            if not np.isfinite(loss.value[0, 0]):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {bi}")
            g.backward(loss)
            _adam_step(params, s_nodes.param_nodes() + c_nodes.param_nodes(),
                       state, config.learning_rate)
    return AdditiveRegressor(structural, control)
