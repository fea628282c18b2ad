"""Nets, batch losses, and training loops."""

import numpy as np
import pytest

from conftest import central_difference, relative_error, tiny_config
from rep4ex.kernels import KernelSpec, gram, median_heuristic, mmr_statistic
from rep4ex.models import (
    AutoencoderModel,
    Mlp,
    MlpNodes,
    TrainingDivergedError,
    ae_loss_batch,
    fit_additive_regressor,
    pretrain_on_latents,
    reconstruction_mse,
    residual_projection,
    train_autoencoder,
    train_regression_net,
)
from rep4ex.numcore import Graph, RngStream, annihilator
from rep4ex.scm import (
    Dataset,
    HiddenBlock,
    make_extrap_config,
    make_unmix_config,
    sample_extrap,
    sample_unmix,
)


def test_mlp_init_shapes_and_forward():
    net = Mlp.init((3, 8, 2), RngStream(0).derive("net"))
    assert net.dims == (3, 8, 2)
    assert [w.shape for w in net.weights] == [(3, 8), (8, 2)]
    assert all(np.all(b == 0.0) for b in net.biases)
    x = RngStream(1).standard_normal((5, 3))
    h = x @ net.weights[0] + net.biases[0]
    h = np.where(h > 0.0, h, net.slope * h)
    manual = h @ net.weights[1] + net.biases[1]
    assert np.allclose(net.forward(x), manual, atol=1e-15)


def test_mlp_no_hidden_layer_is_affine():
    net = Mlp.init((2, 3), RngStream(0).derive("lin"))
    x = RngStream(1).standard_normal((7, 2))
    assert np.allclose(net.forward(x), x @ net.weights[0] + net.biases[0])
    assert np.allclose(net.forward(2.0 * x) + net.forward(np.zeros_like(x)),
                       2.0 * net.forward(x) + net.biases[0], atol=1e-12)


def test_mlp_clone_is_independent():
    net = Mlp.init((2, 4, 1), RngStream(0).derive("c"))
    twin = net.clone()
    twin.weights[0][0, 0] += 1.0
    assert net.weights[0][0, 0] != twin.weights[0][0, 0]


def test_mlp_json_round_trip_is_bit_exact():
    net = Mlp.init((3, 5, 2), RngStream(9).derive("j"))
    back = Mlp.from_dict(net.to_dict())
    x = RngStream(2).standard_normal((11, 3))
    assert np.array_equal(net.forward(x), back.forward(x))


def test_mlp_nodes_match_numpy_forward():
    net = Mlp.init((4, 6, 6, 2), RngStream(3).derive("n"))
    x = RngStream(4).standard_normal((9, 4))
    g = Graph()
    bound = MlpNodes(g, net)
    out = bound.forward(g.constant(x))
    assert np.allclose(out.value, net.forward(x), atol=1e-15)
    assert len(bound.param_nodes()) == len(net.params())


def test_residual_projection_kills_affine_part():
    rng = np.random.default_rng(0)
    a = rng.uniform(-1.0, 1.0, (80, 2))
    w = rng.standard_normal((3, 2))
    rep = np.hstack([np.ones((80, 1)), a]) @ w
    fit, resid = residual_projection(rep, a)
    assert np.max(np.abs(resid)) < 1e-8
    assert np.allclose(fit.predict(a), rep, atol=1e-8)


def test_residual_projection_residuals_are_centered_and_orthogonal():
    rng = np.random.default_rng(1)
    a = rng.uniform(-1.0, 1.0, (100, 2))
    rep = rng.standard_normal((100, 3))
    fit, resid = residual_projection(rep, a)
    assert np.max(np.abs(resid.mean(axis=0))) < 1e-9
    assert np.max(np.abs(a.T @ resid)) < 1e-7
    assert np.allclose(fit.predict(a) + resid, rep, atol=1e-10)


def test_reconstruction_mse_definition():
    enc = Mlp.init((3, 2), RngStream(0).derive("e"))
    dec = Mlp.init((2, 3), RngStream(0).derive("d"))
    model = AutoencoderModel(enc, dec, 0.0, None)
    x = RngStream(5).standard_normal((20, 3))
    delta = x - dec.forward(enc.forward(x))
    assert reconstruction_mse(model, x) == pytest.approx(
        float(np.mean(np.sum(delta**2, axis=1))), rel=1e-14)


def test_ae_loss_batch_components_match_closed_forms():
    stream = RngStream(11)
    x = stream.standard_normal((32, 4))
    a = stream.uniform(-1.0, 1.0, (32, 2))
    enc = Mlp.init((4, 8, 2), stream.derive("enc"))
    dec = Mlp.init((2, 8, 4), stream.derive("dec"))
    kernel = KernelSpec(median_heuristic(a))
    model = AutoencoderModel(enc, dec, 3.0, kernel.bandwidth)
    step = ae_loss_batch(x, a, model, kernel)

    rep = enc.forward(x)
    delta = x - dec.forward(rep)
    assert step.recon == pytest.approx(float(np.mean(np.sum(delta**2, axis=1))),
                                       rel=1e-12)
    design = np.hstack([np.ones((32, 1)), a])
    resid = annihilator(design) @ rep
    expected_penalty = mmr_statistic(resid, gram(a, kernel))
    assert step.penalty == pytest.approx(expected_penalty, rel=1e-9)
    assert step.loss.value[0, 0] == pytest.approx(
        step.recon + 3.0 * step.penalty, rel=1e-12)


def test_ae_loss_gradients_match_finite_differences():
    stream = RngStream(21)
    x = stream.standard_normal((10, 3))
    a = stream.uniform(-1.0, 1.0, (10, 1))
    kernel = KernelSpec(median_heuristic(a))

    def build(param_list):
        enc = Mlp([param_list[0]], [param_list[1]], 0.01)
        dec = Mlp([param_list[2]], [param_list[3]], 0.01)
        model = AutoencoderModel(enc, dec, 2.0, kernel.bandwidth)
        return ae_loss_batch(x, a, model, kernel)

    params = [stream.standard_normal((3, 2)), np.zeros((1, 2)),
              stream.standard_normal((2, 3)), np.zeros((1, 3))]
    step = build(params)
    step.graph.backward(step.loss)
    for i, node in enumerate(step.param_nodes):

        def scalar(p, i=i):
            trial = [q.copy() for q in params]
            trial[i] = p
            return build(trial).loss.value[0, 0]

        fd = central_difference(scalar, params[i].copy())
        assert relative_error(node.adjoint, fd) < 1e-6


def test_ae_loss_requires_kernel_when_penalized():
    stream = RngStream(0)
    enc = Mlp.init((2, 1), stream.derive("e"))
    dec = Mlp.init((1, 2), stream.derive("d"))
    model = AutoencoderModel(enc, dec, 1.0, None)
    with pytest.raises(ValueError):
        ae_loss_batch(np.ones((8, 2)), np.ones((8, 1)), model, None)


def test_train_regression_net_fits_linear_map():
    stream = RngStream(31)
    inputs = stream.uniform(-1.0, 1.0, (512, 2))
    targets = inputs @ np.array([[1.5], [-2.0]]) + 0.3
    net = train_regression_net(inputs, targets, stream.derive("fit"),
                               tiny_config(epochs=300))
    pred = net.forward(inputs)
    sse = float(np.sum((pred - targets) ** 2))
    sst = float(np.sum((targets - targets.mean()) ** 2))
    assert 1.0 - sse / sst > 0.99


def test_train_autoencoder_reduces_reconstruction_error():
    data = sample_unmix(make_unmix_config(2, 1.0, seed=0), 512)
    model = train_autoencoder(data, 2, 0.0, RngStream(0).derive("t"),
                              tiny_config(epochs=80))
    assert len(model.trace) == 80
    assert model.trace[-1]["recon"] < 0.2 * model.trace[0]["recon"]
    assert model.bandwidth is None and model.mmr_weight == 0.0


def test_train_autoencoder_is_deterministic():
    data = sample_unmix(make_unmix_config(2, 1.0, seed=1), 256)
    kwargs = dict(dim_z=2, mmr_weight=10.0, config=tiny_config(epochs=15))
    m1 = train_autoencoder(data, stream=RngStream(5).derive("d"), **kwargs)
    m2 = train_autoencoder(data, stream=RngStream(5).derive("d"), **kwargs)
    for w1, w2 in zip(m1.encoder.weights, m2.encoder.weights):
        assert np.array_equal(w1, w2)
    assert m1.trace == m2.trace
    assert m1.bandwidth == m2.bandwidth > 0.0


def test_warm_start_continues_from_plain_solution():
    data = sample_unmix(make_unmix_config(2, 1.0, seed=2), 256)
    plain = train_autoencoder(data, 2, 0.0, RngStream(6).derive("p"),
                              tiny_config(epochs=60))
    warm = train_autoencoder(data, 2, 10.0, RngStream(6).derive("w"),
                             tiny_config(epochs=5), init=plain)
    # A warm start must begin near the plain model's end, not from scratch.
    assert warm.trace[0]["recon"] < 3.0 * plain.trace[-1]["recon"]
    cold = train_autoencoder(data, 2, 10.0, RngStream(6).derive("c"),
                             tiny_config(epochs=5))
    assert warm.trace[0]["recon"] < cold.trace[0]["recon"]


def test_training_diverges_loudly_on_overflowing_loss():
    # Features near the float64 ceiling overflow the squared error, and the
    # loop must fail fast instead of carrying NaNs through the optimizer.
    stream = RngStream(7)
    a = stream.uniform(-1.0, 1.0, (64, 1))
    x = np.full((64, 2), 1e200)
    data = Dataset(a=a, x=x, y=None,
                   _hidden=HiddenBlock(z=np.zeros((64, 1)),
                                       v=np.zeros((64, 1)), u=None))
    with np.errstate(over="ignore"), \
            pytest.raises(TrainingDivergedError, match="epoch 0"):
        train_autoencoder(data, 1, 0.0, stream.derive("x"),
                          tiny_config(epochs=5))


def test_autoencoder_json_round_trip_is_bit_exact():
    data = sample_unmix(make_unmix_config(2, 1.0, seed=4), 256)
    model = train_autoencoder(data, 2, 5.0, RngStream(8).derive("r"),
                              tiny_config(epochs=5))
    back = AutoencoderModel.from_dict(model.to_dict())
    assert np.array_equal(model.encode(data.x), back.encode(data.x))
    assert back.mmr_weight == model.mmr_weight
    assert back.bandwidth == model.bandwidth
    assert back.seed_key == model.seed_key
    assert back.trace == model.trace


def test_pretrain_on_latents_recovers_latents():
    data = sample_unmix(make_unmix_config(2, 1.0, seed=5), 512)
    z = data.hidden.z
    model = pretrain_on_latents(data.x, z, RngStream(9).derive("o"),
                                tiny_config(epochs=200))
    rep = model.encode(data.x)
    sse = float(np.sum((rep - z) ** 2))
    sst = float(np.sum((z - z.mean(axis=0)) ** 2))
    assert 1.0 - sse / sst > 0.95
    assert reconstruction_mse(model, data.x) < np.mean(np.sum(data.x**2, axis=1))


def test_additive_regressor_is_exactly_additive():
    data = sample_extrap(make_extrap_config(1, 1.2, seed=6), 512)
    rep = data.hidden.z
    _, controls = residual_projection(rep, data.a)
    reg = fit_additive_regressor(rep, controls, data.y,
                                 RngStream(10).derive("a"),
                                 tiny_config(epochs=30))
    total = reg.predict(rep, controls)
    parts = reg.structural_value(rep) + reg.control_value(controls)
    assert np.array_equal(total, parts)


def test_additive_regressor_fits_additive_truth():
    stream = RngStream(44)
    rep = stream.uniform(-2.0, 2.0, (768, 1))
    ctrl = stream.uniform(-1.0, 1.0, (768, 1))
    y = np.sin(rep) + 0.5 * ctrl**2
    reg = fit_additive_regressor(rep, ctrl, y, stream.derive("fit"),
                                 tiny_config(epochs=400))
    pred = reg.predict(rep, ctrl)
    sse = float(np.sum((pred - y) ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    assert 1.0 - sse / sst > 0.95


def test_additive_regressor_rejects_misaligned_rows():
    with pytest.raises(ValueError):
        fit_additive_regressor(np.ones((10, 1)), np.ones((9, 1)),
                               np.ones((10, 1)), RngStream(0))
