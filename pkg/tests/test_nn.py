import math

import numpy as np
import pytest

from mirp import physics as ph
from mirp.nn import (AdamState, CheckpointError, Conv1d, CwFrontEnd, DecimatingFrontEnd, Dense,
                     MaxPool1d, Model, ModelSpec, PhysicalLayer, ReLU, TrainingError, adam_step,
                     check_function, checkpoint, grad_check, softmax, softmax_xent)


def layer_check(layer, x, n_coords=200, seed=0, check_input=True):
    """Gradient check of <R, layer(x)> for a fixed random projection R, over
    the layer's parameters and (optionally) its input."""
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal(layer.forward(x).shape)
    params = dict(layer.params)
    if check_input:
        params["__x"] = x

    def f():
        return float(np.sum(layer.forward(x) * proj))

    f()
    layer.zero_grad()
    dx = layer.backward(proj)
    analytic = {k: v.copy() for k, v in layer.grads.items()}
    if check_input:
        analytic["__x"] = dx.copy()
    return check_function(f, params, analytic, n_coords=n_coords, rng=rng)


# --- forward oracles -------------------------------------------------------------

def test_conv_valid_hand_oracle():
    conv = Conv1d(1, 1, 3, padding="valid")
    conv.params["W"][:] = np.array([1.0, 0.0, -1.0]).reshape(1, 1, 3)
    out = conv.forward(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
    np.testing.assert_array_equal(out, [[[-2.0, -2.0]]])


def test_conv_same_padding_and_stride():
    conv = Conv1d(2, 3, 3, padding="same")
    assert conv.forward(np.zeros((4, 2, 10))).shape == (4, 3, 10)
    strided = Conv1d(2, 3, 3, stride=2, padding="valid")
    assert strided.forward(np.zeros((1, 2, 11))).shape == (1, 3, 5)
    with pytest.raises(ph.ShapeError):
        conv.forward(np.zeros((1, 3, 10)))


def test_maxpool_hand_oracle():
    pool = MaxPool1d(3, 1)
    np.testing.assert_array_equal(pool.forward(np.array([[[1.0, 3.0, 2.0, 5.0]]])), [[[3.0, 3.0, 5.0, 5.0]]])
    with pytest.raises(ValueError):
        MaxPool1d(0)


def test_dense_and_softmax_oracles():
    d = Dense(2, 2)
    d.params["W"][:] = [[1.0, 2.0], [3.0, 4.0]]
    d.params["b"][:] = [0.5, -0.5]
    np.testing.assert_array_equal(d.forward(np.array([[1.0, 1.0]])), [[4.5, 5.5]])
    np.testing.assert_allclose(softmax(np.zeros((1, 4))), 0.25)
    loss, grad = softmax_xent(np.zeros((2, 4)), np.array([0, 3]))
    assert loss == pytest.approx(math.log(4))
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        softmax_xent(np.zeros((1, 3)), np.array([3]))
    # stable for large logits
    loss, _ = softmax_xent(np.array([[1000.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_physical_layer_matches_kernel():
    rng = np.random.default_rng(2)
    layer = PhysicalLayer(2, 3, 60, 7, ph.RingParams().gamma, 0.5e-9, rng=rng)
    x = rng.standard_normal((4, 2, 60))
    out = layer.forward(x)
    assert out.shape == (4, 6, 8)
    bank = ph.WeightBank(layer.params["W"], ph.RingParams().gamma, 7)
    fm = ph.mirp_forward(ph.EnvelopeSignal(x[1]), bank, ph.RingParams(), n_sig=1.0)
    np.testing.assert_allclose(out[1], fm.values / fm.amplitude, rtol=1e-12)


def test_front_ends():
    x = np.random.default_rng(0).standard_normal((3, 2, 50))
    cw = CwFrontEnd(2, 50, 5, ph.RingParams().gamma, 0.5e-9)
    assert cw.forward(x).shape == (3, 2, 10)
    dec = DecimatingFrontEnd(2, 50, 5)
    np.testing.assert_array_equal(dec.forward(x), x[..., 4::5])
    assert not cw.params and not dec.params


def test_degenerate_weights():
    layer = PhysicalLayer(1, 2, 10, 1, 1e9, 0.5e-9)
    layer.params["W"][:] = 0.0
    with pytest.raises(ph.DegenerateWeightsError):
        layer.forward(np.ones((1, 1, 10)))


# --- gradients -----------------------------------------------------------------

@pytest.mark.parametrize("make, shape", [
    (lambda r: Conv1d(3, 4, 3, rng=r), (2, 3, 12)),
    (lambda r: Conv1d(2, 3, 3, stride=2, padding="valid", rng=r), (2, 2, 11)),
    (lambda r: Dense(15, 6, rng=r), (4, 15)),
    (lambda r: ReLU(), (3, 4, 9)),
    (lambda r: MaxPool1d(3, 1), (3, 4, 9)),
    (lambda r: PhysicalLayer(2, 4, 40, 5, 2 * np.pi * 2e8, 0.5e-9, rng=r), (3, 2, 40)),
    (lambda r: PhysicalLayer(1, 3, 30, 3, 2 * np.pi * 2e8, 0.5e-9, rng=r, train_gamma=True), (2, 1, 30)),
], ids=["conv_same", "conv_strided", "dense", "relu", "maxpool", "physical", "physical_gamma"])
def test_layer_gradients(make, shape):
    rng = np.random.default_rng(11)
    layer = make(rng)
    x = rng.standard_normal(shape)
    physical = isinstance(layer, PhysicalLayer)
    rep = layer_check(layer, x, check_input=not physical)
    available = sum(p.size for p in layer.params.values()) + (0 if physical else x.size)
    assert rep.coordinates >= min(200, available)
    assert rep.passed, rep


@pytest.mark.parametrize("mode", ["mirp", "untrained", "conventional"])
def test_full_stack_gradients(mode):
    spec = ModelSpec(mode, channels=1, length=98, classes=4, modes=4, k=7, gamma=2 * np.pi * 2e8, scale=16)
    model = Model(spec, seed=1)
    rng = np.random.default_rng(4)
    # zero-initialized biases on all-zero windows sit exactly on a ReLU kink,
    # and the zero output layer blocks every upstream gradient; check at a
    # generic point instead
    for name, p in model.params.items():
        if name.endswith(".b"):
            p[:] = rng.uniform(0.05, 0.2, p.shape)
    model.params["fc3.W"][:] = rng.standard_normal(model.params["fc3.W"].shape) * 0.3
    x = rng.standard_normal((6, 1, 98))
    y = rng.integers(0, 4, 6)
    rep = grad_check(model, x, y, n_coords=250)
    assert rep.coordinates >= 200
    assert rep.passed, rep


def test_gradient_check_catches_broken_backward():
    layer = Dense(8, 5, rng=np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((3, 8))
    original = layer.backward

    def broken(grad):
        out = original(grad)
        layer.grads["W"] = layer.grads["W"] * 1.001
        return out

    layer.backward = broken
    assert not layer_check(layer, x).passed


# --- optimizer -----------------------------------------------------------------

def test_adam_first_step_by_hand():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, -0.25])}
    st = AdamState(lr=0.1)
    adam_step(p, g, st)
    # bias-corrected first step moves each coordinate by lr * sign(g)
    np.testing.assert_allclose(p["w"], [0.9, -1.9], rtol=1e-7)
    w1 = p["w"][0]
    adam_step(p, {"w": np.array([0.5, 0.0])}, st)
    m = 0.9 * 0.05 + 0.1 * 0.5
    v = 0.999 * 0.00025 + 0.001 * 0.25
    step = 0.1 * (m / (1 - 0.81)) / (math.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert p["w"][0] == pytest.approx(w1 - step, rel=1e-12)
    assert st.step == 2


def test_adam_rejects_non_finite():
    with pytest.raises(TrainingError):
        adam_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])}, AdamState())


def test_overfit_eight_records():
    rng = np.random.default_rng(0)
    spec = ModelSpec("mirp", channels=1, length=64, classes=4, modes=4, k=4, gamma=2 * np.pi * 2e7, scale=8)
    model = Model(spec, seed=0)
    x = rng.standard_normal((8, 1, 64))
    y = np.arange(8) % 4
    st = AdamState(lr=3e-3)
    for _ in range(200):
        _, grads = model.loss_and_grads(x, y)
        adam_step(model.params, grads, st)
    assert np.all(model.predict(x) == y)


# --- checkpoint ----------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = Model(ModelSpec("mirp", 2, 40, 3, modes=2, k=4, scale=32), seed=3)
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, model.params, "abc123", {"epoch": 4})
    tensors, h, meta = checkpoint.load(path)
    assert h == "abc123" and meta == {"epoch": 4}
    assert set(tensors) == set(model.params)
    for name, arr in model.params.items():
        assert tensors[name].tobytes() == arr.tobytes()
    assert checkpoint.dumps(tensors, h, meta) == path.read_bytes()


def test_checkpoint_corruption():
    buf = checkpoint.dumps({"a": np.arange(5.0)}, "h", {})
    with pytest.raises(CheckpointError):
        checkpoint.loads(b"XXXX" + buf[4:])
    for cut in range(len(buf)):
        with pytest.raises(CheckpointError):
            checkpoint.loads(buf[:cut])
    with pytest.raises(CheckpointError):
        checkpoint.loads(buf + b"\0")


def test_model_set_params_validation():
    model = Model(ModelSpec("conventional", 1, 20, 2, k=2, scale=32), seed=0)
    with pytest.raises(KeyError):
        model.set_params({"nope": np.zeros(1)})
    bad = {k: np.zeros((1,)) for k in model.params}
    with pytest.raises(ValueError):
        model.set_params(bad)
