import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bendkit.errors import ConfigError, DataError, DimensionError, StateError
from bendkit.nn import (
    ModelGraph,
    TrainConfig,
    backward,
    concat,
    dense_forward,
    dropout_forward,
    gru_step,
    mse_loss,
    train,
)
from bendkit.nn.functional import mse_grad
from bendkit.nn.gradcheck import check_graph
from bendkit.nn.store import dumps, loads


def scalar_gru(x, h, W, U, b):
    """Straight-line GRU written element by element with the math module."""
    H = len(h)
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    z, r = [], []
    for i in range(H):
        az = b[i] + sum(W[i][j] * x[j] for j in range(len(x))) + sum(U[i][k] * h[k] for k in range(H))
        ar = b[H + i] + sum(W[H + i][j] * x[j] for j in range(len(x))) + sum(U[H + i][k] * h[k] for k in range(H))
        z.append(sig(az))
        r.append(sig(ar))
    out = []
    for i in range(H):
        ah = b[2 * H + i] + sum(W[2 * H + i][j] * x[j] for j in range(len(x)))
        ah += sum(U[2 * H + i][k] * r[k] * h[k] for k in range(H))
        out.append(z[i] * h[i] + (1 - z[i]) * math.tanh(ah))
    return out


# dense


def test_dense_identity():
    np.testing.assert_array_equal(dense_forward([1, 2], np.eye(2), [0, 0], "linear"), [1, 2])


def test_dense_zero_input_isolates_bias():
    W = np.random.default_rng(0).normal(size=(2, 2))
    np.testing.assert_array_equal(dense_forward([0, 0], W, [3, -1], "linear"), [3, -1])


def test_dense_tanh_scalar():
    expected = float(mpmath.tanh(2))
    out = dense_forward([1.0], [[2.0]], [0.0], "tanh")
    assert out[0] == pytest.approx(expected, rel=1e-15)
    assert out[0] == pytest.approx(0.9640, abs=1e-4)


def test_dense_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(3,\).*\(2, 2\)"):
        dense_forward([1, 2, 3], np.eye(2), [0, 0])


# concat


def test_concat_pair():
    np.testing.assert_array_equal(concat([[1, 2, 3], [4, 5, 6]]), [1, 2, 3, 4, 5, 6])


def test_concat_rejects_empty_operand():
    with pytest.raises(DimensionError):
        concat([[1.0], []])


def test_concat_three():
    np.testing.assert_array_equal(concat([[1], [2], [3]]), [1, 2, 3])


def test_concat_arity():
    with pytest.raises(DimensionError):
        concat([[1.0]])


@given(st.lists(st.integers(1, 5), min_size=2, max_size=6))
def test_concat_width_is_sum(widths):
    parts = [np.arange(w, dtype=float) for w in widths]
    assert concat(parts).shape == (sum(widths),)


# dropout


@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-1e3, 1e3)), st.floats(0, 0.99))
def test_dropout_infer_is_identity(x, rate):
    np.testing.assert_array_equal(dropout_forward(x, rate, "infer"), x)


def test_dropout_zero_rate_train():
    x = np.linspace(-1, 1, 17)
    np.testing.assert_array_equal(dropout_forward(x, 0.0, "train", np.random.default_rng(1)), x)


def test_dropout_rate_one_rejected():
    with pytest.raises(ConfigError):
        dropout_forward([1.0], 1.0, "train")


def test_dropout_fraction_and_scaling():
    out = dropout_forward(np.ones(10**6), 0.5, "train", np.random.default_rng(1234))
    frac = np.mean(out == 0.0)
    assert 0.495 <= frac <= 0.505
    assert set(np.unique(out)) == {0.0, 2.0}


# gru


def test_gru_zero_params_half_update():
    W, U, b = np.zeros((3, 1)), np.zeros((3, 1)), np.zeros(3)
    np.testing.assert_allclose(gru_step([0.0], [1.0], W, U, b), [0.5])


def test_gru_zero_fixed_point():
    W, U, b = np.zeros((3, 1)), np.zeros((3, 1)), np.zeros(3)
    np.testing.assert_array_equal(gru_step([0.0], [0.0], W, U, b), [0.0])


def test_gru_matches_scalar_oracle():
    rng = np.random.default_rng(42)
    n_in, H = 3, 4
    W, U, b = rng.normal(size=(3 * H, n_in)), rng.normal(size=(3 * H, H)), rng.normal(size=3 * H)
    x, h = rng.normal(size=n_in), rng.normal(size=H)
    expected = scalar_gru(x.tolist(), h.tolist(), W.tolist(), U.tolist(), b.tolist())
    np.testing.assert_allclose(gru_step(x, h, W, U, b), expected, rtol=1e-13, atol=1e-14)


def test_gru_shape_error():
    with pytest.raises(DimensionError):
        gru_step([0.0], [0.0, 0.0], np.zeros((3, 1)), np.zeros((3, 1)), np.zeros(3))


def test_graph_gru_layer_matches_oracle_over_sequence():
    g = ModelGraph(seed=42)
    x = g.add_input("x", 2)
    g.set_outputs(g.add_gru(x, 3))
    seq = np.random.default_rng(3).normal(size=(1, 5, 2))
    out = g.forward(seq)
    W, U, b = (g.params[f"gru_0.{k}"].tolist() for k in "WUb")
    h = [0.0, 0.0, 0.0]
    for t in range(5):
        h = scalar_gru(seq[0, t].tolist(), h, W, U, b)
        np.testing.assert_allclose(out[0, t], h, rtol=1e-12, atol=1e-14)


# mse


def test_mse_examples():
    assert mse_loss([1, 2], [1, 2]) == 0.0
    assert mse_loss([0, 0], [1, 1]) == 1.0
    assert mse_loss([1, 2, 3], [2, 2, 5]) == pytest.approx(5 / 3, rel=1e-15)
    assert mse_loss([1, 2, 3], [2, 2, 5]) == pytest.approx(1.6667, abs=1e-4)


def test_mse_shape_mismatch():
    with pytest.raises(DimensionError):
        mse_loss([1, 2], [1, 2, 3])


# dyadic grid keeps squared differences clear of underflow
finite = st.integers(-10**6, 10**6).map(lambda k: k / 1024)


@given(st.integers(1, 20).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=finite), arrays(np.float64, n, elements=finite))))
def test_mse_properties(pair):
    a, b = pair
    assert mse_loss(a, b) == mse_loss(b, a)
    assert mse_loss(a, b) >= 0
    assert (mse_loss(a, b) == 0) == bool(np.array_equal(a, b))


# backward


def test_backward_single_linear_neuron_closed_form():
    g = ModelGraph(seed=0)
    g.set_outputs(g.add_dense(g.add_input("x", 1), 1))
    x, y = np.array([[1.5]]), np.array([[0.25]])
    pred = g.forward(x)
    grads = backward(g, mse_grad(pred, y))
    np.testing.assert_allclose(grads["dense_0.W"], 2 * (pred - y) * x)
    np.testing.assert_allclose(grads["dense_0.b"], (2 * (pred - y)).ravel())


def test_backward_without_forward():
    g = ModelGraph(seed=0)
    g.set_outputs(g.add_dense(g.add_input("x", 1), 1))
    with pytest.raises(StateError):
        g.backward(np.zeros((1, 1)))


def test_zero_loss_grad_gives_zero_grads():
    g = ModelGraph(seed=0)
    h = g.add_gru(g.add_input("x", 2), 3)
    g.set_outputs(g.add_dense(h, 2, "tanh"))
    out = g.forward(np.ones((2, 4, 2)))
    for v in g.backward(np.zeros_like(out)).values():
        assert not v.any()


def _check(g, feeds, target, training=False, states=None, tol=1e-4):
    def loss():
        out = g.forward(feeds, training=training, rng=np.random.default_rng(7), states=states)
        return mse_loss(out, target)

    out = g.forward(feeds, training=training, rng=np.random.default_rng(7), states=states)
    grads = g.backward(mse_grad(out, target))
    errs = check_graph(g, loss, grads)
    assert max(errs.values()) < tol, errs


@pytest.mark.parametrize("act", ["tanh", "relu", "sigmoid", "linear"])
def test_gradcheck_dense(act):
    rng = np.random.default_rng(1)
    g = ModelGraph(seed=1)
    h = g.add_dense(g.add_input("x", 3), 5, act)
    g.set_outputs(g.add_dense(h, 2, act))
    _check(g, rng.normal(size=(4, 3)), rng.normal(size=(4, 2)))


def test_gradcheck_dropout_train():
    rng = np.random.default_rng(2)
    g = ModelGraph(seed=2)
    h = g.add_dropout(g.add_dense(g.add_input("x", 3), 6, "tanh"), 0.5)
    g.set_outputs(g.add_dense(h, 2))
    _check(g, rng.normal(size=(5, 3)), rng.normal(size=(5, 2)), training=True)


@pytest.mark.parametrize("return_sequences", [True, False])
def test_gradcheck_gru(return_sequences):
    rng = np.random.default_rng(3)
    g = ModelGraph(seed=3)
    h = g.add_gru(g.add_input("x", 2), 3)
    h = g.add_gru(h, 4, return_sequences=return_sequences)
    g.set_outputs(g.add_dense(h, 1, "tanh"))
    shape = (2, 5, 1) if return_sequences else (2, 1)
    _check(g, rng.normal(size=(2, 5, 2)), rng.normal(size=shape),
           states={"gru_0": rng.normal(size=(2, 3))})


def test_gradcheck_concat_and_fanout():
    rng = np.random.default_rng(4)
    g = ModelGraph(seed=4)
    a, b = g.add_input("a", 2), g.add_input("b", 1)
    ha = g.add_dense(a, 3, "tanh")
    c = g.add_concat([ha, b, a])
    h1, h2 = g.add_dense(c, 2, "sigmoid"), g.add_dense(c, 2, "relu")
    g.set_outputs(g.add_dense(g.add_concat([h1, h2]), 2))
    feeds = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=(3, 1))}
    _check(g, feeds, rng.normal(size=(3, 2)))


# init, determinism, storage


def _mlp(seed):
    g = ModelGraph(seed=seed)
    h = g.add_dropout(g.add_dense(g.add_input("x", 4), 8, "tanh"), 0.5)
    g.set_outputs(g.add_dense(h, 4, "tanh"))
    return g


def test_equal_seed_equal_params():
    a, b = _mlp(9), _mlp(9)
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    assert any(a.params[k].tobytes() != _mlp(10).params[k].tobytes() for k in a.params)


def test_glorot_bounds_and_zero_bias():
    g = _mlp(0)
    assert np.all(np.abs(g.params["dense_0.W"]) <= math.sqrt(6 / (4 + 8)))
    assert not g.params["dense_0.b"].any()


def test_store_round_trip_bit_exact():
    g = _mlp(5)
    g.params["dense_0.W"][0, 0] = 1 / 3
    blob = dumps(g, {"note": "x"}, {"seed_block": np.arange(3.0)})
    g2, meta, extras = loads(blob)
    assert meta == {"note": "x"}
    assert extras["seed_block"].tolist() == [0.0, 1.0, 2.0]
    for k in g.params:
        assert g.params[k].tobytes() == g2.params[k].tobytes()
    assert dumps(g2, {"note": "x"}, {"seed_block": np.arange(3.0)}) == blob


# training


def test_train_linear_converges():
    g = ModelGraph(seed=0)
    g.set_outputs(g.add_dense(g.add_input("x", 1), 1))
    x = np.linspace(-1, 1, 32).reshape(-1, 1)
    report = train(g, x, 2 * x, TrainConfig(learning_rate=0.05, epochs=200, batch_size=8))
    assert len(report.losses) == 200
    assert report.final_loss < 1e-4


def test_train_zero_epochs_noop():
    g = _mlp(1)
    before = g.copy_params()
    report = train(g, np.zeros((3, 4)), np.zeros((3, 4)), TrainConfig(epochs=0))
    assert report.losses == []
    assert all(np.array_equal(before[k], g.params[k]) for k in before)


def test_train_empty_dataset():
    with pytest.raises(DataError):
        train(_mlp(1), np.zeros((0, 4)), np.zeros((0, 4)), TrainConfig())


def test_train_deterministic():
    x = np.random.default_rng(0).normal(size=(40, 4))
    cfg = TrainConfig(epochs=5, batch_size=7, seed=3)
    r1, r2 = train(_mlp(1), x, np.tanh(x), cfg), train(_mlp(1), x, np.tanh(x), cfg)
    assert r1.losses == r2.losses


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_divergence_guard_restores_params():
    g = _mlp(1)
    x = np.random.default_rng(0).normal(size=(16, 4)) * 100
    cfg = TrainConfig(learning_rate=1e6, epochs=20, optimizer="sgd", divergence_threshold=1e6)
    report = train(g, x, x * 1e4, cfg)
    assert report.aborted
    assert all(np.all(np.isfinite(p)) for p in g.params.values())


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_forward_deterministic(n_in, width, seed):
    def build():
        g = ModelGraph(seed=seed)
        g.set_outputs(g.add_gru(g.add_input("x", n_in), width, return_sequences=False))
        return g
    x = np.random.default_rng(seed).normal(size=(2, 3, n_in))
    assert build().forward(x).tobytes() == build().forward(x).tobytes()
