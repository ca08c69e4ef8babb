import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from podnet import nn


def _store(**arrays):
    p = nn.ParamStore()
    for k, v in arrays.items():
        p.add(k, v)
    return p


def test_param_store_rejects_duplicates_and_reshapes():
    p = _store(w=np.zeros((2, 3)))
    with pytest.raises(KeyError):
        p.add("w", np.zeros(3))
    with pytest.raises(ValueError):
        p["w"] = np.zeros((3, 2))
    p["w"] = np.ones((2, 3))
    assert p["w"].sum() == 6


# -- mlp_forward ------------------------------------------------------------


def test_mlp_zero_weights_give_zero_output():
    p = nn.ParamStore()
    nn.init_mlp(p, "f", [3, 5, 5, 2], np.random.default_rng(0))
    for k in p:
        p[k] = np.zeros_like(p[k])
    out = nn.mlp_forward(p, "f", np.array([1.0, -2.0, 3.0])).value
    np.testing.assert_array_equal(out, np.zeros(2))


def test_mlp_single_identity_layer():
    p = _store(**{"f.W0": np.eye(3), "f.b0": np.zeros(3)})
    x = np.array([0.3, -1.2, 4.0])
    np.testing.assert_array_equal(nn.mlp_forward(p, "f", x).value, x)


def test_mlp_width_mismatch():
    p = _store(**{"f.W0": np.eye(3), "f.b0": np.zeros(3)})
    with pytest.raises(ValueError):
        nn.mlp_forward(p, "f", np.ones(2))


def test_mlp_init_bounds():
    p = nn.ParamStore()
    nn.init_mlp(p, "f", [16, 8], np.random.default_rng(1))
    assert np.all(np.abs(p["f.W0"]) <= 1 / 4)
    assert np.all(p["f.b0"] == 0)


# -- lstm_step --------------------------------------------------------------


def test_lstm_zero_params_zero_state():
    p = nn.ParamStore()
    nn.init_lstm(p, "l", 3, 4, np.random.default_rng(0))
    for k in p:
        p[k] = np.zeros_like(p[k])
    h, state = nn.lstm_step(p, "l", np.array([1.0, 2.0, 3.0]), nn.LstmState.zeros(4))
    np.testing.assert_array_equal(h.value, np.zeros(4))
    np.testing.assert_array_equal(state.cell.value, np.zeros(4))


def test_lstm_is_pure():
    p = nn.ParamStore()
    nn.init_lstm(p, "l", 3, 4, np.random.default_rng(0))
    x = np.array([0.1, -0.5, 2.0])
    s = nn.LstmState(np.full(4, 0.2), np.full(4, -0.1))
    h1, s1 = nn.lstm_step(p, "l", x, s)
    h2, s2 = nn.lstm_step(p, "l", x, s)
    assert np.array_equal(h1.value, h2.value)
    assert np.array_equal(s1.cell.value, s2.cell.value)


def test_lstm_state_size_mismatch():
    p = nn.ParamStore()
    nn.init_lstm(p, "l", 3, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        nn.lstm_step(p, "l", np.ones(3), nn.LstmState.zeros(5))


def test_lstm_forget_bias_initialised_to_one():
    p = nn.ParamStore()
    nn.init_lstm(p, "l", 3, 4, np.random.default_rng(0))
    np.testing.assert_array_equal(p["l.b"][4:8], np.ones(4))
    np.testing.assert_array_equal(p["l.b"][:4], np.zeros(4))


def test_lstm_matches_textbook_equations():
    rng = np.random.default_rng(3)
    p = nn.ParamStore()
    nn.init_lstm(p, "l", 2, 3, rng)
    x, h, c = rng.normal(size=2), rng.normal(size=3), rng.normal(size=3)
    z = np.concatenate([x, h]) @ p["l.W"] + p["l.b"]
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, g, o = sig(z[:3]), sig(z[3:6]), np.tanh(z[6:9]), sig(z[9:])
    c_ref = f * c + i * g
    h_ref = o * np.tanh(c_ref)
    out, st_ = nn.lstm_step(p, "l", x, nn.LstmState(h, c))
    np.testing.assert_allclose(out.value, h_ref, rtol=1e-14)
    np.testing.assert_allclose(st_.cell.value, c_ref, rtol=1e-14)


# -- gradients --------------------------------------------------------------


def test_sum_of_squares_gradient_is_exact():
    p = _store(a=np.array([1.0, -2.0, 0.5]), b=np.array([[3.0]]))
    g = nn.loss_gradients(lambda q: nn.square(q["a"]).sum() + nn.square(q["b"]).sum(), p)
    np.testing.assert_array_equal(g["a"], 2 * p["a"])
    np.testing.assert_array_equal(g["b"], 2 * p["b"])


def test_nan_loss_raises():
    p = _store(a=np.array([-1.0]))
    with pytest.raises(FloatingPointError):
        nn.loss_gradients(lambda q: nn.log(q["a"]).sum(), p)


def test_fd_check_quadratic():
    p = _store(a=np.random.default_rng(0).normal(size=5))
    assert nn.finite_difference_check(lambda q: nn.square(q["a"]).sum(), p, eps=1e-6) < 1e-8


def test_fd_check_tanh():
    p = _store(a=np.random.default_rng(1).normal(size=5))
    assert nn.finite_difference_check(lambda q: nn.tanh(q["a"]).sum(), p, eps=1e-5) < 1e-6


def test_fd_check_rejects_nonpositive_eps():
    p = _store(a=np.ones(2))
    with pytest.raises(ValueError):
        nn.finite_difference_check(lambda q: q["a"].sum(), p, eps=0.0)


def _primitive_losses():
    """Scalar losses that each exercise one primitive."""
    def lstm_loss(q):
        h, s = nn.lstm_step(q, "l", q["x"], nn.LstmState(q["h"], q["c"]))
        return nn.square(h).sum() + nn.tanh(s.cell).sum()

    return {
        "mul_add": lambda q: (q["c"] * q["h"] + q["c"]).sum() + (q["x"] * 2.0).sum(),
        "matmul": lambda q: nn.tanh(q["x"] @ q["l.W"][:2, :3]).sum(),
        "sigmoid": lambda q: nn.sigmoid(q["h"]).sum(),
        "exp_log": lambda q: nn.log(nn.exp(q["c"]) + 1.0).sum(),
        "softmax": lambda q: (nn.softmax(q["h"]) * np.arange(3.0)).sum(),
        "log_softmax": lambda q: (nn.log_softmax(q["h"]) * np.array([0.2, 0.3, 0.5])).sum(),
        "concat_slice": lambda q: nn.square(nn.concat([q["x"], q["h"][1:]])).sum(),
        "stack": lambda q: nn.tanh(nn.stack([q["h"], q["c"]], axis=0)).sum(),
        "division": lambda q: (q["h"] / (nn.square(q["c"]) + 1.0)).sum(),
        "lstm": lstm_loss,
    }


@pytest.mark.parametrize("name", sorted(_primitive_losses()))
@pytest.mark.parametrize("seed", range(10))
def test_primitive_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    p = nn.ParamStore()
    nn.init_lstm(p, "l", 2, 3, rng)
    p.add("x", rng.normal(size=2))
    p.add("h", rng.normal(size=3))
    p.add("c", rng.normal(size=3))
    assert nn.finite_difference_check(_primitive_losses()[name], p, eps=1e-5) < 1e-4


def test_straight_through_passes_soft_gradient():
    p = _store(z=np.array([0.3, -0.2, 1.1]))
    w = np.array([1.0, 2.0, -3.0])

    def f(q):
        soft = nn.softmax(q["z"])
        hard = (soft.value == soft.value.max()).astype(float)
        return (nn.straight_through(hard, soft) * w).sum()

    g = nn.loss_gradients(f, p)
    g_soft = nn.loss_gradients(lambda q: (nn.softmax(q["z"]) * w).sum(), p)
    np.testing.assert_allclose(g["z"], g_soft["z"], rtol=1e-14)
    out = f({"z": nn.Tensor(p["z"])})
    assert out.value == -3.0


# -- optimiser --------------------------------------------------------------


def test_adam_zero_gradient_is_identity():
    p = _store(a=np.array([1.0, -2.0]))
    zero = _store(a=np.zeros(2))
    q, state = p, None
    for _ in range(5):
        q, state = nn.optimizer_step(q, zero, state, lr=0.1)
    np.testing.assert_array_equal(q["a"], p["a"])
    assert state.step == 5


def test_adam_first_step_is_signed_lr():
    p = _store(a=np.array([1.0, -2.0, 0.5]))
    g = _store(a=np.array([0.3, -5.0, 1e-3]))
    q, state = nn.optimizer_step(p, g, None, lr=0.01)
    np.testing.assert_allclose(q["a"] - p["a"], -0.01 * np.sign(g["a"]), atol=1e-6)
    assert state.step == 1


def test_adam_zero_lr():
    p = _store(a=np.array([1.0, -2.0]))
    g = _store(a=np.array([0.5, 0.5]))
    q, _ = nn.optimizer_step(p, g, None, lr=0.0)
    np.testing.assert_array_equal(q["a"], p["a"])


def test_adam_shape_mismatch():
    p = _store(a=np.zeros(2))
    g = _store(a=np.zeros(3))
    with pytest.raises(ValueError):
        nn.optimizer_step(p, g, None, lr=0.1)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=20), st.integers(min_value=0, max_value=2**31))
def test_adam_zero_gradient_identity_any_step_count(steps, seed):
    p = _store(a=np.random.default_rng(seed).normal(size=3))
    zero = _store(a=np.zeros(3))
    q, state = p, None
    for _ in range(steps):
        q, state = nn.optimizer_step(q, zero, state, lr=1.0)
    np.testing.assert_array_equal(q["a"], p["a"])
