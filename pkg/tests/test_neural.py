import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualproxy.archive import ArchiveError
from dualproxy.checks import network_gradcheck
from dualproxy.neural import (
    MLP,
    SGD,
    Adam,
    ModelFormatError,
    init_xavier,
    load_model,
    make_optimizer,
    relu_clamp_head,
    relu_clamp_head_backward,
    save_model,
)


def test_xavier_bound_and_determinism():
    m = init_xavier(0, [2, 3])
    assert np.all(np.abs(m.W[0]) <= np.sqrt(6 / 5))
    a, b = init_xavier(7, [4, 6, 6, 2]), init_xavier(7, [4, 6, 6, 2])
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p, q)


def test_zero_model_outputs_zero():
    m = MLP([3, 5, 5, 2])
    X = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(m.forward(X, train=True)[0], 0.0)
    np.testing.assert_array_equal(m.forward(X)[0], 0.0)


def test_eval_forward_is_pure():
    m = init_xavier(1, [3, 8, 8, 2])
    X = np.random.default_rng(1).normal(size=(5, 3))
    m.forward(X, train=True)
    before = [b.copy() for b in m.buffers()]
    a, b = m.forward(X)[0], m.forward(X)[0]
    np.testing.assert_array_equal(a, b)
    for x, y in zip(before, m.buffers()):
        np.testing.assert_array_equal(x, y)


def test_hand_computed_two_sample_batch_norm():
    m = MLP([1, 1, 1])
    m.W[0][...] = 1.0
    m.W[1][...] = 1.0
    out, _ = m.forward(np.array([[1.0], [3.0]]), train=True)
    # mean 2, biased variance 1: normalized values are -+1/sqrt(1 + eps)
    np.testing.assert_allclose(out, [[0.0], [1.0 / np.sqrt(1.0 + 1e-5)]], rtol=1e-15)
    assert m.running_mean[0][0] == pytest.approx(0.2)
    # running variance uses the unbiased estimate 2
    assert m.running_var[0][0] == pytest.approx(0.9 + 0.1 * 2.0)


def test_train_mode_needs_two_samples():
    with pytest.raises(ValueError):
        init_xavier(0, [2, 3, 1]).forward(np.ones((1, 2)), train=True)
    init_xavier(0, [2, 3, 1], batchnorm=False).forward(np.ones((1, 2)), train=True)


def test_relu_head():
    lam, nu = relu_clamp_head(np.array([[-3.0, 2.0, 5.0]]), 2)
    np.testing.assert_array_equal(lam, [[0.0, 2.0]])
    np.testing.assert_array_equal(nu, [[5.0]])
    raw = np.array([[1.0, 0.5, -4.0]])
    np.testing.assert_array_equal(relu_clamp_head(raw, 2)[0], raw[:, :2])
    g = relu_clamp_head_backward(np.array([[-3.0, 0.0, 5.0]]), np.array([[1.0, 1.0]]), np.array([[7.0]]))
    np.testing.assert_array_equal(g, [[0.0, 1.0, 7.0]])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 100.0))
def test_lambda_head_is_nonnegative(seed, scale):
    rng = np.random.default_rng(seed)
    m = init_xavier(seed, [3, 6, 5])
    for W in m.W:
        W *= scale
    lam, _ = relu_clamp_head(m.forward(rng.normal(size=(4, 3)), train=True)[0], 3)
    assert np.all(lam >= 0)


def test_zero_output_grad_gives_zero_grads():
    m = init_xavier(2, [3, 4, 2])
    out, cache = m.forward(np.random.default_rng(2).normal(size=(3, 3)), train=True)
    for g in m.backward(cache, np.zeros_like(out)):
        np.testing.assert_array_equal(g, 0.0)


@pytest.mark.parametrize("batchnorm,train", [(True, True), (True, False), (False, True)])
def test_backward_matches_finite_differences_tiny_net(batchnorm, train):
    assert network_gradcheck(0, [3, 4, 2], batch=3, batchnorm=batchnorm, train=train) <= 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences_random_nets(seed):
    rng = np.random.default_rng(seed)
    dims = [int(d) for d in rng.integers(2, 9, size=int(rng.integers(2, 6)))]
    for bn, tr in ((True, True), (True, False), (False, True)):
        assert network_gradcheck(seed, dims, batchnorm=bn, train=tr) <= 1e-5


def test_gradcheck_detects_scaled_gradients():
    assert network_gradcheck(0, [3, 4, 2], fault="backprop_scale") > 1e-3


def test_sgd_steps():
    p = [np.array([1.0])]
    SGD(0.1).step(p, [np.array([0.0])])
    assert p[0][0] == 1.0
    SGD(0.1).step(p, [np.array([2.0])], ascent=True)
    assert p[0][0] == pytest.approx(1.2)
    SGD(0.1).step(p, [np.array([2.0])], ascent=False)
    assert p[0][0] == pytest.approx(1.0)


@pytest.mark.parametrize("g", [1e-3, 1.0, 250.0, -7.0])
def test_adam_first_step_is_learning_rate_sized(g):
    p = [np.array([0.0])]
    Adam(0.01).step(p, [np.array([g])], ascent=True)
    assert p[0][0] == pytest.approx(0.01 * np.sign(g), rel=1e-4)


def test_adam_without_momentum_follows_gradient_sign():
    rng = np.random.default_rng(3)
    g = rng.normal(size=5)
    p = [np.zeros(5)]
    Adam(0.1, beta1=0.0, beta2=0.0, eps=1e-300).step(p, [g])
    np.testing.assert_allclose(p[0], 0.1 * np.sign(g))


def test_make_optimizer():
    assert isinstance(make_optimizer("sgd", 1e-5), SGD)
    assert isinstance(make_optimizer("adam", 5e-4), Adam)
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", 1e-3)


def test_model_round_trip(tmp_path):
    m = init_xavier(4, [3, 6, 6, 2])
    X = np.random.default_rng(4).normal(size=(5, 3))
    m.forward(X, train=True)
    path = tmp_path / "m.dpxm"
    digest = save_model(m, path)
    again = load_model(path, expected_out_dim=2, expected_in_dim=3)
    np.testing.assert_array_equal(again.forward(X)[0], m.forward(X)[0])
    assert save_model(again, tmp_path / "m2.dpxm") == digest
    assert (tmp_path / "m2.dpxm").read_bytes() == path.read_bytes()


def test_model_load_errors(tmp_path):
    path = tmp_path / "m.dpxm"
    save_model(init_xavier(0, [3, 4, 2]), path)
    with pytest.raises(ModelFormatError):
        load_model(path, expected_out_dim=5)
    blob = bytearray(path.read_bytes())
    blob[0:5] = b"XXXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(ArchiveError):
        load_model(path)


def test_copy_is_independent():
    m = init_xavier(5, [2, 3, 1])
    c = m.copy()
    c.W[0] += 1.0
    assert not np.array_equal(c.W[0], m.W[0])
