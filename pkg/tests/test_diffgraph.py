import numpy as np
import pytest

from taylorized import diffgraph as dg
from taylorized.models import Architecture, ParamSet, init_params, record_loss
from oracles import backprop_two_layer


def taylor_loss_fn(arch, params0, x, y, k, kind="squared"):
    """``theta -> L^(k)(theta)`` on a fresh tape, anchored at the fixed ``theta0``."""
    def fn(theta):
        tape = dg.Tape(order=k)
        loss, _ = record_loss(tape, arch, params0.with_theta(theta), x, y, kind)
        return loss
    return fn


def displaced(params, scale, seed):
    g = np.random.default_rng(seed)
    return params.with_theta({n: v + scale * g.standard_normal(v.shape) for n, v in params.theta.items()})


def test_quadratic_gradient():
    tape = dg.Tape()
    th = tape.param("theta", np.array([3.0]))
    loss = dg.scale(th * th, 0.5)
    np.testing.assert_array_equal(dg.backward(tape, dg.eval_sum(loss))["theta"], [3.0])


def test_linear_model_taylor_gradient_is_exact():
    # f = w x is linear in w, so f^(1) = f and dL/dw = x (w x - y)
    x, y, w, w0 = 1.7, 0.4, 0.9, 0.2
    tape = dg.Tape(order=1)
    wv = tape.param("w", np.array([[w]]), np.array([[w0]]))
    f = dg.eval_sum(tape.const([[x]]) @ wv)
    loss = dg.squared_loss(f, np.array([[y]]))
    np.testing.assert_allclose(dg.backward(tape, loss)["w"], [[x * (w * x - y)]], rtol=1e-15)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_taylorized_gradients_vs_finite_differences(k):
    arch = Architecture("mlp", (3, 6, 5, 2), "tanh")
    p = displaced(init_params(arch, seed=1), 0.2, 2)
    g = np.random.default_rng(3)
    x, y = g.standard_normal((7, 3)), g.standard_normal((7, 2))
    err = dg.grad_check(taylor_loss_fn(arch, p, x, y, k), p, step=1e-5, n_coords=200)
    assert err < 1e-6


def test_grad_check_quadratic():
    def fn(theta):
        tape = dg.Tape()
        v = tape.param("v", theta["v"])
        return dg.eval_sum(dg.scale(dg.linear_map(v * v, lambda a: a.sum(keepdims=True).reshape(1),
                                                  lambda g: np.broadcast_to(g, (4,)).copy()), 0.5))
    assert dg.grad_check(fn, {"v": np.array([1.0, -2.0, 0.5, 3.0])}) < 1e-10


def test_grad_check_relu_away_from_kinks():
    arch = Architecture("mlp", (4, 8, 2), "relu")
    p = init_params(arch, seed=4)
    g = np.random.default_rng(5)
    while True:
        x = g.standard_normal((6, 4))
        pre = x @ p.theta["layer1/W"] + p.theta["layer1/b"]
        if np.min(np.abs(pre)) > 1e-3:
            break
    err = dg.grad_check(taylor_loss_fn(arch, p, x, np.array([0, 1, 1, 0, 1, 0]), 0, "cross_entropy"), p)
    assert err < 1e-6


def test_linearized_gradient_equals_jacobian_transpose_residual():
    # two-layer net, squared loss, k=1: grad = J(theta0)^T (f^(1) - y) / n
    arch = Architecture("mlp", (3, 5, 1), "tanh")
    p0 = init_params(arch, seed=6)
    p = displaced(p0, 0.3, 7)
    g = np.random.default_rng(8)
    x, y = g.standard_normal((4, 3)), g.standard_normal((4, 1))
    tape = dg.Tape(order=1)
    loss, f1 = record_loss(tape, arch, p, x, y, "squared")
    grads = dg.backward(tape, loss)
    W1, b1, W2 = p0.theta0["layer1/W"], p0.theta0["layer1/b"], p0.theta0["layer2/W"]
    h = np.tanh(x @ W1 + b1)
    r = (f1 - y)[:, 0] / x.shape[0]
    dphi = 1 - h ** 2
    ref = {"layer2/W": h.T @ r[:, None], "layer2/b": np.array([r.sum()]),
           "layer1/W": x.T @ (r[:, None] * dphi * W2[:, 0]), "layer1/b": (r[:, None] * dphi * W2[:, 0]).sum(0)}
    for name, v in ref.items():
        np.testing.assert_allclose(grads[name], v, rtol=1e-8, atol=1e-14)


def test_full_gradient_matches_hand_backprop():
    arch = Architecture("mlp", (3, 5, 2), "tanh")
    p = init_params(arch, seed=9)
    g = np.random.default_rng(10)
    x, y = g.standard_normal((6, 3)), g.standard_normal((6, 2))
    tape = dg.Tape(order=0)
    loss, _ = record_loss(tape, arch, p, x, y, "squared")
    grads = dg.backward(tape, loss)
    ref = backprop_two_layer(p.theta["layer1/W"], p.theta["layer1/b"], p.theta["layer2/W"],
                             p.theta["layer2/b"], x, y)
    for name in ref:
        np.testing.assert_allclose(grads[name], ref[name], rtol=1e-12, atol=1e-15)


def test_gradient_keys_and_determinism():
    arch = Architecture("mlp", (3, 4, 2), "softplus")
    p = displaced(init_params(arch, seed=11), 0.1, 12)
    x = np.random.default_rng(13).standard_normal((5, 3))
    runs = []
    for _ in range(2):
        tape = dg.Tape(order=3)
        loss, _ = record_loss(tape, arch, p, x, np.array([0, 1, 0, 1, 1]), "cross_entropy")
        runs.append(dg.backward(tape, loss))
    assert set(runs[0]) == set(p.names)
    for n in p.names:
        np.testing.assert_array_equal(runs[0][n], runs[1][n])


def test_replay_reproduces_values():
    arch = Architecture("mlp", (3, 4, 2), "tanh")
    p = displaced(init_params(arch, seed=14), 0.1, 15)
    tape = dg.Tape(order=2)
    record_loss(tape, arch, p, np.ones((2, 3)), np.array([0, 1]), "cross_entropy")
    for a, b in zip(tape.replay(), tape.values):
        np.testing.assert_array_equal(a, b)


def test_tape_errors():
    tape = dg.Tape(order=1)
    with pytest.raises(dg.TapeError):
        tape.param("w", np.ones(2))
    tape.param("w", np.ones(2), np.zeros(2))
    with pytest.raises(dg.TapeError):
        tape.param("w", np.ones(2), np.zeros(2))
    v = tape.const(np.ones(3))
    with pytest.raises(dg.TapeError):
        dg.backward(tape, v)
    with pytest.raises(dg.TapeError):
        dg.backward(dg.Tape(), dg.eval_sum(v))


def test_cross_entropy_shift_invariant_gradient():
    tape = dg.Tape()
    z = tape.param("z", np.array([[1.0, 2.0, -1.0]]))
    g1 = dg.backward(tape, dg.cross_entropy(z, np.array([1])))["z"]
    tape = dg.Tape()
    z = tape.param("z", np.array([[8.0, 9.0, 6.0]]))
    g2 = dg.backward(tape, dg.cross_entropy(z, np.array([1])))["z"]
    np.testing.assert_allclose(g1, g2, atol=1e-15)
    np.testing.assert_allclose(g1.sum(), 0.0, atol=1e-15)
