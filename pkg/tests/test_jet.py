import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taylorized.activations import get_activation
from taylorized.jet import (Jet, ScalarSeries, cauchy, cauchy_adjoint_left, compose_coeffs, jet_add,
                            jet_compose, jet_eval_sum, jet_lift_const, jet_lift_param, jet_matmul,
                            jet_mul, jet_scale)
from oracles import fd_taylor_coeffs


def series_jet(name, a):
    act = get_activation(name)
    return jet_compose(ScalarSeries(act.series(a.coeffs[0], a.order)), a)


def test_lift_param():
    np.testing.assert_array_equal(jet_lift_param(2.0, 3.0, 2).coeffs, [2, 3, 0])


def test_lift_const():
    np.testing.assert_array_equal(jet_lift_const(5.0, 3).coeffs, [5, 0, 0, 0])


def test_zero_direction_is_constant_downstream():
    a = jet_lift_param(np.array([0.3, -1.2]), np.zeros(2), 3)
    out = series_jet("tanh", a * a)
    np.testing.assert_array_equal(out.coeffs[1:], 0.0)


def test_const_mul_equals_scale():
    j = jet_lift_param(np.array([1.0, 2.0]), np.array([0.5, -1.0]), 3)
    np.testing.assert_array_equal(jet_mul(jet_lift_const(np.full(2, 2.5), 3), j).coeffs,
                                  jet_scale(j, 2.5).coeffs)


def test_const_through_activation_stays_const():
    out = series_jet("softplus", jet_lift_const(np.array([0.2, 4.0]), 4))
    np.testing.assert_array_equal(out.coeffs[1:], 0.0)


def test_add_and_inverse():
    a, b = Jet(np.array([1.0, 2.0])), Jet(np.array([3.0, 4.0]))
    np.testing.assert_array_equal(jet_add(a, b).coeffs, [4, 6])
    np.testing.assert_array_equal(jet_add(a, Jet(np.zeros(2))).coeffs, a.coeffs)
    np.testing.assert_array_equal(jet_add(jet_scale(a, -1), a).coeffs, [0, 0])


def test_mul_examples():
    np.testing.assert_array_equal(jet_mul(Jet(np.array([1.0, 2.0])), Jet(np.array([3.0, 4.0]))).coeffs, [3, 10])
    one_r = Jet(np.array([1.0, 1.0, 0.0]))
    np.testing.assert_array_equal(jet_mul(one_r, one_r).coeffs, [1, 2, 1])
    t = jet_lift_param(2.0, 1.0, 3)
    np.testing.assert_array_equal(jet_mul(jet_mul(t, t), t).coeffs, [8, 12, 6, 1])


def test_order_mismatch_rejected():
    with pytest.raises(ValueError):
        jet_add(Jet(np.zeros(2)), Jet(np.zeros(3)))


def test_compose_exp():
    out = series_jet("exp", Jet(np.array([0.0, 1.0, 0.0, 0.0])))
    np.testing.assert_allclose(out.coeffs, [1, 1, 0.5, 1 / 6], rtol=1e-15)


def test_compose_square():
    # order-1 input padded to order 2
    out = series_jet("square", Jet(np.array([3.0, 1.0, 0.0])))
    np.testing.assert_array_equal(out.coeffs, [9, 6, 1])
    assert jet_eval_sum(out) == 16.0


def test_compose_tanh_vs_finite_differences():
    g = np.random.default_rng(0)
    a = Jet(g.standard_normal((5, 3)) * [[1], [0.5], [0.3], [0.2], [0.1]])
    out = series_jet("tanh", a)
    ray = lambda r: np.tanh(sum(a.coeffs[j] * r ** j for j in range(5)))
    ref = fd_taylor_coeffs(ray, 4, h=0.05)
    for j in range(5):
        err = np.abs(out.coeffs[j] - ref[j]) / np.maximum(np.abs(ref[j]), 1e-3)
        assert err.max() < 1e-6, j


def test_compose_needs_enough_series():
    with pytest.raises(ValueError):
        jet_compose(ScalarSeries(np.ones(2)), Jet(np.zeros(4)))


def test_eval_sum_zero_direction():
    a = jet_lift_param(np.array([0.7]), np.zeros(1), 2)
    np.testing.assert_array_equal(jet_eval_sum(series_jet("tanh", a)), np.tanh([0.7]))


def test_matmul_jet_matches_expansion():
    g = np.random.default_rng(1)
    A = jet_lift_param(g.standard_normal((2, 3)), g.standard_normal((2, 3)), 2)
    B = jet_lift_param(g.standard_normal((3, 4)), g.standard_normal((3, 4)), 2)
    out = jet_matmul(A, B)
    np.testing.assert_allclose(out.coeffs[2], A.coeffs[1] @ B.coeffs[1], atol=1e-14)
    np.testing.assert_allclose(jet_eval_sum(out), (A.coeffs[0] + A.coeffs[1]) @ (B.coeffs[0] + B.coeffs[1]),
                               atol=1e-13)


def test_order_one_matches_dual_numbers():
    # first-order jets are dual numbers: (a + b eps)(c + d eps) = ac + (ad + bc) eps, tanh' = 1 - tanh^2
    g = np.random.default_rng(2)
    a, b, c, d = g.standard_normal((4, 6))
    x = jet_mul(Jet(np.stack([a, b])), Jet(np.stack([c, d])))
    y = series_jet("tanh", x)
    np.testing.assert_allclose(y.coeffs[0], np.tanh(a * c), rtol=1e-15)
    np.testing.assert_allclose(y.coeffs[1], (1 - np.tanh(a * c) ** 2) * (a * d + b * c), rtol=1e-13)


@given(st.integers(0, 10**6), st.integers(2, 6))
@settings(max_examples=30, deadline=None)
def test_nesting_equivalence(seed, k):
    g = np.random.default_rng(seed)
    base, direc = g.standard_normal(4), g.standard_normal(4)
    hi = series_jet("softplus", jet_mul(jet_lift_param(base, direc, k), jet_lift_param(base, direc, k)))
    lo = series_jet("softplus", jet_mul(jet_lift_param(base, direc, 1), jet_lift_param(base, direc, 1)))
    np.testing.assert_allclose(hi.coeffs[:2], lo.coeffs, rtol=1e-13, atol=1e-15)


@given(st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_cauchy_adjoint_is_transpose(seed):
    g = np.random.default_rng(seed)
    a, b, w = g.standard_normal((3, 4, 3))
    # <w, cauchy(a, b)> == <cauchy_adjoint_left(w, b), a>
    lhs = np.sum(w * cauchy(a, b))
    rhs = np.sum(cauchy_adjoint_left(w, b, np.multiply) * a)
    assert abs(lhs - rhs) < 1e-12


def test_compose_coeffs_skips_zero_terms():
    # series with zero linear coefficient still composes correctly: x^2 series at 0
    s = np.array([0.0, 0.0, 1.0, 0.0])
    a = np.array([0.0, 1.0, 2.0, 0.0])
    # (r + 2r^2)^2 = r^2 + 4r^3 + ...
    np.testing.assert_allclose(compose_coeffs(s, a), [0, 0, 1, 4])
