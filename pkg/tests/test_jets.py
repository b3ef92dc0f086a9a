import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kkcheck import jets as J


def fd(func, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    out = []
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        out.append((func(x + e) - func(x - e)) / (2 * h))
    return np.array(out)


def test_variables_are_linear():
    z = J.variables(np.array([[0.5, -1.0, 2.0]]), 2)
    assert np.array_equal(z.value, [[0.5, -1.0, 2.0]])
    g = z.grad()
    assert np.array_equal(g.value[0], np.eye(3))


def test_product_rule_to_third_order():
    z = J.variables(np.array([0.3, -0.4]), 3)
    f = z[0] * z[0] * z[1]
    # f = x^2 y
    assert f.derivative((2, 1)) == pytest.approx(2.0)
    assert f.derivative((1, 1)) == pytest.approx(2 * 0.3)
    assert f.derivative((0, 1)) == pytest.approx(0.09)
    assert f.derivative((3, 0)) == 0.0


def test_transcendental_against_closed_forms():
    z = J.variables(np.array([0.7]), 3)
    x = 0.7
    for jet, derivs in [
        (z[0].sin(), [np.sin(x), np.cos(x), -np.sin(x), -np.cos(x)]),
        (z[0].exp(), [np.exp(x)] * 4),
        (z[0].log(), [np.log(x), 1 / x, -1 / x ** 2, 2 / x ** 3]),
        (z[0].sqrt(), [np.sqrt(x), 0.5 * x ** -0.5, -0.25 * x ** -1.5, 0.375 * x ** -2.5]),
        (z[0].reciprocal(), [1 / x, -1 / x ** 2, 2 / x ** 3, -6 / x ** 4]),
    ]:
        got = [jet.derivative((k,)) for k in range(4)]
        assert np.allclose(got, derivs, rtol=1e-12, atol=1e-12)


coords = st.lists(st.floats(-1, 1), min_size=3, max_size=3)


@settings(max_examples=30, deadline=None)
@given(coords)
def test_composite_gradient_matches_finite_differences(p):
    def f_np(x):
        return np.sin(x[0] * x[1]) * np.exp(0.3 * x[2]) + x[0] ** 3 / (2 + x[1] ** 2)

    z = J.variables(np.array(p), 1)
    f = (z[0] * z[1]).sin() * (z[2] * 0.3).exp() + z[0] * z[0] * z[0] * (z[1] * z[1] + 2).reciprocal()
    assert np.allclose(f.grad().value, fd(f_np, p), atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(coords)
def test_mixed_partials_commute(p):
    z = J.variables(np.array(p), 3)
    f = (z[0] * z[1] + z[2]).cos() * (z[1] + 1.5).power(1.5)
    assert np.allclose(f.d(0).d(1).value, f.d(1).d(0).value, atol=1e-13)
    assert np.allclose(f.d(0).d(1).d(2).value, f.derivative((1, 1, 1)), atol=1e-12)


def test_matrix_inverse_jet(rng):
    pts = rng.uniform(-0.5, 0.5, (4, 2))
    z = J.variables(pts, 2)
    m = J.stack([J.stack([z[..., 0] + 2, z[..., 1]], -1), J.stack([z[..., 0] * z[..., 1], z[..., 1] * 0 + 3], -1)], -2)
    eye = J.matmul(m, J.inv(m))
    assert np.abs(eye.c[..., 0] - np.eye(2)).max() < 1e-14
    assert np.abs(eye.c[..., 1:]).max() < 1e-13


def test_matmul_matches_einsum(rng):
    z = J.variables(rng.uniform(-1, 1, (3, 2)), 1)
    a = J.stack([J.stack([z[..., 0], z[..., 1] * z[..., 0]], -1)] * 2, -2)
    b = J.stack([J.stack([z[..., 1].sin(), z[..., 0] + 1], -1), J.stack([z[..., 1], z[..., 0]], -1)], -2)
    assert np.allclose(J.matmul(a, b).c, J.einsum("...ij,...jk->...ik", a, b).c, atol=1e-15)


def test_truncation_is_prefix():
    z = J.variables(np.array([0.2, 0.1]), 3)
    f = (z[0] + z[1]).exp()
    g = J.variables(np.array([0.2, 0.1]), 1)
    h = (g[0] + g[1]).exp()
    assert np.array_equal(f.truncate(1).c, h.c)


def test_derivative_order_guard():
    z = J.variables(np.array([0.0]), 1)
    with pytest.raises(ValueError):
        z[0].derivative((2,))
