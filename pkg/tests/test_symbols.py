"""Symbol algebra, analytic gradients, cutoffs, and seminorm tables."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qslab.cutoffs import radial_bump, radial_bump_d, smoothstep
from qslab.symbols import (Symbol, constant_symbol, cutoff_theta,
                           default_symbol_sample, estimate_seminorms,
                           eval_derivative, flat_principal, poisson_bracket,
                           x_symbol, xi_symbol)


def _points(dim, n=40, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-8.0, 8.0, size=(n, dim))
    xi = rng.uniform(-5.0, 5.0, size=(n, dim))
    xi[np.abs(xi) < 0.3] = 0.3
    return x, xi


def test_flat_principal_value():
    h = flat_principal(2)
    x, xi = _points(2)
    assert np.allclose(h(x, xi), np.sum(xi ** 2, axis=-1))
    assert np.allclose(h.dx(x, xi), 0.0)
    assert np.allclose(h.dxi(x, xi), 2.0 * xi)


def test_symbol_arithmetic():
    a = constant_symbol(2.0, 1)
    b = flat_principal(1)
    x, xi = _points(1)
    s = a + b
    p = a * b
    assert np.allclose(s(x, xi), 2.0 + xi[:, 0] ** 2)
    assert np.allclose(p(x, xi), 2.0 * xi[:, 0] ** 2)
    assert s.order == b.order
    assert p.order == b.order
    n = 3.0 * b
    assert np.allclose(n(x, xi), 3.0 * xi[:, 0] ** 2)


def test_product_rule_in_gradients():
    f = x_symbol(lambda x: np.sum(x ** 2, axis=-1),
                 lambda x: 2.0 * x, label="x2")
    g = flat_principal(1)
    prod = f * g
    x, xi = _points(1)
    expect = (2.0 * x) * g(x, xi)[..., None]
    assert np.allclose(prod.dx(x, xi), expect)
    expect_xi = f(x, xi)[..., None] * (2.0 * xi)
    assert np.allclose(prod.dxi(x, xi), expect_xi)


def test_shifted_symbol():
    f = x_symbol(lambda x: np.sum(x ** 2, axis=-1), lambda x: 2.0 * x)
    sh = f.shifted(np.array([1.0]))
    x, xi = _points(1)
    assert np.allclose(sh(x, xi), np.sum((x - 1.0) ** 2, axis=-1))
    assert np.allclose(sh.dx(x, xi), 2.0 * (x - 1.0))


def test_cutoff_theta_supports():
    th = cutoff_theta(2.0, 1)
    x = np.zeros((5, 1))
    inner = th(x, np.array([[0.5], [1.0], [1.9], [-1.5], [0.1]]))
    assert np.allclose(inner, 0.0)
    outer = th(x, np.array([[4.1], [8.0], [-5.0], [40.0], [-4.0]]))
    assert np.allclose(outer, 1.0)
    mid = th(x, np.array([[3.0]]))
    assert 0.0 < float(mid[0]) < 1.0


def test_cutoff_theta_gradient_matches_fd():
    th = cutoff_theta(1.0, 2)
    x, xi = _points(2, seed=5)
    xi = xi * 0.0 + np.array([1.2, 0.9])
    step = 1e-6
    for ax in range(2):
        e = np.zeros(2)
        e[ax] = step
        fd = (th(x, xi + e) - th(x, xi - e)) / (2 * step)
        an = th.dxi(x, xi)[..., ax]
        assert np.max(np.abs(fd - an)) < 1e-6


def test_poisson_bracket_canonical_pair():
    # {|xi|^2, x.e1} = 2 xi_1
    f = x_symbol(lambda x: x[..., 0], lambda x: np.stack(
        [np.ones_like(x[..., 0])] + [np.zeros_like(x[..., 0])], axis=-1))
    h = flat_principal(2)
    br = poisson_bracket(h, f)
    x, xi = _points(2)
    assert np.allclose(br(x, xi), 2.0 * xi[..., 0], atol=1e-10)


def test_eval_derivative_orders():
    # alpha counts xi derivatives, beta counts x derivatives
    h = flat_principal(1)
    x, xi = _points(1)
    d = eval_derivative(h, (2,), (0,), x, xi)
    assert np.allclose(d, 2.0, atol=1e-5)
    d1 = eval_derivative(h, (0,), (2,), x, xi)
    assert np.allclose(d1, 0.0, atol=1e-6)


def test_seminorm_report_flags_order():
    sample = default_symbol_sample(1, x_extent=8.0, xi_max=1e3)
    h = flat_principal(1)
    rep = estimate_seminorms(h, sample, max_alpha=2, max_beta=1,
                             threshold=10.0)
    assert rep.verdict
    # same function claiming order 0 blows the weighted sup
    lying = xi_symbol(0.0, lambda xi: np.sum(xi ** 2, axis=-1),
                      lambda xi: 2.0 * xi, label="order-lie")
    rep_bad = estimate_seminorms(lying, sample, max_alpha=2, max_beta=1,
                                 threshold=10.0)
    assert not rep_bad.verdict


def test_seminorm_decay_in_xi_derivatives():
    sample = default_symbol_sample(1, x_extent=8.0, xi_max=1e3)
    th = cutoff_theta(1.0, 1)
    rep = estimate_seminorms(th, sample, max_alpha=2, max_beta=1,
                             threshold=10.0)
    assert rep.verdict


@settings(max_examples=30, deadline=None)
@given(t=st.floats(-2.0, 3.0))
def test_smoothstep_clamps(t):
    v = float(smoothstep(t))
    assert 0.0 <= v <= 1.0
    if t <= 0:
        assert v == 0.0
    if t >= 1:
        assert v == 1.0


@settings(max_examples=30, deadline=None)
@given(y=st.floats(0.0, 4.0))
def test_radial_bump_profile(y):
    v = float(radial_bump(y))
    assert 0.0 <= v <= 1.0
    if y <= 1.0:
        assert v == 1.0
    if y >= 2.0:
        assert v == 0.0


def test_radial_bump_derivative_fd():
    ys = np.linspace(0.5, 2.5, 41)
    step = 1e-6
    fd = (radial_bump(ys + step) - radial_bump(ys - step)) / (2 * step)
    assert np.max(np.abs(fd - radial_bump_d(ys))) < 1e-6
