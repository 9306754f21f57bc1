"""Doi escape construction: bracket identities, bisected constants, gamma."""

import numpy as np
import pytest

from qslab.escape import (
    FlatnessViolationError,
    assemble_gamma,
    beta_weights,
    escape_sample,
    flat_escape_symbol,
    perturbation_margin,
    tabulate_bracket,
    time_stability_horizon,
    uncentered_symbol,
    verify_bump_bound,
    verify_lower_bound,
    verify_offcenter_bound,
)
from qslab.grid import CubePartition, Grid
from qslab.rays import MetricField, bump_metric, flat_metric, principal_symbol
from qslab.symbols import Symbol, constant_symbol, cutoff_theta, flat_principal


@pytest.fixture(scope="module")
def sample1():
    return escape_sample(1, R_cut=1.0)


@pytest.fixture(scope="module")
def h_flat():
    return flat_principal(1)


@pytest.fixture(scope="module")
def p_flat():
    return flat_escape_symbol(1.0, 1)


def test_flat_arctan_bracket_identity(sample1, h_flat, p_flat):
    # {|xi|^2, theta arctan(x.xi/|xi|)} = 2 theta |xi| / (1 + (x.xi/|xi|)^2)
    table = tabulate_bracket(h_flat, p_flat, sample1)
    X = sample1.x_points[:, None, :]
    XI = sample1.xi_points[None, :, :]
    rho = np.sqrt(np.sum(XI ** 2, axis=-1))
    w = np.sum(X * XI, axis=-1) / rho
    theta = cutoff_theta(1.0, 1)(X, XI, 0.0)
    want = 2.0 * theta * rho / (1.0 + w ** 2)
    scale = np.maximum(np.abs(want), 1.0)
    assert np.max(np.abs(table.bracket - want) / scale) < 1e-10


def test_bracket_identity_dense_pointwise():
    # same identity off the bisection sample, on a fresh random cloud
    rng = np.random.default_rng(4)
    x = rng.uniform(-12, 12, size=(400, 1))
    xi = np.sign(rng.normal(size=(400, 1))) * rng.uniform(2.5, 1e4, size=(400, 1))
    from qslab.symbols import poisson_bracket
    h, p = flat_principal(1), flat_escape_symbol(1.0, 1)
    got = np.real(poisson_bracket(h, p)(x, xi, 0.0))
    rho = np.abs(xi[:, 0])
    w = x[:, 0] * np.sign(xi[:, 0])
    want = 2.0 * rho / (1.0 + w ** 2)
    assert np.max(np.abs(got - want) / np.maximum(want, 1.0)) < 1e-10


def test_flat_lower_bound_near_one(sample1, h_flat, p_flat):
    rep = verify_lower_bound(h_flat, p_flat, sample1)
    assert rep.verdict
    assert rep.constants["B_star"] >= 0.9


def test_degenerate_candidate_fails(sample1, h_flat):
    rep = verify_lower_bound(h_flat, constant_symbol(0.0, 1), sample1)
    assert not rep.verdict
    assert rep.constants["B_star"] < 0.01


def test_uncentered_origin_needs_no_boost(sample1, h_flat, p_flat):
    esc = uncentered_symbol(p_flat, p_flat, [0.0], h_flat, sample1)
    assert esc.n_weight <= 1
    assert esc.bump_report.verdict
    assert esc.offcenter_report.constants["C1"] > 0


def test_uncentered_bump_metric_centers(sample1, p_flat):
    # 0.1-amplitude bump, centers out to L/4 = 8: finite N, positive C1
    h = principal_symbol(bump_metric(1, amplitude=0.1, width=2.0))
    for x_mu in (0.0, 4.0, 8.0):
        esc = uncentered_symbol(p_flat, p_flat, [x_mu], h, sample1)
        assert esc.n_weight < 40
        assert esc.bump_report.verdict
        assert esc.bump_report.constants["C0"] < 50.0
        assert esc.offcenter_report.constants["C1"] > 0


def test_uncentered_n_monotone_in_offset(sample1, p_flat):
    h = principal_symbol(bump_metric(1, amplitude=0.1, width=2.0))
    ns = [uncentered_symbol(p_flat, p_flat, [x], h, sample1).n_weight
          for x in (0.0, 2.0, 4.0, 8.0)]
    assert all(b >= a for a, b in zip(ns, ns[1:]))


def test_offcenter_constant_near_two(sample1, h_flat, p_flat):
    # shifted flat identity: the off-center coefficient saturates at 2
    esc = uncentered_symbol(p_flat, p_flat, [4.0], h_flat, sample1)
    C1 = esc.offcenter_report.constants["C1"]
    assert 1.8 <= C1 <= 2.05


def test_bump_bound_reports_reciprocal_constants(sample1, h_flat, p_flat):
    rep = verify_bump_bound(h_flat, p_flat, [0.0], sample1)
    assert rep.verdict
    c = rep.constants
    assert c["C1"] == pytest.approx(1.0 / c["C0"])
    assert c["C3"] == pytest.approx(c["C0"])


def test_time_stability_horizon(sample1, p_flat):
    # 20 percent temporal wobble on the flat principal part: the horizon is
    # positive but ends before the wobble exceeds the allowed correction
    def fn(x, xi, t):
        return (1.0 + 0.2 * np.sin(t)) * np.sum(xi ** 2, axis=-1)

    def gx(x, xi, t):
        return np.zeros(np.broadcast_shapes(x.shape, xi.shape))

    def gxi(x, xi, t):
        return (1.0 + 0.2 * np.sin(t)) * 2.0 * xi

    h_tv = Symbol(2.0, fn, grad_x=gx, grad_xi=gxi, label="wobble")
    rep = time_stability_horizon(h_tv, p_flat, sample1, C0=30.0, t_max=3.0)
    assert rep.verdict
    assert 0.0 < rep.constants["T1"] < 3.0


def test_time_horizon_full_for_static(sample1, h_flat, p_flat):
    rep = time_stability_horizon(h_flat, p_flat, sample1, C0=30.0, t_max=3.0)
    assert rep.constants["T1"] == pytest.approx(3.0)


def _decaying_perturbation(scale=0.1):
    def a(x):
        r_sq = np.sum(x ** 2, axis=-1)
        return (scale * np.exp(-r_sq / 4.0))[..., None, None] * np.eye(1)

    def grad_a(x):
        r_sq = np.sum(x ** 2, axis=-1)
        base = (scale * np.exp(-r_sq / 4.0))[..., None, None, None]
        return base * (-0.5 * x)[..., None, None] * np.eye(1)

    return MetricField(1, a, grad_a, label="gauss-pert")


def test_perturbation_margin_positive(sample1, p_flat):
    rep = perturbation_margin(flat_metric(1), _decaying_perturbation(),
                              p_flat, sample1, C1=2.0)
    assert rep.verdict
    assert rep.constants["eta_max"] > 0


def test_perturbation_without_decay_rejected(sample1, p_flat):
    def a(x):
        return (1.0 + np.sum(x ** 2, axis=-1))[..., None, None] * np.eye(1)

    def grad_a(x):
        return (2.0 * x)[..., None, None] * np.eye(1)

    growing = MetricField(1, a, grad_a, label="growing")
    with pytest.raises(FlatnessViolationError):
        perturbation_margin(flat_metric(1), growing, p_flat, sample1, C1=2.0)


def test_beta_weights_cover_support():
    g = Grid(dim=1, n_points=64, half_width=8.0)
    part = CubePartition(g)
    w = np.zeros(g.shape + (1,))
    w[..., 0] = np.exp(-g.x[..., 0] ** 2)
    betas = beta_weights(part, w)
    assert betas.shape == (part.n_cubes,)
    center_cube = int(part.labels[g.n_points // 2])
    assert betas[center_cube] > 0.5
    assert betas[0] < 1e-6


def test_assemble_gamma_flat(sample1, h_flat, p_flat):
    g = Grid(dim=1, n_points=64, half_width=8.0)
    part = CubePartition(g, side=4.0)
    w = np.zeros(g.shape + (1,))
    w[..., 0] = 0.3 * np.exp(-g.x[..., 0] ** 2)
    betas = beta_weights(part, w)
    mu0 = int(part.labels[g.n_points // 2])
    gamma = assemble_gamma(h_flat, p_flat, p_flat, part, betas, mu0, sample1)
    assert gamma.mu0 == mu0
    assert gamma.C0 >= 1.0
    assert gamma.C0_prime == pytest.approx(1.0 / gamma.C0)
    assert gamma.C_tilde0 == pytest.approx(2.0 * gamma.C0)
    assert mu0 in gamma.escapes
    # the combined symbol evaluates finitely on the sample
    vals = gamma.symbol(sample1.x_points[:, None, :],
                        sample1.xi_points[None, :, :], 0.0)
    assert np.all(np.isfinite(vals))
