"""Bicharacteristic flow: conservation, reversal, escape classification."""

import numpy as np
import pytest

from qslab.rays import (
    MetricField,
    bump_metric,
    classify_nontrapping,
    default_ray_sample,
    ellipticity_bounds,
    flat_metric,
    gridded_metric,
    hamiltonian_value,
    integrate_ray,
    stable_ring_radius,
    trap_metric,
)


def test_flat_rays_are_straight_lines():
    m = flat_metric(1)
    path = integrate_ray(m, [0.5], [1.2], ds=0.01, s_max=2.0)
    # Hamilton's equations for |xi|^2 move x at speed 2 xi
    want_x = 0.5 + 2.0 * 1.2 * path.s
    assert np.max(np.abs(path.X[:, 0] - want_x)) < 1e-10
    assert np.max(np.abs(path.Xi - 1.2)) < 1e-12


def test_h_conservation_on_bump():
    m = bump_metric(1, amplitude=0.1, width=2.0)
    path = integrate_ray(m, [0.3], [1.0], ds=0.01, s_max=10.0,
                         drift_tol=1.0e-10, max_refine=8)
    h = path.h
    drift = np.max(np.abs(h - h[0])) / abs(h[0])
    assert drift < 1e-8


def test_h_conservation_2d_trap():
    m = trap_metric(depth=0.8, ring_radius=3.0)
    r0 = stable_ring_radius(m, 1.0, 6.0)
    path = integrate_ray(m, [r0, 0.0], [0.0, 1.0], ds=0.01, s_max=10.0,
                         drift_tol=1.0e-10, max_refine=8)
    drift = np.max(np.abs(path.h - path.h[0])) / abs(path.h[0])
    assert drift < 1e-8


def test_time_reversal_return():
    m = bump_metric(2, amplitude=0.1, width=2.0)
    x0, xi0 = np.array([0.4, -0.2]), np.array([0.9, 0.5])
    fwd = integrate_ray(m, x0, xi0, ds=0.01, s_max=5.0)
    back = integrate_ray(m, fwd.X[-1], fwd.Xi[-1], ds=-0.01, s_max=5.0)
    err = np.linalg.norm(back.X[-1] - x0) + np.linalg.norm(back.Xi[-1] - xi0)
    assert err < 1e-6


def test_ellipticity_sandwich_along_ray():
    m = bump_metric(2, amplitude=0.1, width=2.0)
    sample = np.random.default_rng(0).uniform(-8, 8, size=(200, 2))
    gamma, gamma_inv = ellipticity_bounds(m, sample)
    assert 0 < gamma <= 1 <= gamma_inv
    path = integrate_ray(m, [0.2, 0.1], [1.0, 0.3], ds=0.01, s_max=10.0)
    xi_sq = np.sum(path.Xi ** 2, axis=-1)
    h = path.h
    assert np.all(h <= gamma_inv * xi_sq * (1 + 1e-12))
    assert np.all(h >= gamma * xi_sq * (1 - 1e-12))


def test_flat_metric_all_escape():
    m = flat_metric(1)
    X0, Xi0 = default_ray_sample(1, escape_radius=16.0)
    rep = classify_nontrapping(m, X0, Xi0, escape_radius=16.0, s_budget=40.0)
    assert rep.nontrapping_on_sample
    assert rep.n_undetermined == 0
    assert rep.max_h_drift < 1e-6


def test_small_bump_all_escape_2d():
    m = bump_metric(2, amplitude=0.1, width=2.0)
    X0, Xi0 = default_ray_sample(2, escape_radius=16.0, n_pos=4, n_dir=8)
    rep = classify_nontrapping(m, X0, Xi0, escape_radius=16.0, s_budget=40.0)
    assert rep.nontrapping_on_sample
    assert rep.n_undetermined == 0


def test_trap_metric_not_nontrapping():
    m = trap_metric(depth=0.8, ring_radius=3.0)
    r0 = stable_ring_radius(m, 1.0, 6.0)
    X0 = np.array([[r0, 0.0], [0.5, 0.5]])
    Xi0 = np.array([[0.0, 1.0], [1.0, 0.0]])
    rep = classify_nontrapping(m, X0, Xi0, escape_radius=16.0, s_budget=60.0)
    assert not rep.nontrapping_on_sample
    assert rep.n_undetermined >= 1
    rec = rep.records[0]
    assert not rec.escaped_fwd
    assert rec.status_fwd == "undetermined"


def test_trapped_ray_fine_step_oracle():
    # independent confirmation at 10x finer steps: the tangential ray on
    # the stable ring stays inside half the escape radius for a long time
    m = trap_metric(depth=0.8, ring_radius=3.0)
    r0 = stable_ring_radius(m, 1.0, 6.0)
    path = integrate_ray(m, [r0, 0.0], [0.0, 1.0], ds=1.0e-3, s_max=60.0)
    radii = np.sqrt(np.sum(path.X ** 2, axis=-1))
    assert np.max(radii) < 8.0
    assert np.max(np.abs(path.h - path.h[0])) / abs(path.h[0]) < 1e-6


def test_angular_momentum_conserved_on_trap():
    # rotational symmetry of the trap metric forces x ^ xi to be constant
    m = trap_metric(depth=0.8, ring_radius=3.0)
    r0 = stable_ring_radius(m, 1.0, 6.0)
    path = integrate_ray(m, [r0, 0.0], [0.0, 1.0], ds=0.01, s_max=20.0)
    ell = path.X[:, 0] * path.Xi[:, 1] - path.X[:, 1] * path.Xi[:, 0]
    assert np.max(np.abs(ell - ell[0])) < 1e-6 * abs(ell[0])


def test_stable_ring_radius_location():
    m = trap_metric(depth=0.8, ring_radius=3.0, well_width=1.0)
    r0 = stable_ring_radius(m, 1.0, 6.0)
    # minimum of c(r)/r^2 sits just outside the profile minimum at r=3
    assert 3.0 < r0 < 3.5


def test_gridded_metric_matches_analytic():
    from qslab.grid import Grid
    g = Grid(dim=2, n_points=64, half_width=8.0)
    m = bump_metric(2, amplitude=0.1, width=2.0)
    a_vals = m(g.x)
    gm = gridded_metric(g, a_vals)
    pts = np.random.default_rng(2).uniform(-6, 6, size=(50, 2))
    assert np.max(np.abs(gm(pts) - m(pts))) < 1e-3
    ga, gg = gm.grad_a(pts), m.grad_a(pts)
    assert np.max(np.abs(ga - gg)) < 1e-2


def test_hamiltonian_value_flat():
    m = flat_metric(2)
    xi = np.array([1.0, 2.0])
    assert abs(hamiltonian_value(m, np.zeros(2), xi) - 5.0) < 1e-14


def test_default_ray_sample_shapes():
    X0, Xi0 = default_ray_sample(2, escape_radius=16.0, n_pos=4, n_dir=8)
    assert X0.shape == (4 * 4 * 8, 2)
    assert Xi0.shape == X0.shape
    assert np.allclose(np.sum(Xi0 ** 2, axis=-1), 1.0)
