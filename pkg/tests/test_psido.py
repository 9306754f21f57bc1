"""Quantization paths, composition order drop, Neumann inversion, Garding."""

import numpy as np
import pytest

from qslab.grid import Grid, StateField, l2_norm, plane_wave, spectral_derivative, wave_packet
from qslab.psido import (
    NeumannDivergenceError,
    QuantizedOperator,
    composition_remainder,
    detect_kind,
    garding_check,
    neumann_inverse_apply,
    power_norm_estimate,
    quantize,
)
from qslab.symbols import cutoff_theta, flat_principal, x_symbol, xi_symbol


@pytest.fixture(scope="module")
def g64():
    return Grid(dim=1, n_points=64, half_width=8.0)


@pytest.fixture(scope="module")
def g256():
    return Grid(dim=1, n_points=256, half_width=32.0)


def _smooth_field(grid, seed=3):
    rng = np.random.default_rng(seed)
    damp = np.exp(-grid.k_sq / (2.0 * (grid.k_max / 4.0) ** 2))
    coef = damp * (rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape))
    f = np.fft.ifftn(np.conj(grid.phase) * coef) / grid.spacing
    return StateField(grid, f)


def test_detect_kind(g64):
    assert detect_kind(flat_principal(1), g64) == "multiplier"
    assert detect_kind(x_symbol(lambda x: np.sin(x[..., 0])), g64) == "multiplication"
    mixed = x_symbol(lambda x: 1.0 + 0.3 * np.cos(x[..., 0])) * flat_principal(1)
    assert detect_kind(mixed, g64) == "general"


def test_multiplier_path_matches_spectral_derivative(g256):
    u = _smooth_field(g256)
    sym = xi_symbol(1.0, lambda w: 1j * w[..., 0], label="d/dx")
    op = quantize(sym, g256)
    assert op.kind == "multiplier"
    got = op.apply(u).values
    want = spectral_derivative(g256, u.values, 0)
    assert np.max(np.abs(got - want)) < 1e-10


def test_multiplication_path_is_pointwise(g256):
    u = _smooth_field(g256)
    sym = x_symbol(lambda x: 2.0 + np.cos(x[..., 0]))
    op = quantize(sym, g256)
    assert op.kind == "multiplication"
    want = (2.0 + np.cos(g256.x[..., 0])) * u.values
    assert np.max(np.abs(op.apply(u).values - want)) < 1e-10


def test_general_path_agrees_with_fast_paths(g64):
    # force the dense path on symbols that have exact fast evaluations
    u = _smooth_field(g64, seed=5)
    lap = flat_principal(1)
    dense = QuantizedOperator(lap, g64, kind="general")
    fast = QuantizedOperator(lap, g64, kind="multiplier")
    df = fast.apply(u).values
    dg = dense.apply(u).values
    assert np.max(np.abs(df - dg)) < 1e-8 * max(1.0, np.max(np.abs(df)))

    mult = x_symbol(lambda x: 1.0 + 0.5 * np.sin(x[..., 0]))
    dense_m = QuantizedOperator(mult, g64, kind="general")
    fast_m = QuantizedOperator(mult, g64, kind="multiplication")
    mf = fast_m.apply(u).values
    mg = dense_m.apply(u).values
    assert np.max(np.abs(mf - mg)) < 1e-8 * max(1.0, np.max(np.abs(mf)))


def test_general_path_on_plane_wave(g64):
    # Op q on e_m multiplies by q(x, k_m): check against direct tabulation
    sym = x_symbol(lambda x: 1.0 + 0.3 * np.cos(x[..., 0])) * flat_principal(1)
    op = quantize(sym, g64)
    assert op.kind == "general"
    m = 5
    e = plane_wave(g64, m)
    k = g64.mode_frequency(m)
    xi = np.full(g64.shape + (1,), k)
    want = sym(g64.x, xi, 0.0) * e.values
    assert np.max(np.abs(op.apply(e).values - want)) < 1e-8


def test_dense_matrix_matches_apply(g64):
    sym = x_symbol(lambda x: np.exp(-x[..., 0] ** 2 / 8.0)) * flat_principal(1)
    op = quantize(sym, g64)
    u = _smooth_field(g64, seed=9)
    M = op.dense_matrix()
    got = (M @ u.values.reshape(-1)).reshape(g64.shape)
    want = op.apply(u).values
    assert np.max(np.abs(got - want)) < 1e-8


def test_solve_inverts_multiplier(g256):
    u = _smooth_field(g256)
    sym = xi_symbol(2.0, lambda w: 1.0 + np.sum(w ** 2, axis=-1), label="jap2")
    op = quantize(sym, g256)
    back = op.solve(op.apply(u))
    assert np.max(np.abs(back.values - u.values)) < 1e-9


def test_solve_rejects_singular_multiplication(g64):
    # symbol vanishing on the grid cannot be inverted by reciprocal
    sym = x_symbol(lambda x: np.sin(np.pi * x[..., 0] / 8.0))
    op = quantize(sym, g64)
    u = _smooth_field(g64)
    with pytest.raises(NeumannDivergenceError):
        op.solve(u)


def test_solve_general_path(g64):
    sym = (x_symbol(lambda x: 1.0 + 0.2 * np.cos(np.pi * x[..., 0] / 8.0))
           * xi_symbol(2.0, lambda w: 1.0 + np.sum(w ** 2, axis=-1)))
    op = quantize(sym, g64)
    assert op.kind == "general"
    u = _smooth_field(g64, seed=11)
    w = op.apply(u)
    back = op.solve(w)
    assert l2_norm(StateField(g64, back.values - u.values)) < 1e-8 * l2_norm(u)


def test_composition_remainder_order_drop(g256):
    # commutator of a first-order multiplier with a smooth coefficient
    # stays bounded while the symbols grow: fitted exponent under 0.5
    b = xi_symbol(1.0, lambda w: np.sqrt(1.0 + np.sum(w ** 2, axis=-1)), label="jap")
    a = x_symbol(lambda x: 1.0 + 0.5 * np.exp(-x[..., 0] ** 2 / 8.0))
    modes = [4, 8, 16, 32, 64]
    norms, slope = composition_remainder(g256, b, a, modes)
    assert np.all(norms > 0)
    assert slope < 0.5


def test_composition_no_remainder_for_constant(g256):
    b = xi_symbol(1.0, lambda w: np.sqrt(1.0 + np.sum(w ** 2, axis=-1)))
    from qslab.symbols import constant_symbol
    a = constant_symbol(2.0, 1)
    norms, _ = composition_remainder(g256, b, a, [4, 8, 16])
    assert np.max(norms) < 1e-9


def test_neumann_inverse_converges():
    rng = np.random.default_rng(0)
    n = 40
    S = rng.normal(size=(n, n))
    S *= 0.4 / np.linalg.norm(S, 2)
    f = rng.normal(size=n)
    got, terms = neumann_inverse_apply(lambda v: S @ v, f)
    want = np.linalg.solve(np.eye(n) - S, f)
    assert terms < 60
    assert np.linalg.norm(got - want) < 1e-7 * np.linalg.norm(want)


def test_neumann_inverse_diverges():
    rng = np.random.default_rng(1)
    n = 20
    S = rng.normal(size=(n, n))
    S *= 1.8 / np.linalg.norm(S, 2)
    v0 = np.linalg.svd(S)[2][0]
    with pytest.raises(NeumannDivergenceError):
        neumann_inverse_apply(lambda v: S @ v, v0, max_terms=400)


def test_power_norm_estimate_multiplier(g256):
    # largest amplification of (1 - Lap) over the lattice is 1 + k_max^2
    sym = xi_symbol(2.0, lambda w: 1.0 + np.sum(w ** 2, axis=-1))
    op = quantize(sym, g256)
    est = power_norm_estimate(
        lambda v: op.apply(StateField(g256, v)).values, g256.shape, n_iter=60)
    exact = 1.0 + g256.k_max ** 2
    assert 0.9 * exact <= est <= 1.0001 * exact


def test_power_norm_estimate_scalar():
    est = power_norm_estimate(lambda v: 3.0 * v, (16,), n_iter=5)
    assert abs(est - 3.0) < 1e-9


def test_garding_passes_on_truncated_laplacian(g256):
    # |xi|^2 theta_R(xi) is nonnegative: bound must hold with a constant
    # that does not grow with frequency content
    sym = xi_symbol(2.0, lambda w: np.sum(w ** 2, axis=-1), label="lap-cut") * cutoff_theta(4.0, 1)
    rep = garding_check(quantize(sym, g256))
    assert rep.verdict
    assert rep.constants["C"] < 1e-8


def test_garding_flags_wrong_sign(g256):
    # -|xi|^2 has no lower bound uniform in frequency
    sym = xi_symbol(2.0, lambda w: -np.sum(w ** 2, axis=-1), label="neg-lap")
    rep = garding_check(quantize(sym, g256))
    assert not rep.verdict
    assert rep.constants["C_high"] > rep.constants["C_low"]


def test_operator_cache_reuses_tabulation(g64):
    sym = flat_principal(1)
    op = quantize(sym, g64)
    u = _smooth_field(g64)
    op.apply(u, t=0.0)
    tab0 = op._tab(0.0)
    assert op._tab(0.0) is tab0
    assert op._tab(1.0) is not tab0
