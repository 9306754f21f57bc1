"""Frozen-coefficient evolution, smoothing diagnostics, diagonalization."""

import numpy as np
import pytest

from qslab.coeffs import freeze_at_state, make_coefficients
from qslab.escape import assemble_gamma, escape_sample, flat_escape_symbol
from qslab.grid import (
    CubePartition,
    Grid,
    StateField,
    l2_norm,
    plane_wave,
    wave_packet,
)
from qslab.linear import (
    BlowupError,
    LinearSystem,
    antidiagonal_residual,
    apriori_report,
    build_vector_system,
    diagonalize,
    evolve,
    gauge_operator,
    gauge_roundtrip_error,
    inverse_sanity,
    plane_wave_probe,
    resolved_spectrum,
    system_from_fields,
)
from qslab.rays import bump_metric
from qslab.symbols import flat_principal


@pytest.fixture(scope="module")
def g():
    return Grid(dim=1, n_points=256, half_width=32.0)


@pytest.fixture(scope="module")
def eye_field(g):
    return np.broadcast_to(np.eye(1), g.shape + (1, 1))


def _resolved_field(g, seed=2):
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    return np.fft.ifftn(resolved_spectrum(g, coef))


def test_free_flow_plane_wave_phase(g, eye_field):
    ls = system_from_fields(g, eye_field)
    u0 = plane_wave(g, 4)
    k = g.mode_frequency(4)
    tr = evolve(ls, u0, 1.0, 1.0e-3, store_every=1000)
    exact = u0.values * np.exp(-1j * k * k)
    assert np.max(np.abs(tr.final().values - exact)) < 1e-8


def test_hyperviscous_decay_exact(g, eye_field):
    # with a = 0 the whole step is the damping multiplier, which is exact
    ls = system_from_fields(g, 0.0 * eye_field, epsilon=1e-2)
    u0 = plane_wave(g, 12)
    k = g.mode_frequency(12)
    tr = evolve(ls, u0, 0.5, 1.0e-3, store_every=500)
    want = np.exp(-1e-2 * 0.5 * k ** 4)
    got = np.max(np.abs(tr.final().values)) / np.max(np.abs(u0.values))
    assert abs(got - want) < 1e-12


def test_second_order_in_time(g):
    a_vals = bump_metric(1, amplitude=0.1, width=2.0)(g.x)
    ls = system_from_fields(g, a_vals)
    u0 = wave_packet(g, [0.0], [g.mode_frequency(16)], 2.0, amplitude=0.01)

    def final_at(dt):
        tr = evolve(ls, u0, 0.25, dt, store_every=int(round(0.25 / dt)))
        return tr.final().values

    ref = final_at(3.125e-5)
    errs = [np.max(np.abs(final_at(dt) - ref))
            for dt in (5e-4, 2.5e-4, 1.25e-4)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(3.3 < r < 4.9 for r in ratios)


def test_divergence_form_conserves_l2(g):
    # zero transport leaves the exact generator skew-adjoint
    a_vals = bump_metric(1, amplitude=0.1, width=2.0)(g.x)
    ls = system_from_fields(g, a_vals)
    u0 = wave_packet(g, [0.0], [g.mode_frequency(16)], 2.0, amplitude=0.01)
    tr = evolve(ls, u0, 0.5, 5.0e-4, store_every=200, filter_frac=0.9)
    drift = abs(l2_norm(tr.final()) - l2_norm(u0)) / l2_norm(u0)
    assert drift < 1e-8


def test_transport_drift_stays_bounded(g):
    # the divergence correction is not skew, so the norm moves, but only
    # by an O(1)-constant factor independent of dt
    cs = make_coefficients("bump-metric", 1, amplitude=0.1, width=2.0)
    u0 = wave_packet(g, [0.0], [g.mode_frequency(16)], 2.0, amplitude=0.01)
    frozen = freeze_at_state(cs, g, StateField(g, np.zeros(g.shape, complex)),
                             0.0, with_time_derivatives=False)
    ls = LinearSystem(frozen=frozen)
    drifts = []
    for dt in (5.0e-4, 2.5e-4):
        tr = evolve(ls, u0, 0.5, dt, store_every=int(round(0.1 / dt)))
        drifts.append(abs(l2_norm(tr.final()) - l2_norm(u0)) / l2_norm(u0))
    assert all(d < 0.02 for d in drifts)
    assert abs(drifts[0] - drifts[1]) < 1e-6


def test_constant_forcing_integrates_exactly(g, eye_field):
    f = 0.3 * np.exp(-g.x[..., 0] ** 2).astype(np.complex128)
    ls = system_from_fields(g, 0.0 * eye_field, f=f)
    u0 = StateField(g, np.zeros(g.shape, dtype=np.complex128))
    # zero data defeats the relative blowup guard, so lift it
    tr = evolve(ls, u0, 0.1, 1.0e-3, store_every=100, guard=1e300)
    assert np.max(np.abs(tr.final().values - 0.1 * f)) < 1e-12


def test_blowup_guard(g, eye_field):
    ls = system_from_fields(g, eye_field, c1=np.full(g.shape, 50.0))
    u0 = wave_packet(g, [0.0], [1.0], 2.0, amplitude=0.01)
    with pytest.raises(BlowupError, match="exceeded"):
        evolve(ls, u0, 1.0, 1.0e-3, store_every=1000)


def test_evolve_step_contract_errors(g, eye_field):
    ls = system_from_fields(g, eye_field)
    u0 = plane_wave(g, 1)
    with pytest.raises(ValueError, match="store_every"):
        evolve(ls, u0, 1.0, 1.0e-3, store_every=7)
    with pytest.raises(ValueError, match="integer number"):
        evolve(ls, u0, 0.0015, 1.0e-3)
    with pytest.raises(ValueError, match="nonnegative"):
        system_from_fields(g, eye_field, epsilon=-1.0)


def test_filter_zeroes_top_band(g, eye_field):
    ls = system_from_fields(g, eye_field)
    rng = np.random.default_rng(0)
    u0 = StateField(g, rng.standard_normal(g.shape)
                    + 1j * rng.standard_normal(g.shape))
    tr = evolve(ls, u0, 1.0e-3, 1.0e-3, filter_frac=0.5)
    coef = np.fft.fftn(tr.final().values)
    high = np.abs(g.k[..., 0]) > 0.5 * g.k_max
    assert np.max(np.abs(coef[high])) < 1e-12


def test_resolved_spectrum_drops_unpaired_mode(g):
    coef = np.ones(g.shape, dtype=np.complex128)
    out = resolved_spectrum(g, coef)
    assert out[g.n_points // 2] == 0.0
    assert out[0] == 1.0


def test_apriori_report_free_flow(g, eye_field):
    ls = system_from_fields(g, eye_field)
    u0 = wave_packet(g, [0.0], [g.mode_frequency(8)], 2.0, amplitude=0.1)
    tr = evolve(ls, u0, 0.2, 1.0e-3, store_every=20)
    rep = apriori_report(tr)
    assert rep.per_cube.shape == (64,)
    assert rep.sup_l2_sq == pytest.approx(l2_norm(u0) ** 2, rel=1e-6)
    assert rep.smoothing_sq > 0
    assert 1.0 <= rep.fitted_A < 2.0
    d = rep.as_dict()
    assert set(d) == {"T", "sup_l2_sq", "smoothing_sq", "lhs", "data_sq",
                      "fitted_A"}


def test_vector_bundle_consistency(g):
    a_vals = bump_metric(1, amplitude=0.1, width=2.0)(g.x)
    ls = system_from_fields(
        g, a_vals,
        b2=np.full(g.shape + (1,), 0.1 + 0.02j),
        c1=np.full(g.shape, 0.05j), c2=np.full(g.shape, 0.02))
    bundle = build_vector_system(ls)
    assert bundle.consistency_error() < 1e-10


def test_diagonalize_constant_b2(g, eye_field):
    ls = system_from_fields(g, eye_field,
                            b2=np.full(g.shape + (1,), 0.1 + 0.05j))
    diag = diagonalize(ls)
    assert diag.S_norm < 0.5
    freqs = [g.mode_frequency(m) for m in (8, 16, 32, 64)]
    rep = antidiagonal_residual(diag, freqs=freqs)
    assert rep.verdict
    assert rep.constants["exponent"] < 0.5
    assert rep.constants["raw_exponent"] > 0.8


def test_corrector_roundtrip(g, eye_field):
    ls = system_from_fields(g, eye_field,
                            b2=np.full(g.shape + (1,), 0.1 + 0.05j))
    diag = diagonalize(ls)
    u = _resolved_field(g)
    v = np.conj(u)
    bu, bv = diag.lam_inverse(*diag.lam_apply(u, v))
    err = max(np.max(np.abs(bu - u)), np.max(np.abs(bv - v)))
    assert err < 1e-8


def test_inverse_sanity_high_frequency(g, eye_field):
    ls = system_from_fields(g, eye_field,
                            b2=np.full(g.shape + (1,), 0.1))
    diag = diagonalize(ls)
    freqs = [g.mode_frequency(m) for m in (8, 16, 32, 64)]
    rep = inverse_sanity(diag, freqs=freqs)
    assert rep.verdict
    assert rep.constants["last"] < 1e-8


def test_plane_wave_probe_single_mode(g):
    probe = plane_wave_probe(g, g.mode_frequency(12))
    assert np.allclose(np.abs(probe), 1.0)
    coef = np.fft.fftn(probe)
    assert np.sum(np.abs(coef) > 1e-6) == 1


def test_gauge_roundtrip_flat(g, eye_field):
    # single near-origin escape term: the verified constant stays small
    # enough for the exponential weights to remain well conditioned
    ls = system_from_fields(g, eye_field)
    part = CubePartition(g)
    betas = np.zeros(part.n_cubes)
    mu0 = int(part.labels[g.n_points // 2])
    p = flat_escape_symbol(1.0, 1)
    gamma = assemble_gamma(flat_principal(1), p, p, part, betas, mu0,
                           escape_sample(1, 1.0))
    assert gamma.C0 < 2.0
    pair = gauge_operator(ls, gamma=gamma, R_cut=2.0)
    assert gauge_roundtrip_error(pair, g) < 1e-6


def test_gauge_falls_back_to_system_data(g, eye_field):
    ls = system_from_fields(g, eye_field)
    with pytest.raises(ValueError, match="escape data"):
        gauge_operator(ls)
