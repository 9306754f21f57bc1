"""Escape functions and bracket lower bounds.

The flat escape symbol is r(x, xi) = theta_R(xi) * arctan(x . xi / |xi|).
Against h = |xi|^2 its flow derivative is exactly

    {h, r} = 2 theta_R(xi) |xi| / (1 + (x . xi/|xi|)^2)

(h has no x-dependence, so the cutoff gradient never enters), and since
(x . xi/|xi|)^2 <= |x|^2 this dominates 2 theta_R |xi| / <x>^2. Uncentered
variants N*p + r(. - x_mu, .) trade a larger multiple of the global symbol
for positivity near a chosen cube; the verifications below measure the
achievable constants on deterministic phase-space samples by bisection,
each constant linked to its offset the way the source bounds link them
(weight 1/C0 against offset C0), which keeps feasibility monotone.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import CubePartition
from .reports import EstimateReport
from .rays import MetricField, principal_symbol
from .symbols import Symbol, SymbolSample, cutoff_theta, default_symbol_sample, \
    poisson_bracket

BISECT_ITERS = 40


class FlatnessViolationError(ValueError):
    """A coefficient field fails its required spatial decay."""


def flat_escape_symbol(R_cut: float, dim: int) -> Symbol:
    """theta_{R_cut}(xi) * arctan(x . xi / |xi|), with analytic gradients."""
    theta = cutoff_theta(R_cut, dim)

    def parts(x, xi):
        rho = np.sqrt(np.sum(xi ** 2, axis=-1))
        safe = np.where(rho > 0, rho, 1.0)
        w = np.sum(x * xi, axis=-1) / safe
        return rho, safe, w

    def fn(x, xi, t):
        _, _, w = parts(x, xi)
        th = theta(x, xi, t)
        return th * np.arctan(w)

    def gx(x, xi, t):
        _, safe, w = parts(x, xi)
        th = theta(x, xi, t)
        return (th / (safe * (1.0 + w ** 2)))[..., None] * xi

    def gxi(x, xi, t):
        _, safe, w = parts(x, xi)
        th = theta(x, xi, t)
        dth = theta.dxi(x, xi, t)
        dw = (x - (w / safe)[..., None] * xi) / safe[..., None]
        return dth * np.arctan(w)[..., None] \
            + (th / (1.0 + w ** 2))[..., None] * dw

    return Symbol(0.0, fn, grad_x=gx, grad_xi=gxi,
                  label=f"escape(R={R_cut:g})")


@dataclass
class EscapeSymbol:
    """Escape candidate anchored at a cube center."""

    symbol: Symbol
    center: np.ndarray
    n_weight: int
    bump_report: EstimateReport | None = None
    offcenter_report: EstimateReport | None = None


# ---------------------------------------------------------------------------
# sampled brackets and weights

@dataclass
class BracketTable:
    """Bracket and weight values over a phase-space sample, cached so the
    constant bisections reduce to array reweighting."""

    sample: SymbolSample
    bracket: np.ndarray   # (P, Q)
    w_origin: np.ndarray  # |xi| / <x>^2
    xi_mag: np.ndarray    # (Q,)

    def weight_about(self, x0) -> np.ndarray:
        x0 = np.asarray(x0, float)
        d_sq = np.sum((self.sample.x_points - x0) ** 2, axis=-1)
        return self.xi_mag[None, :] / (1.0 + d_sq)[:, None]


def tabulate_bracket(h: Symbol, p: Symbol, sample: SymbolSample,
                     t: float = 0.0) -> BracketTable:
    X = sample.x_points[:, None, :]
    XI = sample.xi_points[None, :, :]
    br = poisson_bracket(h, p)
    vals = np.real(br(X, XI, t))
    xi_mag = np.sqrt(np.sum(sample.xi_points ** 2, axis=-1))
    x_sq = np.sum(sample.x_points ** 2, axis=-1)
    w0 = xi_mag[None, :] / (1.0 + x_sq)[:, None]
    return BracketTable(sample, vals, w0, xi_mag)


def escape_sample(dim: int, R_cut: float, x_extent: float = 16.0,
                  xi_max: float = 1.0e5, n_per_axis: int = 33) -> SymbolSample:
    """Default verification sample: |xi| from 2*R_cut up to xi_max.

    The large magnitude cap is what makes degenerate candidates fail: a
    vanishing bracket cannot hold off B |xi|/<x>^2 - 1/B once |xi| beats
    1/B^2 at the origin."""
    return default_symbol_sample(dim, x_extent=x_extent, xi_min=2.0 * R_cut,
                                 xi_max=xi_max, n_per_axis=n_per_axis)


def _bisect_largest(feasible, lo: float, hi: float,
                    iters: int = BISECT_ITERS) -> float:
    """Largest feasible value in [lo, hi] for a monotone-feasible predicate
    (feasible on an interval containing lo)."""
    if feasible(hi):
        return hi
    if not feasible(lo):
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _worst_point(table: BracketTable, margin: np.ndarray) -> dict:
    i, j = np.unravel_index(np.argmin(margin), margin.shape)
    return {"x": table.sample.x_points[i].tolist(),
            "xi": table.sample.xi_points[j].tolist(),
            "margin": float(margin[i, j])}


def verify_lower_bound(h: Symbol, p: Symbol, sample: SymbolSample,
                       t: float = 0.0, B_floor: float = 0.01) -> EstimateReport:
    """Largest B in (0, 1] with {h,p} >= B |xi|/<x>^2 - 1/B on the sample."""
    table = tabulate_bracket(h, p, sample, t)

    def feasible(B):
        return np.min(table.bracket - B * table.w_origin + 1.0 / B) >= 0.0

    B_star = _bisect_largest(feasible, 1e-12, 1.0)
    margin = table.bracket - B_star * table.w_origin + 1.0 / B_star
    return EstimateReport(
        name=f"escape-lower[{p.label}]",
        constants={"B_star": float(B_star)},
        verdict=bool(B_star > B_floor),
        worst=_worst_point(table, margin))


def verify_offcenter_bound(h: Symbol, p_mu: Symbol, x_mu, sample: SymbolSample,
                           t: float = 0.0, C_cap: float = 4.0,
                           offset_cap: float = 10.0) -> EstimateReport:
    """Largest C1 in (0, C_cap] with {h, p_mu} >= C1 |xi|/<x-x_mu>^2 - offset_cap.

    The offset is a fixed allowance, so the achieved C1 is stable under the
    sample's magnitude cap; the shifted flat identity makes it land at 2."""
    table = tabulate_bracket(h, p_mu, sample, t)
    w_mu = table.weight_about(x_mu)
    C1 = _largest_weight_coefficient(table, w_mu, C_cap, offset_cap)
    margin = table.bracket - C1 * w_mu + offset_cap
    return EstimateReport(
        name=f"escape-offcenter[{p_mu.label}]",
        constants={"C1": float(C1), "C2": float(offset_cap)},
        verdict=bool(C1 > 0.01),
        worst=_worst_point(table, margin))


def _largest_weight_coefficient(table: BracketTable, weight, C_cap, offset_cap):
    def feasible(C1):
        return np.min(table.bracket - C1 * weight + offset_cap) >= 0.0

    return _bisect_largest(feasible, 1e-12, C_cap)


def verify_bump_bound(h: Symbol, p_mu: Symbol, x_mu, sample: SymbolSample,
                      t: float = 0.0, C0_cap: float = 1.0e6,
                      pass_cap: float = 50.0) -> EstimateReport:
    """Two-weight bound {h, p_mu} >= (1/C0)(|xi|/<x>^2 + |xi|/<x-x_mu>^2) - C0.

    Bisects the smallest feasible C0 >= 1 (feasibility is monotone in C0);
    passes when C0 <= pass_cap. Achieved C1 = C2 = 1/C0, C3 = C0.
    """
    table = tabulate_bracket(h, p_mu, sample, t)
    w_mu = table.weight_about(x_mu)
    w_sum = table.w_origin + w_mu

    def infeasible(C0):
        return np.min(table.bracket - w_sum / C0 + C0) < 0.0

    if infeasible(C0_cap):
        return EstimateReport(
            name=f"escape-bump[{p_mu.label}]",
            constants={"C0": float("inf"), "C1": 0.0, "C2": 0.0, "C3": float("inf")},
            verdict=False,
            worst=_worst_point(table, table.bracket - w_sum / C0_cap + C0_cap))
    # largest infeasible point of the complement, then its right neighbor
    lo, hi = 1.0, C0_cap
    if not infeasible(lo):
        C0 = lo
    else:
        for _ in range(BISECT_ITERS):
            mid = np.sqrt(lo * hi)   # log-scale bisection
            if infeasible(mid):
                lo = mid
            else:
                hi = mid
        C0 = hi
    margin = table.bracket - w_sum / C0 + C0
    C1_max = _largest_weight_coefficient(table, w_mu, 4.0, 10.0)
    return EstimateReport(
        name=f"escape-bump[{p_mu.label}]",
        constants={"C0": float(C0), "C1": float(1.0 / C0),
                   "C2": float(1.0 / C0), "C3": float(C0),
                   "C1_max": float(C1_max)},
        verdict=bool(C0 <= pass_cap),
        worst=_worst_point(table, margin))


# ---------------------------------------------------------------------------
# uncentered escape symbols

def uncentered_symbol(p: Symbol, r: Symbol, x_mu, h: Symbol,
                      sample: SymbolSample, t: float = 0.0,
                      N_max: int = 40, pass_cap: float = 50.0) -> EscapeSymbol:
    """Smallest integer N with p_mu = N*p + r(. - x_mu, .) passing the
    two-weight bound; records the achieved constants."""
    x_mu = np.asarray(x_mu, float)
    for N in range(N_max + 1):
        p_mu = r.shifted(x_mu) if N == 0 else N * p + r.shifted(x_mu)
        p_mu.label = f"p[{x_mu.tolist()},N={N}]"
        rep = verify_bump_bound(h, p_mu, x_mu, sample, t, pass_cap=pass_cap)
        if rep.verdict:
            off = verify_offcenter_bound(h, p_mu, x_mu, sample, t)
            return EscapeSymbol(p_mu, x_mu, N, rep, off)
    raise RuntimeError(
        f"no N <= {N_max} makes the bump bound pass at center {x_mu.tolist()}")


# ---------------------------------------------------------------------------
# time stability and metric perturbations

def time_stability_horizon(h_tv: Symbol, p_mu: Symbol, sample: SymbolSample,
                           C0: float, t_max: float = 10.0) -> EstimateReport:
    """Largest sampled t with |{h(t), p_mu} - {h(0), p_mu}| <= (1/C0)|xi|/<x>^2
    everywhere on the sample (bisection over t)."""
    base = tabulate_bracket(h_tv, p_mu, sample, 0.0)
    cap = 1.0 / C0

    def feasible(t):
        cur = tabulate_bracket(h_tv, p_mu, sample, t)
        dev = np.abs(cur.bracket - base.bracket) / np.maximum(base.w_origin, 1e-300)
        return float(np.max(dev)) <= cap

    T1 = _bisect_largest(feasible, 0.0, t_max, iters=BISECT_ITERS)
    return EstimateReport(
        name=f"time-horizon[{p_mu.label}]",
        constants={"T1": float(T1), "C0": float(C0)},
        verdict=bool(T1 > 0.0))


def perturbation_margin(A0: MetricField, A1: MetricField, p_mu: Symbol,
                        sample: SymbolSample, C1: float,
                        eta_cap: float = 10.0) -> EstimateReport:
    """Largest eta with eta |{h_{A1}, p_mu}| <= (1/(2 C1)) |xi|/<x>^2 on the
    sample, for the split metric A0 + eta A1.

    Raises FlatnessViolationError when A1 shows no <x>^-2 decay (its weighted
    size grows from the inner to the outer radial band of the sample).
    """
    xs = sample.x_points
    r = np.sqrt(np.sum(xs ** 2, axis=-1))
    weighted = np.linalg.norm(A1(xs), axis=(-2, -1)) * (1.0 + r ** 2)
    inner = weighted[r <= np.median(r)]
    outer = weighted[r > np.median(r)]
    if len(outer) and len(inner):
        lo = float(np.max(inner))
        hi = float(np.max(outer))
        if hi > 4.0 * max(lo, 1e-12) and hi > 1e-9:
            raise FlatnessViolationError(
                "perturbation shows no <x>^-2 decay on the sample")
    h1 = principal_symbol(A1)
    table = tabulate_bracket(h1, p_mu, sample)
    corr = np.abs(table.bracket) / np.maximum(table.w_origin, 1e-300)
    cap = 1.0 / (2.0 * C1)

    def feasible(eta):
        return eta * float(np.max(corr)) <= cap

    eta_max = _bisect_largest(feasible, 0.0, eta_cap)
    return EstimateReport(
        name="perturbation-margin",
        constants={"eta_max": float(eta_max), "C1": float(C1)},
        verdict=bool(eta_max > 0.0))


# ---------------------------------------------------------------------------
# weighted assembly over cubes

@dataclass
class GammaData:
    """Escape combination p_mu0 + sum_mu beta_mu p_mu with its constants."""

    symbol: Symbol
    mu0: int
    betas: np.ndarray
    C0: float
    C0_prime: float
    C_tilde0: float
    escapes: dict = dc_field(default_factory=dict)


def beta_weights(part: CubePartition, re_w: np.ndarray,
                 cutoff: float = 1.0e-12) -> np.ndarray:
    """Per-cube weights: sup over the double cube of |Re w(x)| for a
    first-order coefficient vector field sampled on the grid."""
    mag = np.linalg.norm(np.real(re_w), axis=-1)
    betas = np.zeros(part.n_cubes)
    for mu in range(part.n_cubes):
        mask = part.double_mask(mu)
        if mask.any():
            betas[mu] = float(np.max(mag[mask]))
    betas[betas <= cutoff] = 0.0
    return betas


def assemble_gamma(h: Symbol, p: Symbol, r: Symbol, part: CubePartition,
                   betas: np.ndarray, mu0: int, sample: SymbolSample,
                   t: float = 0.0, pass_cap: float = 50.0) -> GammaData:
    """Build gamma = p_mu0 + sum_mu beta_mu p_mu over the active cubes and
    derive the gauge strength from the worst verified constant."""
    active = [mu for mu in range(part.n_cubes) if betas[mu] > 0 or mu == mu0]
    escapes = {}
    C0_worst = 1.0
    gamma = None
    for mu in active:
        esc = uncentered_symbol(p, r, part.centers[mu], h, sample, t,
                                pass_cap=pass_cap)
        escapes[mu] = esc
        C0_worst = max(C0_worst, esc.bump_report.constants["C0"])
        coef = 1.0 if mu == mu0 else float(betas[mu])
        if mu == mu0 and betas[mu] > 0:
            coef = 1.0 + float(betas[mu])
        term = coef * esc.symbol
        gamma = term if gamma is None else gamma + term
    C0_prime = 1.0 / C0_worst
    data = GammaData(gamma, mu0, betas, C0_worst, C0_prime,
                     2.0 / C0_prime, escapes)
    data.symbol.label = f"gamma[mu0={mu0}]"
    return data
