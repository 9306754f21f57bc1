"""Viscous fixed-point solver and the vanishing-viscosity limit.

The damped problem is solved by Picard iteration on the integral map

    (G v)(t) = e^(-eps t lap^2) v0
               + int_0^t e^(-eps (t-t') lap^2) (L(v)v + f)(t') dt'

acting on whole trajectories.  Around it: windowed continuation guarded
by a norm gate, the J^(2m) norm hierarchy, a fitted bound for the
quasilinear operator's size, and the Cauchy-rate measurement of the
damping-to-zero limit with interpolation control of the almost-top
norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace
from typing import Callable

import numpy as np

from .coeffs import (CoefficientSet, BallExcursionError, PreconditionError,
                     quasilinear_rhs, state_vector, state_vector_bound,
                     freeze_at_state)
from .grid import (Grid, StateField, Trajectory, CubePartition, l2_norm,
                   sobolev_norm_values, spectral_gradient, wave_packet)
from .reports import EstimateReport, fit_loglog_slope


class NotContractingError(RuntimeError):
    pass


class SolutionBallError(RuntimeError):
    """Fixed point exists but left the configured solution ball."""


@dataclass
class SolverConfig:
    """Knobs for one damped solve."""

    s: float = 4.0
    M0: float = 1.0
    epsilon: float = 1.0e-2
    T: float = 0.1
    dt: float = 1.0e-3
    picard_tol: float = 1.0e-9
    picard_max: int = 40

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("damped solve needs positive damping")
        if self.s < 2 or self.M0 <= 0 or self.T <= 0 or self.dt <= 0:
            raise ValueError("bad solver configuration")

    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if abs(n * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError("T must be an integer number of steps")
        return n


@dataclass
class ViscousSolution:
    trajectory: Trajectory
    epsilon: float
    hierarchy: np.ndarray = dc_field(repr=False)
    contraction_log: list
    n_iterations: int
    fixed_point_residual: float
    sup_hs: float


def data_size(cfg: SolverConfig, grid: Grid, v0: StateField,
              forcing: Callable | None) -> float:
    """H^s size of the data: norm of v0 plus the integrated forcing."""
    lam = sobolev_norm_values(grid, v0.values, cfg.s)
    if forcing is not None:
        ts = np.arange(cfg.n_steps() + 1) * cfg.dt
        f_norms = [sobolev_norm_values(grid, np.asarray(forcing(t)), cfg.s)
                   for t in ts]
        lam += float(np.trapezoid(f_norms, ts))
    return lam


def _ball_check(cs: CoefficientSet, grid: Grid, values: np.ndarray):
    z = state_vector(grid, values)
    b = state_vector_bound(z)
    if b > cs.ball_radius:
        raise BallExcursionError(
            f"state magnitude {b:.3g} left the coefficient ball "
            f"{cs.ball_radius:.3g}")


def duhamel_map(cs: CoefficientSet, v: Trajectory, v0: StateField,
                eps: float, forcing: Callable | None = None) -> Trajectory:
    """One application of the integral map G to a stored trajectory.

    The damping semigroup acts exactly per subinterval; the source is
    trapezoid-sampled on the stored lattice."""
    grid = v.grid
    dt = v.dt
    decay = np.exp(-eps * grid.k_sq ** 2 * dt)

    def source(i):
        _ball_check(cs, grid, v.values[i])
        g = quasilinear_rhs(cs, grid, v.field(i), float(v.times[i]))
        if forcing is not None:
            g = g + np.asarray(forcing(float(v.times[i])))
        return g

    out = np.empty_like(v.values)
    out[0] = v0.values
    integral = np.zeros(grid.shape, dtype=np.complex128)
    prop = v0.values.copy()
    g_prev = source(0)
    for i in range(1, v.n_times):
        g_here = source(i)
        integral = np.fft.ifftn(decay * np.fft.fftn(
            integral + (dt / 2.0) * g_prev)) + (dt / 2.0) * g_here
        prop = np.fft.ifftn(decay * np.fft.fftn(prop))
        out[i] = prop + integral
        g_prev = g_here
    return Trajectory(grid=grid, times=v.times.copy(), values=out)


def semigroup_trajectory(grid: Grid, v0: StateField, eps: float,
                         T: float, dt: float) -> Trajectory:
    n = int(round(T / dt))
    times = np.arange(n + 1) * dt
    vals = np.empty((n + 1,) + grid.shape, dtype=np.complex128)
    coef = np.fft.fftn(v0.values)
    for i, t in enumerate(times):
        vals[i] = np.fft.ifftn(np.exp(-eps * grid.k_sq ** 2 * t) * coef)
    return Trajectory(grid=grid, times=times, values=vals)


def constant_trajectory(grid: Grid, v0: StateField, T: float,
                        dt: float) -> Trajectory:
    n = int(round(T / dt))
    times = np.arange(n + 1) * dt
    vals = np.broadcast_to(v0.values, (n + 1,) + grid.shape).copy()
    return Trajectory(grid=grid, times=times, values=vals)


def trajectory_distance(a: Trajectory, b: Trajectory, s: float) -> float:
    return max(sobolev_norm_values(a.grid, a.values[i] - b.values[i], s)
               for i in range(a.n_times))


def picard_solve(cs: CoefficientSet, cfg: SolverConfig, v0: StateField,
                 forcing: Callable | None = None,
                 initial: Trajectory | None = None) -> ViscousSolution:
    """Iterate the integral map from the damped free flow of v0.

    Raises NotContractingError after three straight non-shrinking steps;
    checks the H^s data-size precondition and ball membership of every
    returned iterate."""
    grid = v0.grid
    lam = data_size(cfg, grid, v0, forcing)
    if lam >= cfg.M0 / 2.0:
        raise PreconditionError(
            f"data size {lam:.3g} is not below half the ball radius "
            f"{cfg.M0:.3g}")
    v = initial if initial is not None else semigroup_trajectory(
        grid, v0, cfg.epsilon, cfg.T, cfg.dt)
    log = []
    prev_diff = None
    bad_streak = 0
    converged = False
    for it in range(1, cfg.picard_max + 1):
        nxt = duhamel_map(cs, v, v0, cfg.epsilon, forcing)
        diff = trajectory_distance(nxt, v, cfg.s)
        entry = {"iteration": it, "difference": diff}
        if prev_diff is not None and prev_diff > 0:
            entry["ratio"] = diff / prev_diff
            bad_streak = bad_streak + 1 if entry["ratio"] >= 1.0 else 0
        log.append(entry)
        v = nxt
        if diff < cfg.picard_tol:
            converged = True
            break
        if bad_streak >= 3:
            raise NotContractingError(
                "not contracting: shrink the horizon or raise the damping")
        prev_diff = diff
    if not converged:
        raise NotContractingError(
            f"no fixed point within {cfg.picard_max} sweeps "
            "(last difference {:.3e}); shrink the horizon or raise the "
            "damping".format(log[-1]["difference"]))
    residual = trajectory_distance(
        duhamel_map(cs, v, v0, cfg.epsilon, forcing), v, cfg.s)
    sup_hs = v.sup_norm(cfg.s)
    if sup_hs > cfg.M0:
        raise SolutionBallError(
            f"fixed point left the solution ball: sup H^s {sup_hs:.3g} "
            f"> {cfg.M0:.3g}")
    hier = hierarchy_norms(v, cfg.s)
    return ViscousSolution(trajectory=v, epsilon=cfg.epsilon,
                           hierarchy=hier, contraction_log=log,
                           n_iterations=len(log),
                           fixed_point_residual=residual, sup_hs=sup_hs)


def hierarchy_norms(tr: Trajectory, s: float) -> np.ndarray:
    """Table of ||J^(2m) u(t)||_2, rows m = 0..s/2, columns times."""
    levels = int(s // 2) + 1
    grid = tr.grid
    scale = grid.spacing ** grid.dim / grid.size
    out = np.empty((levels, tr.n_times))
    for i in range(tr.n_times):
        base = np.abs(np.fft.fftn(tr.values[i])) ** 2
        w = np.ones(grid.shape)
        for m in range(levels):
            out[m, i] = np.sqrt(np.sum(base * w ** 2) * scale)
            w = w * (1.0 + grid.k_sq)
    return out


def hierarchy_ladder_check(table: np.ndarray, grid: Grid) -> EstimateReport:
    """Levels are finite and grow at most geometrically in m, with the
    grid's top frequency weight as the admissible ratio."""
    cap = 1.0 + grid.dim * grid.k_max ** 2
    entries = []
    ok = bool(np.all(np.isfinite(table)))
    worst = 0.0
    for m in range(table.shape[0] - 1):
        lo, hi = table[m], table[m + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(lo > 0, hi / np.where(lo > 0, lo, 1.0), 0.0)
        rmax = float(np.max(r))
        worst = max(worst, rmax)
        entries.append({"level": m + 1, "max_ratio": rmax})
        ok = ok and rmax <= cap * (1.0 + 1e-9)
    return EstimateReport(name="hierarchy-ladder", entries=entries,
                          constants={"ratio_cap": cap, "worst": worst},
                          verdict=ok)


# ---------------------------------------------------------------------------
# windowed continuation

@dataclass
class ContinuationWindow:
    t_start: float
    t_end: float
    gate_norm: float
    fitted_A: float
    n_iterations: int
    ellipticity_min: float


@dataclass
class ContinuationResult:
    solution: ViscousSolution
    windows: list
    horizon: float
    target: float
    gate_violation_time: float | None = None

    @property
    def reached_target(self) -> bool:
        return self.gate_violation_time is None


def continuation_solve(cs: CoefficientSet, cfg: SolverConfig,
                       u0: StateField, T_target: float,
                       forcing: Callable | None = None,
                       part: CubePartition | None = None
                       ) -> ContinuationResult:
    """Chain fixed-point windows of length cfg.T while the restart norm
    stays under M0/4.

    Each window also freezes the coefficients at its starting state and
    fits the smoothing constant of the window trajectory, the measured
    stand-in for the damping-independent window length."""
    from .linear import apriori_report

    grid = u0.grid
    if part is None:
        part = CubePartition(grid)
    n_windows = int(np.ceil(T_target / cfg.T - 1e-12))
    windows = []
    pieces_t, pieces_v = [], []
    state = u0
    violation = None
    t_off = 0.0
    for w in range(n_windows):
        gate = sobolev_norm_values(grid, state.values, cfg.s)
        if w > 0 and gate > cfg.M0 / 4.0:
            violation = t_off
            break
        sol = picard_solve(cs, cfg, state, forcing)
        tr = sol.trajectory
        frozen = freeze_at_state(cs, grid, state, t_off,
                                 with_time_derivatives=False)
        rep = apriori_report(tr, part)
        windows.append(ContinuationWindow(
            t_start=t_off, t_end=t_off + cfg.T, gate_norm=gate,
            fitted_A=rep.fitted_A, n_iterations=sol.n_iterations,
            ellipticity_min=frozen.ellipticity()[0]))
        first = 1 if w > 0 else 0
        pieces_t.append(tr.times[first:] + t_off)
        pieces_v.append(tr.values[first:])
        state = StateField(grid, tr.values[-1].copy())
        t_off += cfg.T
        last_sol = sol
    if not windows:
        raise PreconditionError("first window gate already violated")
    full = Trajectory(grid=grid, times=np.concatenate(pieces_t),
                      values=np.concatenate(pieces_v))
    hier = hierarchy_norms(full, cfg.s)
    combined = ViscousSolution(
        trajectory=full, epsilon=cfg.epsilon, hierarchy=hier,
        contraction_log=last_sol.contraction_log,
        n_iterations=sum(w.n_iterations for w in windows),
        fixed_point_residual=last_sol.fixed_point_residual,
        sup_hs=full.sup_norm(cfg.s))
    return ContinuationResult(solution=combined, windows=windows,
                              horizon=float(full.times[-1]),
                              target=T_target,
                              gate_violation_time=violation)


def first_failing_horizon(cs: CoefficientSet, cfg: SolverConfig,
                          v0: StateField, forcing: Callable | None = None,
                          max_doublings: int = 12) -> float:
    """Double the window until the fixed-point iteration stops
    contracting; returns the first failing horizon."""
    T = cfg.T
    for _ in range(max_doublings):
        try:
            picard_solve(cs, replace(cfg, T=T), v0, forcing)
        except (NotContractingError, SolutionBallError, BallExcursionError):
            return T
        T *= 2.0
    raise RuntimeError(f"no failure up to horizon {T:g}")


# ---------------------------------------------------------------------------
# quasilinear operator bound

def linearized_apply(cs: CoefficientSet, grid: Grid, u: np.ndarray,
                     v: np.ndarray, t: float = 0.0) -> np.ndarray:
    """The operator with coefficients read at state u acting on v."""
    z = state_vector(grid, u)
    x = grid.x
    coef_v = np.fft.fftn(v)
    hess = np.empty(grid.shape + (grid.dim, grid.dim), dtype=np.complex128)
    for j in range(grid.dim):
        for l in range(j, grid.dim):
            hess[..., j, l] = np.fft.ifftn(
                -grid.k[..., j] * grid.k[..., l] * coef_v)
            hess[..., l, j] = hess[..., j, l]
    grad_v = spectral_gradient(grid, v)
    out = 1j * np.einsum("...jk,...jk->...", cs.a(x, t, z), hess)
    out += np.einsum("...k,...k->...", cs.b1(x, t, z), grad_v)
    out += np.einsum("...k,...k->...", cs.b2(x, t, z), np.conj(grad_v))
    uu = z[..., 0]
    out += cs.c1(x, t, uu, np.conj(uu)) * v
    out += cs.c2(x, t, uu, np.conj(uu)) * np.conj(v)
    return out


@dataclass
class OperatorBoundFit:
    C: float
    P: int
    max_violation: float
    entries: list


def operator_bound_fit(cs: CoefficientSet, grid: Grid, pairs: list,
                       s: float = 4.0, scales=(0.25, 0.5, 1.0, 2.0),
                       P_range=range(1, 7), t: float = 0.0
                       ) -> OperatorBoundFit:
    """Fit ||L(u)v||_{H^(s-2)} <= C ||v||_{H^s} (1 + ||u|| + ||u||^P).

    For each candidate P the constant C covers the middle scales; the
    outer scales are held out and probe whether the form extrapolates.
    The inequality is one-sided, so violation counts only measurements
    that land above the fitted bound."""
    scales = tuple(sorted(scales))
    fit_scales = scales[1:-1] if len(scales) > 2 else scales
    rows = []
    for (u, v) in pairs:
        for lam in scales:
            uu, vv = lam * u, lam * v
            y = sobolev_norm_values(grid, linearized_apply(cs, grid, uu, vv, t),
                                    s - 2.0)
            nu = sobolev_norm_values(grid, uu, s)
            nv = sobolev_norm_values(grid, vv, s)
            rows.append((y, nu, nv, lam))
    trials = []
    for P in P_range:
        ratio = {}
        for y, nu, nv, lam in rows:
            x = nv * (1.0 + nu + nu ** P)
            if x > 0 and y > 0:
                ratio.setdefault(lam, []).append(y / x)
        C = max(max(ratio[lam]) for lam in fit_scales if lam in ratio)
        dev = max((max(r) / C for lam, r in ratio.items()), default=1.0)
        trials.append((C, P, max(dev - 1.0, 0.0)))
    dev_min = min(t[2] for t in trials)
    C, P, dev = next(t for t in trials
                     if t[2] <= dev_min + 1e-6 * (1.0 + dev_min))
    entries = [{"scale": lam, "measured": y, "bound": C * nv * (1 + nu + nu ** P)}
               for y, nu, nv, lam in rows]
    return OperatorBoundFit(C=float(C), P=int(P),
                            max_violation=float(dev),
                            entries=entries)


# ---------------------------------------------------------------------------
# vanishing-viscosity limit

@dataclass
class LimitReport:
    eps_list: list
    cauchy: list
    slope: float
    hs1_bounds: list
    monotone: bool
    limit_epsilon: float
    horizon: float

    def as_dict(self) -> dict:
        return {"eps_list": list(self.eps_list), "cauchy": self.cauchy,
                "slope": self.slope, "hs1_bounds": self.hs1_bounds,
                "monotone": self.monotone,
                "limit_epsilon": self.limit_epsilon,
                "horizon": self.horizon}


def vanishing_viscosity(cs: CoefficientSet, cfg: SolverConfig,
                        u0: StateField, T_star: float,
                        eps_list=(1e-2, 5e-3, 2.5e-3, 1.25e-3),
                        forcing: Callable | None = None
                        ) -> tuple[LimitReport, list]:
    """Solve along the damping ladder on a common horizon and measure
    the Cauchy rate of consecutive differences.

    The almost-top-norm differences come from the interpolation bound
    ||w||_{H^(s-1)} <= ||w||_2^(1/s) ||w||_{H^s}^((s-1)/s) with the
    measured solution-ball sizes standing in for ||w||_{H^s}."""
    runs = []
    for eps in eps_list:
        res = continuation_solve(cs, replace(cfg, epsilon=eps), u0,
                                 T_star, forcing)
        if not res.reached_target:
            raise NotContractingError(
                f"ladder run at damping {eps:g} stopped at "
                f"t = {res.gate_violation_time:g} before the common horizon")
        runs.append(res.solution)
    grid = u0.grid
    cauchy, gaps, hs1 = [], [], []
    for a, b, ea, eb in zip(runs, runs[1:], eps_list, eps_list[1:]):
        d = max(np.sqrt(np.sum(np.abs(a.trajectory.values[i]
                                      - b.trajectory.values[i]) ** 2)
                        * grid.spacing ** grid.dim)
                for i in range(a.trajectory.n_times))
        cauchy.append(float(d))
        gaps.append(float(ea - eb))
        mbar = max(a.sup_hs, b.sup_hs)
        hs1.append(float(d ** (1.0 / cfg.s)
                         * (2.0 * mbar) ** ((cfg.s - 1.0) / cfg.s)))
    slope = fit_loglog_slope(np.asarray(gaps), np.asarray(cauchy))
    monotone = bool(np.all(np.diff(cauchy) < 0)
                    and np.all(np.diff(hs1) < 0))
    rep = LimitReport(eps_list=list(eps_list), cauchy=cauchy,
                      slope=float(slope), hs1_bounds=hs1,
                      monotone=monotone,
                      limit_epsilon=float(eps_list[-1]),
                      horizon=float(T_star))
    return rep, runs
