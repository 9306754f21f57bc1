"""Bicharacteristic ray tracing for second-order principal symbols.

The ray system for h(x, xi) = a_jk(x) xi_j xi_k is

    dX/ds  = 2 a(X) Xi
    dXi/ds = - (grad a)(X) : Xi Xi

integrated with the classical 4th-order one-step scheme. h is conserved
along exact rays; the integrator monitors the discrete drift and refines
steps that exceed the tolerance. Rays run in free space (metrics are flat
outside a bounded region), so escape means leaving a ball for good.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cutoffs import radial_bump, radial_bump_d
from .symbols import Symbol


@dataclass
class MetricField:
    """Symmetric coefficient matrix field x -> a(x) with analytic gradient.

    ``a`` maps (..., dim) -> (..., dim, dim); ``grad_a`` maps
    (..., dim) -> (..., dim, dim, dim) with the derivative axis first
    among the trailing three: grad_a[..., l, j, k] = d_l a_jk.
    """

    dim: int
    a: Callable[[np.ndarray], np.ndarray]
    grad_a: Callable[[np.ndarray], np.ndarray]
    label: str = ""

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.a(np.asarray(x, float))


def flat_metric(dim: int) -> MetricField:
    def a(x):
        out = np.zeros(x.shape[:-1] + (dim, dim))
        for i in range(dim):
            out[..., i, i] = 1.0
        return out

    def grad(x):
        return np.zeros(x.shape[:-1] + (dim, dim, dim))

    return MetricField(dim, a, grad, label="flat")


def conformal_metric(dim: int, c, grad_c, label: str = "") -> MetricField:
    """a = c(x) * identity from a scalar profile and its gradient."""

    def a(x):
        out = np.zeros(x.shape[:-1] + (dim, dim))
        cv = c(x)
        for i in range(dim):
            out[..., i, i] = cv
        return out

    def grad(x):
        out = np.zeros(x.shape[:-1] + (dim, dim, dim))
        gc = grad_c(x)
        for l in range(dim):
            for i in range(dim):
                out[..., l, i, i] = gc[..., l]
        return out

    return MetricField(dim, a, grad, label=label or "conformal")


def bump_metric(dim: int, amplitude: float = 0.1, width: float = 2.0,
                center=None) -> MetricField:
    """a = (1 + amplitude * bump(|x - center| / width)) I, exactly flat
    outside |x - center| >= 2 * width."""
    c0 = np.zeros(dim) if center is None else np.asarray(center, float)

    def c(x):
        r = np.sqrt(np.sum((x - c0) ** 2, axis=-1))
        return 1.0 + amplitude * radial_bump(r / width)

    def grad_c(x):
        d = x - c0
        r = np.sqrt(np.sum(d ** 2, axis=-1))
        safe = np.where(r > 0, r, 1.0)
        rad = amplitude * radial_bump_d(r / width) / width
        return rad[..., None] * d / safe[..., None]

    return MetricField(dim, *_conformal_parts(dim, c, grad_c),
                       label=f"bump(amp={amplitude:g},w={width:g})")


def _conformal_parts(dim, c, grad_c):
    m = conformal_metric(dim, c, grad_c)
    return m.a, m.grad_a


def trap_metric(depth: float = 0.8, ring_radius: float = 3.0,
                well_width: float = 1.0) -> MetricField:
    """2-D conformal metric with an annular well in the profile.

    c(r) = 1 - depth * exp(-((r - ring_radius)/well_width)^2). Conservation
    of h and of angular momentum confines rays launched tangentially near
    the local minimum of c(r)/r^2 to a bounded annulus, so the flow is not
    non-trapping. Elliptic as long as depth < 1.
    """
    if not 0 < depth < 1:
        raise ValueError("depth must be in (0, 1) to stay elliptic")

    def c(x):
        r = np.sqrt(np.sum(x ** 2, axis=-1))
        return 1.0 - depth * np.exp(-((r - ring_radius) / well_width) ** 2)

    def grad_c(x):
        r = np.sqrt(np.sum(x ** 2, axis=-1))
        safe = np.where(r > 0, r, 1.0)
        rad = depth * 2.0 * (r - ring_radius) / well_width ** 2 \
            * np.exp(-((r - ring_radius) / well_width) ** 2)
        return rad[..., None] * x / safe[..., None]

    return MetricField(2, *_conformal_parts(2, c, grad_c),
                       label=f"trap(depth={depth:g},r={ring_radius:g})")


def stable_ring_radius(metric: MetricField, r_lo: float, r_hi: float,
                       n: int = 4001) -> float:
    """First interior local minimum of c(r)/r^2 for a conformal metric.

    Tangential launches there sit at the bottom of the effective radial
    well (allowed region is where c(r)/r^2 <= h/l^2), so they are trapped
    whenever the outer barrier exceeds the well value.
    """
    rr = np.linspace(r_lo, r_hi, n)
    x = np.stack([rr, np.zeros_like(rr)], axis=-1)
    G = metric(x)[..., 0, 0] / rr ** 2
    interior = np.where((G[1:-1] < G[:-2]) & (G[1:-1] <= G[2:]))[0]
    if len(interior):
        return float(rr[interior[0] + 1])
    return float(rr[np.argmin(G)])


def gridded_metric(grid, a_values: np.ndarray) -> MetricField:
    """Metric from per-point samples on a periodic grid, cubic interpolation.

    ``a_values`` has shape ``grid.shape + (dim, dim)``. Gradients come from
    lattice differentiation of the samples, interpolated the same way.
    Queries are wrapped into the box.
    """
    from scipy.interpolate import RegularGridInterpolator
    from .grid import spectral_derivative

    dim = grid.dim
    pad_ax = np.concatenate([grid.axis, [grid.half_width]])

    def padded(vals):
        if dim == 1:
            return np.concatenate([vals, vals[:1]])
        v = np.concatenate([vals, vals[:1, :]], axis=0)
        return np.concatenate([v, v[:, :1]], axis=1)

    def interp(vals):
        return RegularGridInterpolator((pad_ax,) * dim, padded(vals),
                                       method="cubic")

    a_interp = [[interp(np.real(a_values[..., i, j])) for j in range(dim)]
                for i in range(dim)]
    g_interp = [[[interp(np.real(
        spectral_derivative(grid, a_values[..., i, j].astype(complex), l)))
        for j in range(dim)] for i in range(dim)] for l in range(dim)]
    L = grid.half_width

    def wrap(x):
        return (x + L) % (2.0 * L) - L

    def a(x):
        x = wrap(np.asarray(x, float))
        pts = x.reshape(-1, dim)
        out = np.empty(pts.shape[:-1] + (dim, dim))
        for i in range(dim):
            for j in range(dim):
                out[..., i, j] = a_interp[i][j](pts)
        return out.reshape(x.shape[:-1] + (dim, dim))

    def grad(x):
        x = wrap(np.asarray(x, float))
        pts = x.reshape(-1, dim)
        out = np.empty(pts.shape[:-1] + (dim, dim, dim))
        for l in range(dim):
            for i in range(dim):
                for j in range(dim):
                    out[..., l, i, j] = g_interp[l][i][j](pts)
        return out.reshape(x.shape[:-1] + (dim, dim, dim))

    return MetricField(dim, a, grad, label="gridded")


def principal_symbol(metric: MetricField) -> Symbol:
    """h(x, xi) = a_jk(x) xi_j xi_k as a Symbol with analytic gradients."""

    def fn(x, xi, t):
        A = metric(x)
        return np.einsum("...jk,...j,...k->...", A, xi, xi)

    def gx(x, xi, t):
        G = metric.grad_a(x)
        return np.einsum("...ljk,...j,...k->...l", G, xi, xi)

    def gxi(x, xi, t):
        A = metric(x)
        return 2.0 * np.einsum("...jk,...k->...j", A, xi)

    return Symbol(2.0, fn, grad_x=gx, grad_xi=gxi,
                  label=f"h[{metric.label}]")


def hamiltonian_value(metric: MetricField, x: np.ndarray,
                      xi: np.ndarray) -> np.ndarray:
    return np.einsum("...jk,...j,...k->...", metric(x), xi, xi)


def ellipticity_bounds(metric: MetricField, x_sample: np.ndarray) -> tuple[float, float]:
    """(gamma, 1/gamma) envelope from eigenvalues over a point sample."""
    A = metric(np.asarray(x_sample, float))
    eig = np.linalg.eigvalsh(A)
    lo, hi = float(np.min(eig)), float(np.max(eig))
    gamma = min(lo, 1.0 / hi) if hi > 0 else 0.0
    return gamma, (1.0 / gamma if gamma > 0 else np.inf)


# ---------------------------------------------------------------------------
# integration

def _rhs(metric: MetricField, X: np.ndarray, Xi: np.ndarray):
    A = metric(X)
    G = metric.grad_a(X)
    dX = 2.0 * np.einsum("...jk,...k->...j", A, Xi)
    dXi = -np.einsum("...ljk,...j,...k->...l", G, Xi, Xi)
    return dX, dXi


def _rk4_step(metric, X, Xi, ds):
    k1x, k1p = _rhs(metric, X, Xi)
    k2x, k2p = _rhs(metric, X + 0.5 * ds * k1x, Xi + 0.5 * ds * k1p)
    k3x, k3p = _rhs(metric, X + 0.5 * ds * k2x, Xi + 0.5 * ds * k2p)
    k4x, k4p = _rhs(metric, X + ds * k3x, Xi + ds * k3p)
    Xn = X + ds / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    Xin = Xi + ds / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    return Xn, Xin


@dataclass
class RayPath:
    s: np.ndarray
    X: np.ndarray          # (n_steps+1, dim)
    Xi: np.ndarray
    h: np.ndarray
    max_step_drift: float  # max per-step |h_{i+1} - h_i| / max(|h_0|, tiny)


def integrate_ray(metric: MetricField, x0, xi0, ds: float, s_max: float,
                  drift_tol: float = 1.0e-6,
                  max_refine: int = 6) -> RayPath:
    """Integrate one ray, storing the full path. Negative ds runs backward."""
    x0 = np.atleast_1d(np.asarray(x0, float))
    xi0 = np.atleast_1d(np.asarray(xi0, float))
    n_steps = int(round(abs(s_max / ds)))
    X = np.empty((n_steps + 1, metric.dim))
    Xi = np.empty_like(X)
    X[0], Xi[0] = x0, xi0
    h0 = float(hamiltonian_value(metric, x0, xi0))
    scale = max(abs(h0), 1e-300)
    drift = 0.0
    for i in range(n_steps):
        xc, pc = X[i], Xi[i]
        sub, level = 1, 0
        while True:
            xn, pn = xc, pc
            for _ in range(sub):
                xn, pn = _rk4_step(metric, xn, pn, ds / sub)
            step_drift = abs(float(hamiltonian_value(metric, xn, pn)) -
                             float(hamiltonian_value(metric, xc, pc))) / scale
            if step_drift <= drift_tol or level >= max_refine:
                break
            sub *= 2
            level += 1
        drift = max(drift, step_drift)
        X[i + 1], Xi[i + 1] = xn, pn
    s = np.arange(n_steps + 1) * ds
    h = hamiltonian_value(metric, X, Xi)
    return RayPath(s, X, Xi, h, drift)


@dataclass
class RayRecord:
    x0: np.ndarray
    xi0: np.ndarray
    escaped_fwd: bool
    s_exit_fwd: float      # nan when undetermined
    escaped_bwd: bool
    s_exit_bwd: float
    h_drift: float

    @property
    def status_fwd(self) -> str:
        return "escaped" if self.escaped_fwd else "undetermined"

    @property
    def status_bwd(self) -> str:
        return "escaped" if self.escaped_bwd else "undetermined"


@dataclass
class NontrappingReport:
    metric_label: str
    escape_radius: float
    s_budget: float
    records: list
    nontrapping_on_sample: bool
    n_undetermined: int
    worst_exit: float      # largest min(s_fwd, s_bwd) over escaped rays
    max_h_drift: float


def _batch_escape(metric, X0, Xi0, ds, s_budget, escape_radius,
                  drift_tol=1.0e-6, max_refine=4):
    """Vectorized forward integration of a ray batch until escape or budget.

    Returns (escaped mask, exit parameter, max relative h drift per ray).
    """
    X, Xi = X0.copy(), Xi0.copy()
    B = X.shape[0]
    h_prev = hamiltonian_value(metric, X, Xi)
    scale = np.maximum(np.abs(h_prev), 1e-300)
    escaped = np.zeros(B, dtype=bool)
    s_exit = np.full(B, np.nan)
    drift = np.zeros(B)
    n_steps = int(round(abs(s_budget / ds)))
    active = ~escaped
    for i in range(n_steps):
        if not active.any():
            break
        sub, level = 1, 0
        while True:
            xn, pn = X[active], Xi[active]
            for _ in range(sub):
                xn, pn = _rk4_step(metric, xn, pn, ds / sub)
            h_new = hamiltonian_value(metric, xn, pn)
            step_drift = np.abs(h_new - h_prev[active]) / scale[active]
            if np.max(step_drift, initial=0.0) <= drift_tol or level >= max_refine:
                break
            sub *= 2
            level += 1
        drift[active] = np.maximum(drift[active], step_drift)
        X[active], Xi[active] = xn, pn
        h_prev[active] = h_new
        out = np.zeros(B, dtype=bool)
        out[active] = np.sqrt(np.sum(xn ** 2, axis=-1)) > escape_radius
        newly = out & active
        s_exit[newly] = (i + 1) * abs(ds)
        escaped |= newly
        active = active & ~newly
    return escaped, s_exit, drift


def default_ray_sample(dim: int, escape_radius: float,
                       n_pos: int = 8, n_dir: int = 16):
    """Lattice of launch positions on |x|_inf <= escape_radius/2 crossed
    with unit directions; returns (X0, Xi0) arrays."""
    ax = np.linspace(-escape_radius / 2.0, escape_radius / 2.0, n_pos)
    if dim == 1:
        pos = ax[:, None]
        dirs = np.array([[1.0], [-1.0]])
    else:
        mesh = np.meshgrid(ax, ax, indexing="ij")
        pos = np.stack([m.ravel() for m in mesh], axis=-1)
        th = np.linspace(0.0, 2.0 * np.pi, n_dir, endpoint=False)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
    X0 = np.repeat(pos, len(dirs), axis=0)
    Xi0 = np.tile(dirs, (len(pos), 1))
    return X0, Xi0


def classify_nontrapping(metric: MetricField, X0: np.ndarray, Xi0: np.ndarray,
                         escape_radius: float, ds: float = 1.0e-2,
                         s_budget: float = 50.0,
                         n_workers: int = 1) -> NontrappingReport:
    """Escape survey over a ray sample, forward and backward.

    Rays that exhaust the budget without leaving the escape ball are
    reported undetermined, never trapped; the aggregate verdict claims
    non-trapping only when every sampled ray escapes both ways.
    """
    X0 = np.atleast_2d(np.asarray(X0, float))
    Xi0 = np.atleast_2d(np.asarray(Xi0, float))

    def run(batch):
        bx, bxi = batch
        fwd = _batch_escape(metric, bx, bxi, ds, s_budget, escape_radius)
        bwd = _batch_escape(metric, bx, bxi, -ds, s_budget, escape_radius)
        return fwd, bwd

    if n_workers > 1 and len(X0) > 1:
        from concurrent.futures import ThreadPoolExecutor
        chunks = np.array_split(np.arange(len(X0)), n_workers)
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(run, [(X0[c], Xi0[c]) for c in chunks]))
        e_f = np.concatenate([p[0][0] for p in parts])
        s_f = np.concatenate([p[0][1] for p in parts])
        d_f = np.concatenate([p[0][2] for p in parts])
        e_b = np.concatenate([p[1][0] for p in parts])
        s_b = np.concatenate([p[1][1] for p in parts])
        d_b = np.concatenate([p[1][2] for p in parts])
    else:
        (e_f, s_f, d_f), (e_b, s_b, d_b) = run((X0, Xi0))

    records = [RayRecord(X0[i], Xi0[i], bool(e_f[i]), float(s_f[i]),
                         bool(e_b[i]), float(s_b[i]),
                         float(max(d_f[i], d_b[i])))
               for i in range(len(X0))]
    all_escaped = bool(np.all(e_f & e_b))
    n_undet = int(np.sum(~e_f) + np.sum(~e_b))
    both = e_f & e_b
    worst = float(np.max(np.maximum(s_f[both], s_b[both]))) if both.any() else np.nan
    return NontrappingReport(metric.label, escape_radius, s_budget, records,
                             all_escaped, n_undet, worst,
                             float(max(np.max(d_f), np.max(d_b))))
