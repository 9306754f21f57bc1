"""Coefficient families for the quasilinear flow and their validators.

The evolution reads

    dt u = i a_jk(x,t,z) dj dk u + b1(x,t,z).grad u + b2(x,t,z).grad conj(u)
           + c1(x,t,u,conj u) u + c2(x,t,u,conj u) conj(u) + f(x,t)

with z = (u, conj u, grad u, conj grad u) stacked into a complex vector of
length 2*dim + 2.  This module holds a registry of concrete coefficient
families, sampled validators for the nonlinear (NL), metric (D), and frozen
linear (L) assumption lists, freezing of coefficients at a state, and the
cube decomposition of transport fields.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .cutoffs import radial_bump
from .grid import (Grid, StateField, CubePartition, spectral_derivative,
                   spectral_gradient)
from .reports import EstimateReport
from . import rays


class BallExcursionError(ValueError):
    """State left the coefficient ball B_M."""


class PreconditionError(ValueError):
    """A validator precondition failed."""


# ---------------------------------------------------------------------------
# state vectors

def state_vector(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Stack (u, conj u, grad u, conj grad u), shape ``grid.shape + (2n+2,)``."""
    n = grid.dim
    z = np.empty(grid.shape + (2 * n + 2,), dtype=np.complex128)
    z[..., 0] = values
    z[..., 1] = np.conj(values)
    g = spectral_gradient(grid, values)
    z[..., 2:2 + n] = g
    z[..., 2 + n:] = np.conj(g)
    return z


def state_vector_bound(z: np.ndarray) -> float:
    """Largest euclidean state magnitude over the grid."""
    return float(np.sqrt(np.max(np.sum(np.abs(z) ** 2, axis=-1))))


def ball_sample(dim: int, radius: float, count: int = 5,
                seed: int = 7) -> np.ndarray:
    """Deterministic states inside the ball, shape (count, 2n+2).

    First row is the origin; the rest sit on shells at fixed fractions of
    the radius."""
    m = 2 * dim + 2
    out = np.zeros((count, m), dtype=np.complex128)
    rng = np.random.default_rng(seed)
    fractions = np.linspace(0.25, 0.85, count - 1)
    for i, frac in enumerate(fractions):
        v = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        out[i + 1] = v * (frac * radius / np.linalg.norm(v))
    return out


# ---------------------------------------------------------------------------
# coefficient sets

@dataclass
class CoefficientSet:
    """Coefficient callables of the quasilinear flow.

    ``a`` maps ``(x, t, z) -> (..., n, n)`` real symmetric; ``b1`` and
    ``b2`` map ``(x, t, z) -> (..., n)`` complex; ``c1`` and ``c2`` map
    ``(x, t, u, conj u) -> (...)``; ``f`` maps ``(x, t) -> (...)``.
    ``x`` always carries a trailing coordinate axis of length ``dim``.
    """

    dim: int
    a: Callable
    b1: Callable
    b2: Callable
    c1: Callable
    c2: Callable
    f: Callable
    ball_radius: float = 100.0
    label: str = ""
    params: dict = dc_field(default_factory=dict)


def _identity_matrix(x: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros(x.shape[:-1] + (dim, dim))
    for i in range(dim):
        out[..., i, i] = 1.0
    return out


def _zero_vector(x: np.ndarray, dim: int) -> np.ndarray:
    return np.zeros(x.shape[:-1] + (dim,), dtype=np.complex128)


def _zero_scalar(x: np.ndarray) -> np.ndarray:
    return np.zeros(x.shape[:-1], dtype=np.complex128)


def flat_coefficients(dim: int, ball_radius: float = 100.0) -> CoefficientSet:
    """Free flow: a = I, everything else zero."""
    return CoefficientSet(
        dim=dim,
        a=lambda x, t, z: _identity_matrix(np.asarray(x, float), dim),
        b1=lambda x, t, z: _zero_vector(np.asarray(x, float), dim),
        b2=lambda x, t, z: _zero_vector(np.asarray(x, float), dim),
        c1=lambda x, t, u, ub: np.zeros(np.shape(u), dtype=np.complex128),
        c2=lambda x, t, u, ub: np.zeros(np.shape(u), dtype=np.complex128),
        f=lambda x, t: _zero_scalar(np.asarray(x, float)),
        ball_radius=ball_radius,
        label="flat")


def _bump_profile(x: np.ndarray, width: float) -> np.ndarray:
    r = np.sqrt(np.sum(np.asarray(x, float) ** 2, axis=-1))
    return radial_bump(r / width)


def bump_metric_coefficients(dim: int, amplitude: float = 0.1,
                             width: float = 2.0,
                             ball_radius: float = 100.0) -> CoefficientSet:
    """Conformal interior bump, exactly flat outside 2*width."""
    if amplitude <= -1.0:
        raise ValueError("amplitude must keep the matrix elliptic")
    cs = flat_coefficients(dim, ball_radius)

    def a(x, t, z):
        x = np.asarray(x, float)
        c = 1.0 + amplitude * _bump_profile(x, width)
        return c[..., None, None] * _identity_matrix(x, dim)

    return CoefficientSet(dim=dim, a=a, b1=cs.b1, b2=cs.b2, c1=cs.c1,
                          c2=cs.c2, f=cs.f, ball_radius=ball_radius,
                          label="bump-metric",
                          params={"amplitude": amplitude, "width": width})


def weighted_bump_coefficients(dim: int, amplitude: float = 0.5,
                               width: float = 4.0,
                               ball_radius: float = 100.0) -> CoefficientSet:
    """Perturbation amplitude * bump * <x>^-2 on the diagonal."""
    if amplitude <= -1.0:
        raise ValueError("amplitude must keep the matrix elliptic")
    cs = flat_coefficients(dim, ball_radius)

    def a(x, t, z):
        x = np.asarray(x, float)
        w = 1.0 + np.sum(x ** 2, axis=-1)
        c = 1.0 + amplitude * _bump_profile(x, width) / w
        return c[..., None, None] * _identity_matrix(x, dim)

    return CoefficientSet(dim=dim, a=a, b1=cs.b1, b2=cs.b2, c1=cs.c1,
                          c2=cs.c2, f=cs.f, ball_radius=ball_radius,
                          label="weighted-bump",
                          params={"amplitude": amplitude, "width": width})


def time_modulated_bump_coefficients(dim: int, amplitude: float = 0.1,
                                     width: float = 2.0, rate: float = 0.05,
                                     ball_radius: float = 100.0,
                                     t_max: float = 1.0) -> CoefficientSet:
    """a(x,t) = a(x,0) + t * rate * bump(x) * I, flat outside 2*width."""
    cs = bump_metric_coefficients(dim, amplitude, width, ball_radius)

    def a(x, t, z):
        x = np.asarray(x, float)
        c = (1.0 + (amplitude + rate * t) * _bump_profile(x, width))
        return c[..., None, None] * _identity_matrix(x, dim)

    return CoefficientSet(dim=dim, a=a, b1=cs.b1, b2=cs.b2, c1=cs.c1,
                          c2=cs.c2, f=cs.f, ball_radius=ball_radius,
                          label="time-modulated-bump",
                          params={"amplitude": amplitude, "width": width,
                                  "rate": rate, "t_max": t_max})


def quadratic_b1_coefficients(dim: int, amplitude: float = 0.2,
                              ball_radius: float = 100.0) -> CoefficientSet:
    """Flat metric with a quadratic transport term b1 = amplitude * u^2 e_1."""
    cs = flat_coefficients(dim, ball_radius)

    def b1(x, t, z):
        z = np.asarray(z)
        out = np.zeros(z.shape[:-1] + (dim,), dtype=np.complex128)
        out[..., 0] = amplitude * z[..., 0] ** 2
        return np.broadcast_to(
            out, np.broadcast_shapes(np.shape(x)[:-1], out.shape[:-1])
            + (dim,)).copy()

    return CoefficientSet(dim=dim, a=cs.a, b1=b1, b2=cs.b2, c1=cs.c1,
                          c2=cs.c2, f=cs.f, ball_radius=ball_radius,
                          label="quadratic-b1",
                          params={"amplitude": amplitude})


def cubic_semilinear_coefficients(dim: int, amplitude: float = 0.5,
                                  ball_radius: float = 100.0) -> CoefficientSet:
    """Flat metric with the focusing cubic term: c1 = amplitude * |u|^2."""
    cs = flat_coefficients(dim, ball_radius)

    def c1(x, t, u, ub):
        return amplitude * np.asarray(u) * np.asarray(ub)

    return CoefficientSet(dim=dim, a=cs.a, b1=cs.b1, b2=cs.b2, c1=c1,
                          c2=cs.c2, f=cs.f, ball_radius=ball_radius,
                          label="cubic-semilinear",
                          params={"amplitude": amplitude})


def full_quasilinear_coefficients(dim: int, a_amplitude: float = 0.15,
                                  b_amplitude: float = 0.2,
                                  c_amplitude: float = 0.3,
                                  width: float = 2.0,
                                  ball_radius: float = 100.0) -> CoefficientSet:
    """Every term active: state-dependent metric, quadratic transport, cubic
    potential.  The metric factor is saturated so ellipticity holds on any
    ball."""
    if not 0.0 <= a_amplitude < 1.0:
        raise ValueError("a_amplitude must sit in [0, 1)")

    def a(x, t, z):
        x = np.asarray(x, float)
        z = np.asarray(z)
        m = np.abs(z[..., 0]) ** 2
        sat = m / (1.0 + m)
        c = 1.0 + a_amplitude * _bump_profile(x, width) * sat
        return c[..., None, None] * _identity_matrix(x, dim)

    def b1(x, t, z):
        z = np.asarray(z)
        return b_amplitude * z[..., 0:1] * z[..., 2:2 + dim]

    def b2(x, t, z):
        z = np.asarray(z)
        return 0.5 * b_amplitude * z[..., 1:2] * z[..., 2 + dim:]

    def c1(x, t, u, ub):
        return c_amplitude * np.asarray(u) * np.asarray(ub)

    def c2(x, t, u, ub):
        return 0.3 * c_amplitude * np.asarray(u) ** 2

    return CoefficientSet(
        dim=dim, a=a, b1=b1, b2=b2, c1=c1, c2=c2,
        f=lambda x, t: _zero_scalar(np.asarray(x, float)),
        ball_radius=ball_radius, label="full-quasilinear",
        params={"a_amplitude": a_amplitude, "b_amplitude": b_amplitude,
                "c_amplitude": c_amplitude, "width": width})


REGISTRY: dict[str, Callable] = {
    "flat": flat_coefficients,
    "bump-metric": bump_metric_coefficients,
    "weighted-bump": weighted_bump_coefficients,
    "time-modulated-bump": time_modulated_bump_coefficients,
    "quadratic-b1": quadratic_b1_coefficients,
    "cubic-semilinear": cubic_semilinear_coefficients,
    "full-quasilinear": full_quasilinear_coefficients,
}


def make_coefficients(name: str, dim: int, **params) -> CoefficientSet:
    try:
        builder = REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(REGISTRY))
        raise KeyError(f"unknown coefficient family {name!r}; "
                       f"known: {known}") from None
    return builder(dim, **params)


# ---------------------------------------------------------------------------
# the evolution vector field

def quasilinear_rhs(cs: CoefficientSet, grid: Grid, u: StateField,
                    t: float, eps: float = 0.0) -> np.ndarray:
    """Right-hand side of the flow at a state, optionally with the
    fourth-order damping term -eps lap^2 u."""
    vals = u.values
    coef = np.fft.fftn(vals)
    k = grid.k
    z = state_vector(grid, vals)
    x = grid.x

    hess = np.empty(grid.shape + (grid.dim, grid.dim), dtype=np.complex128)
    for j in range(grid.dim):
        for l in range(j, grid.dim):
            hess[..., j, l] = np.fft.ifftn(-k[..., j] * k[..., l] * coef)
            hess[..., l, j] = hess[..., j, l]

    a_vals = _real_matrix(cs.a(x, t, z))

    grad = z[..., 2:2 + grid.dim]
    out = 1j * np.einsum("...jk,...jk->...", a_vals, hess)
    out += np.einsum("...j,...j->...", np.asarray(cs.b1(x, t, z)), grad)
    out += np.einsum("...j,...j->...", np.asarray(cs.b2(x, t, z)),
                     np.conj(grad))
    out += np.asarray(cs.c1(x, t, vals, np.conj(vals))) * vals
    out += np.asarray(cs.c2(x, t, vals, np.conj(vals))) * np.conj(vals)
    out += np.asarray(cs.f(x, t))
    if eps:
        out -= eps * np.fft.ifftn(grid.k_sq ** 2 * coef)
    return out


# ---------------------------------------------------------------------------
# freezing at a state

@dataclass
class FrozenLinearCoefficients:
    """Coefficients evaluated along a fixed state: the linear system data.

    ``transport`` is the vector field w with first-order symbol w . xi,
    combining i*b1 with the divergence correction sum_j dj a_jk that moves
    the principal part into divergence form.  Time derivatives come from
    substituting the evolution equation for dt u.
    """

    grid: Grid
    t0: float
    a: np.ndarray
    grad_a: np.ndarray
    transport: np.ndarray
    b2: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    f: np.ndarray
    dt_a: np.ndarray | None = None
    dt_b2: np.ndarray | None = None
    label: str = ""

    def metric(self) -> rays.MetricField:
        return rays.gridded_metric(self.grid, self.a)

    def ellipticity(self) -> tuple[float, float]:
        eigs = np.linalg.eigvalsh(self.a)
        return float(np.min(eigs)), float(np.max(eigs))


def _real_matrix(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw)
    if np.iscomplexobj(raw):
        worst = float(np.max(np.abs(raw.imag)))
        if worst > 1e-10:
            raise ValueError(
                f"matrix coefficient must be real valued; max imag {worst:.3e}")
        return np.ascontiguousarray(raw.real)
    return raw


def freeze_at_state(cs: CoefficientSet, grid: Grid, u: StateField, t: float,
                    with_time_derivatives: bool = True
                    ) -> FrozenLinearCoefficients:
    """Evaluate the coefficients at (x, t, state of u)."""
    z = state_vector(grid, u.values)
    zmax = state_vector_bound(z)
    if zmax >= cs.ball_radius:
        raise BallExcursionError(
            f"state leaves the coefficient ball: max |z| = {zmax:.6g} "
            f">= M = {cs.ball_radius:.6g}")
    x = grid.x
    n = grid.dim

    a_vals = _real_matrix(cs.a(x, t, z))
    a_vals = np.broadcast_to(a_vals, grid.shape + (n, n)).copy()
    grad_a = np.empty(grid.shape + (n, n, n))
    for j in range(n):
        for k in range(j, n):
            for l in range(n):
                d = spectral_derivative(grid, a_vals[..., j, k], l).real
                grad_a[..., l, j, k] = d
                grad_a[..., l, k, j] = d

    b1_vals = np.broadcast_to(np.asarray(cs.b1(x, t, z), complex),
                              grid.shape + (n,))
    transport = 1j * b1_vals + np.einsum("...jjk->...k", grad_a)
    b2_vals = np.broadcast_to(np.asarray(cs.b2(x, t, z), complex),
                              grid.shape + (n,)).copy()
    uv, ub = u.values, np.conj(u.values)
    c1_vals = np.broadcast_to(np.asarray(cs.c1(x, t, uv, ub), complex),
                              grid.shape).copy()
    c2_vals = np.broadcast_to(np.asarray(cs.c2(x, t, uv, ub), complex),
                              grid.shape).copy()
    f_vals = np.broadcast_to(np.asarray(cs.f(x, t), complex),
                             grid.shape).copy()

    dt_a = dt_b2 = None
    if with_time_derivatives:
        udot = quasilinear_rhs(cs, grid, u, t)
        zdot = np.empty_like(z)
        zdot[..., 0] = udot
        zdot[..., 1] = np.conj(udot)
        gdot = spectral_gradient(grid, udot)
        zdot[..., 2:2 + n] = gdot
        zdot[..., 2 + n:] = np.conj(gdot)
        scale = 1.0 + float(np.max(np.abs(zdot)))
        tau = 1e-4 / scale
        a_plus = _real_matrix(cs.a(x, t + tau, z + tau * zdot))
        a_minus = _real_matrix(cs.a(x, t - tau, z - tau * zdot))
        dt_a = np.broadcast_to((a_plus - a_minus) / (2.0 * tau),
                               grid.shape + (n, n)).copy()
        b2_plus = np.asarray(cs.b2(x, t + tau, z + tau * zdot), complex)
        b2_minus = np.asarray(cs.b2(x, t - tau, z - tau * zdot), complex)
        dt_b2 = np.broadcast_to((b2_plus - b2_minus) / (2.0 * tau),
                                grid.shape + (n,)).copy()

    frozen = FrozenLinearCoefficients(
        grid=grid, t0=t, a=a_vals, grad_a=grad_a, transport=transport,
        b2=b2_vals, c1=c1_vals, c2=c2_vals, f=f_vals, dt_a=dt_a,
        dt_b2=dt_b2, label=cs.label)
    lo, hi = frozen.ellipticity()
    if lo <= 1e-9:
        raise ValueError(f"frozen matrix loses ellipticity: min eig {lo:.3e}")
    return frozen


# ---------------------------------------------------------------------------
# discrete holder norms and the cube decomposition

def _axis_difference(vals: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    return (np.roll(vals, -1, axis) - np.roll(vals, 1, axis)) / (2.0 * spacing)


def cn_norm(values: np.ndarray, spacing: float, order: int = 4) -> float:
    """Sup norm over centered-difference derivatives up to total order.

    Periodic wrap; the input must decay at the array edges for the wrap to
    be harmless."""
    vals = np.asarray(values)
    best = float(np.max(np.abs(vals))) if vals.size else 0.0
    level = {(): vals}
    ndim = vals.ndim
    for _ in range(order):
        nxt = {}
        for beta, f in level.items():
            start = beta[-1] if beta else 0
            for ax in range(start, ndim):
                d = _axis_difference(f, ax, spacing)
                nxt[beta + (ax,)] = d
                m = float(np.max(np.abs(d)))
                if m > best:
                    best = m
        level = nxt
    return best


def _cube_patch(grid: Grid, part: CubePartition, mu: int,
                values: np.ndarray, pad: int) -> np.ndarray:
    """Zero-padded copy of values restricted to the double cube of mu."""
    cells = int(round(part.side / grid.spacing))
    center_idx = np.round((part.centers[mu] + grid.half_width)
                          / grid.spacing).astype(int)
    out = values
    for ax in range(grid.dim):
        idx = (center_idx[ax] + np.arange(-cells - 1, cells + 1)) \
            % grid.n_points
        out = np.take(out, idx, axis=ax)
    width = [(pad, pad)] * grid.dim
    return np.pad(out, width)


def w1m_norm(grid: Grid, values: np.ndarray, m_ord: int = 4) -> float:
    """First-order Sobolev surrogate (L^m of the field and its gradient).

    Trailing component axes are flattened and summed into the density."""
    vals = np.asarray(values, complex)
    comps = vals.reshape(grid.shape + (-1,))
    dens = np.zeros(grid.shape)
    for i in range(comps.shape[-1]):
        c = comps[..., i]
        g = spectral_gradient(grid, c)
        dens += np.abs(c) ** m_ord + np.sum(np.abs(g) ** m_ord, axis=-1)
    return float(np.sum(dens) * grid.spacing ** grid.dim) ** (1.0 / m_ord)


@dataclass
class CubeDecomposition:
    """b = sum_mu alpha_mu phi_mu with phi_mu supported in double cubes."""

    part: CubePartition
    values: np.ndarray
    alphas: np.ndarray
    n_smooth: int
    w1m: float

    @property
    def sum_alpha(self) -> float:
        return float(np.sum(self.alphas))

    @property
    def ratio(self) -> float:
        if self.w1m < 1e-300:
            return 0.0 if self.sum_alpha == 0.0 else float("inf")
        return self.sum_alpha / self.w1m

    def phi(self, mu: int) -> np.ndarray:
        if self.alphas[mu] == 0.0:
            return np.zeros_like(self.values)
        return self.part.window_values(mu) * self.values / self.alphas[mu]

    def active(self) -> np.ndarray:
        return np.nonzero(self.alphas)[0]

    def reconstruct(self) -> np.ndarray:
        out = np.zeros_like(self.values)
        for mu in self.active():
            out = out + self.alphas[mu] * self.phi(mu)
        return out


def cube_decompose(grid: Grid, values: np.ndarray,
                   part: CubePartition | None = None,
                   n_smooth: int = 4) -> CubeDecomposition:
    """Weights alpha_mu = discrete C^N norm of the windowed field."""
    if part is None:
        part = CubePartition(grid)
    vals = np.asarray(values)
    alphas = np.zeros(part.n_cubes)
    pad = n_smooth + 1
    for mu in range(part.n_cubes):
        w = part.window_values(mu)
        local = w * vals
        if not np.any(local):
            continue
        patch = _cube_patch(grid, part, mu, local, pad)
        alphas[mu] = cn_norm(patch, grid.spacing, n_smooth)
    return CubeDecomposition(part=part, values=vals, alphas=alphas,
                             n_smooth=n_smooth,
                             w1m=w1m_norm(grid, vals))


def w1m_check(b_rule: Callable, grid: Grid, u: StateField, t: float = 0.0,
              m_ord: int = 4, fd_step: float = 1e-5) -> float:
    """Sobolev surrogate of a transport rule frozen at a state.

    The rule must vanish quadratically at the origin state; checked by
    sampled values and centered z-differences before any norm is taken."""
    n = grid.dim
    m = 2 * n + 2
    x = grid.x
    zero = np.zeros(m, dtype=np.complex128)
    base = np.max(np.abs(np.asarray(b_rule(x, t, zero))))
    if base > 1e-8:
        raise PreconditionError(
            f"transport rule must vanish at the origin state; got {base:.3e}")
    for i in range(m):
        for step in (fd_step, 1j * fd_step):
            e = np.zeros(m, dtype=np.complex128)
            e[i] = step
            d = (np.asarray(b_rule(x, t, e)) - np.asarray(b_rule(x, t, -e))) \
                / (2.0 * fd_step)
            if np.max(np.abs(d)) > 1e-3:
                raise PreconditionError(
                    "transport rule must have vanishing first derivative "
                    f"at the origin state; component {i} gives "
                    f"{float(np.max(np.abs(d))):.3e}")
    z = state_vector(grid, u.values)
    vals = np.asarray(b_rule(x, t, z))
    return w1m_norm(grid, vals, m_ord)


# ---------------------------------------------------------------------------
# assumption validators

def _entry(name: str, passed: bool, value: float, detail: str = "") -> dict:
    e = {"name": name, "passed": bool(passed), "value": float(value)}
    if detail:
        e["detail"] = detail
    return e


def _weighted_sup(x: np.ndarray, field: np.ndarray) -> float:
    """sup of |field| * <x>^2; field may carry trailing matrix axes."""
    mag = np.abs(field)
    while mag.ndim > x.ndim - 1:
        mag = np.max(mag, axis=-1)
    w = 1.0 + np.sum(x ** 2, axis=-1)
    return float(np.max(mag * w))


def _decay_check(x: np.ndarray, field: np.ndarray, half_width: float
                 ) -> tuple[bool, float, float]:
    """Weighted sup must not grow from the interior to the outer band."""
    mag = np.abs(field)
    while mag.ndim > x.ndim - 1:
        mag = np.max(mag, axis=-1)
    r = np.sqrt(np.sum(x ** 2, axis=-1))
    w = 1.0 + r ** 2
    inner = mag[r <= half_width / 4.0] * w[r <= half_width / 4.0]
    outer = mag[r >= 3.0 * half_width / 8.0] * w[r >= 3.0 * half_width / 8.0]
    inner_sup = float(np.max(inner)) if inner.size else 0.0
    outer_sup = float(np.max(outer)) if outer.size else 0.0
    ok = outer_sup <= max(1.05 * inner_sup, 1e-9)
    return ok, inner_sup, outer_sup


def _metric_samples(cs: CoefficientSet, x: np.ndarray, t_values, z_states):
    for t in t_values:
        for z in z_states:
            yield t, z, np.asarray(cs.a(x, t, z))


def validate_assumptions(cs: CoefficientSet, grid: Grid,
                         z_states: np.ndarray | None = None,
                         u0: StateField | None = None,
                         t_values=(0.0, 0.4),
                         check_nontrapping: bool = True,
                         ray_budget: float = 40.0) -> EstimateReport:
    """Sampled pass/fail matrix for the nonlinear assumption list.

    Regularity and boundedness (1), realness (2), symmetry (3),
    ellipticity (4), asymptotic flatness (5), quadratic vanishing of the
    transport terms plus cube decomposability (6), and non-trapping of the
    flow frozen at the initial state (7).
    """
    if z_states is None:
        z_states = ball_sample(grid.dim, 0.5 * cs.ball_radius)
    x = grid.x
    n = grid.dim
    entries = []
    eye = _identity_matrix(x, n)

    sup_val = 0.0
    im_worst = 0.0
    sym_worst = 0.0
    lam_lo, lam_hi = np.inf, 0.0
    flat_worst = 0.0
    gap_worst = 0.0
    decay_ok = True
    decay_detail = ""
    tau = 1e-4
    for t, z, raw in _metric_samples(cs, x, t_values, z_states):
        a_im = np.max(np.abs(raw.imag)) if np.iscomplexobj(raw) else 0.0
        im_worst = max(im_worst, float(a_im))
        a = raw.real if np.iscomplexobj(raw) else raw
        a = np.broadcast_to(a, grid.shape + (n, n))
        sym_worst = max(sym_worst, float(np.max(np.abs(
            a - np.swapaxes(a, -1, -2)))))
        eigs = np.linalg.eigvalsh(a)
        lam_lo = min(lam_lo, float(np.min(eigs)))
        lam_hi = max(lam_hi, float(np.max(eigs)))
        sup_val = max(sup_val, float(np.max(np.abs(a))))

        gap = a - eye
        gap_worst = max(gap_worst, float(np.max(np.abs(gap))))
        fields = [gap]
        # centered differences keep compact supports compact, so the decay
        # check stays exact on coarse grids
        first = [np.stack([_axis_difference(a[..., j, k], l, grid.spacing)
                           for j in range(n) for k in range(n)], axis=-1)
                 for l in range(n)]
        fields.extend(first)
        for l in range(n):
            for l2 in range(l, n):
                d2 = np.stack([
                    _axis_difference(first[l][..., idx], l2, grid.spacing)
                    for idx in range(n * n)], axis=-1)
                fields.append(d2)
        a_p = np.asarray(cs.a(x, t + tau, z))
        a_m = np.asarray(cs.a(x, t - tau, z))
        dt_a = (a_p - a_m).real / (2.0 * tau)
        fields.append(np.broadcast_to(dt_a, grid.shape + (n, n)))
        for f in fields:
            flat_worst = max(flat_worst, _weighted_sup(x, f))
            ok, inner, outer = _decay_check(x, f, grid.half_width)
            if not ok and decay_ok:
                decay_ok = False
                decay_detail = (f"weighted sup grows outward: inner "
                                f"{inner:.3g}, outer {outer:.3g}")
            decay_ok = decay_ok and ok

        for vec_rule in (cs.b1, cs.b2):
            v = np.asarray(vec_rule(x, t, z))
            sup_val = max(sup_val, float(np.max(np.abs(v))))
        uz = np.broadcast_to(z[..., 0], grid.shape)
        for sc_rule in (cs.c1, cs.c2):
            v = np.asarray(sc_rule(x, t, uz, np.conj(uz)))
            sup_val = max(sup_val, float(np.max(np.abs(v))))

    entries.append(_entry("NL1", np.isfinite(sup_val), sup_val,
                          "largest coefficient magnitude over samples"))
    entries.append(_entry("NL2", im_worst <= 1e-10, im_worst,
                          "largest imaginary part of the matrix"))
    entries.append(_entry("NL3", sym_worst <= 1e-10, sym_worst,
                          "largest symmetry defect"))
    gamma_sampled = min(lam_lo, 1.0 / lam_hi) if lam_hi > 0 else 0.0
    # guaranteed lower bound from the perturbation size alone
    gamma_safe = max(0.0, 1.0 - gap_worst)
    entries.append(_entry("NL4", lam_lo > 1e-6, gamma_sampled,
                          f"eigenvalues in [{lam_lo:.4g}, {lam_hi:.4g}]"))
    entries.append(_entry("NL5", decay_ok and np.isfinite(flat_worst),
                          flat_worst,
                          decay_detail or "weighted sup of I-A and "
                          "derivatives up to order 2"))

    vanish_worst = 0.0
    deriv_worst = 0.0
    m = 2 * n + 2
    zero = np.zeros(m, dtype=np.complex128)
    delta = 1e-5
    for t in t_values:
        for rule in (cs.b1, cs.b2):
            vanish_worst = max(vanish_worst, float(np.max(np.abs(
                np.asarray(rule(x, t, zero))))))
            for i in range(m):
                for step in (delta, 1j * delta):
                    e = np.zeros(m, dtype=np.complex128)
                    e[i] = step
                    d = (np.asarray(rule(x, t, e))
                         - np.asarray(rule(x, t, -e))) / (2.0 * delta)
                    deriv_worst = max(deriv_worst,
                                      float(np.max(np.abs(d))))
    z_ref = z_states[min(1, len(z_states) - 1)]
    a_ref = np.broadcast_to(
        _real_matrix(cs.a(x, t_values[0], z_ref)), grid.shape + (n, n))
    sum_alpha = 0.0
    recon_err = 0.0
    part = CubePartition(grid)
    for l in range(n):
        for j in range(n):
            for k in range(j, n):
                fld = _axis_difference(a_ref[..., j, k], l, grid.spacing)
                dec = cube_decompose(grid, fld, part)
                sum_alpha = max(sum_alpha, dec.sum_alpha)
                if dec.sum_alpha > 0:
                    recon_err = max(recon_err, float(np.max(np.abs(
                        dec.reconstruct() - fld))))
    nl6_ok = vanish_worst <= 1e-8 and deriv_worst <= 1e-3 \
        and recon_err <= 1e-8
    entries.append(_entry(
        "NL6", nl6_ok, max(vanish_worst, deriv_worst),
        f"origin value {vanish_worst:.2e}, origin slope {deriv_worst:.2e}, "
        f"cube weight sum {sum_alpha:.4g}, reconstruction {recon_err:.2e}"))

    nl7_value = 0.0
    nl7_ok = True
    nl7_detail = "skipped"
    if check_nontrapping:
        if u0 is None:
            u0 = StateField(grid, np.zeros(grid.shape, dtype=np.complex128))
        frozen = freeze_at_state(cs, grid, u0, t_values[0],
                                 with_time_derivatives=False)
        metric = frozen.metric()
        X0, Xi0 = rays.default_ray_sample(grid.dim, grid.half_width / 2.0)
        verdict = rays.classify_nontrapping(
            metric, X0, Xi0, escape_radius=grid.half_width / 2.0,
            s_budget=ray_budget)
        nl7_ok = verdict.nontrapping_on_sample
        nl7_value = float(verdict.n_undetermined)
        nl7_detail = (f"{len(verdict.records)} rays, "
                      f"{verdict.n_undetermined} undetermined")
    entries.append(_entry("NL7", nl7_ok, nl7_value, nl7_detail))

    return EstimateReport(
        name=f"assumptions[{cs.label}]",
        entries=entries,
        constants={"gamma_M": float(gamma_sampled),
                   "gamma_safe": float(gamma_safe),
                   "C_M": float(flat_worst),
                   "cube_weight_sum": float(sum_alpha)},
        verdict=all(e["passed"] for e in entries))


def validate_metric(metric: rays.MetricField, grid: Grid,
                    check_nontrapping: bool = True,
                    ray_budget: float = 40.0) -> EstimateReport:
    """Pass/fail matrix for the static metric assumption list.

    Bounded regularity (1), real symmetry (2), uniform ellipticity (3),
    asymptotic flatness of the matrix and its gradient (4), and
    non-trapping of the flow (5)."""
    x = grid.x
    n = grid.dim
    a = np.asarray(metric.a(x))
    grad = np.asarray(metric.grad_a(x))
    entries = []

    reg = max(cn_norm(a[..., j, k], grid.spacing, 2)
              for j in range(n) for k in range(n))
    entries.append(_entry("D1", np.isfinite(reg), reg,
                          "discrete regularity surrogate"))
    real_sym = max(float(np.max(np.abs(np.asarray(a, complex).imag))),
                   float(np.max(np.abs(a - np.swapaxes(a, -1, -2)))))
    entries.append(_entry("D2", real_sym <= 1e-10, real_sym))
    eigs = np.linalg.eigvalsh(a)
    lam_lo, lam_hi = float(np.min(eigs)), float(np.max(eigs))
    entries.append(_entry("D3", lam_lo > 1e-6,
                          min(lam_lo, 1.0 / lam_hi) if lam_hi else 0.0,
                          f"eigenvalues in [{lam_lo:.4g}, {lam_hi:.4g}]"))
    eye = _identity_matrix(x, n)
    flat_worst = max(_weighted_sup(x, a - eye), _weighted_sup(x, grad))
    ok_gap, _, _ = _decay_check(x, a - eye, grid.half_width)
    ok_grad, _, _ = _decay_check(x, grad, grid.half_width)
    entries.append(_entry("D4", ok_gap and ok_grad, flat_worst,
                          "weighted sup of I-A and grad A"))
    d5_ok, d5_val, d5_detail = True, 0.0, "skipped"
    if check_nontrapping:
        X0, Xi0 = rays.default_ray_sample(n, grid.half_width / 2.0)
        verdict = rays.classify_nontrapping(
            metric, X0, Xi0, escape_radius=grid.half_width / 2.0,
            s_budget=ray_budget)
        d5_ok = verdict.nontrapping_on_sample
        d5_val = float(verdict.n_undetermined)
        d5_detail = (f"{len(verdict.records)} rays, "
                     f"{verdict.n_undetermined} undetermined")
    entries.append(_entry("D5", d5_ok, d5_val, d5_detail))

    return EstimateReport(
        name=f"metric-assumptions[{metric.label}]",
        entries=entries,
        constants={"gamma": float(min(lam_lo, 1.0 / lam_hi)) if lam_hi else 0.0,
                   "C_flat": float(flat_worst)},
        verdict=all(e["passed"] for e in entries))


def validate_frozen(frozen: FrozenLinearCoefficients,
                    check_nontrapping: bool = False,
                    ray_budget: float = 40.0) -> EstimateReport:
    """Pass/fail matrix for the frozen linear assumption list.

    Regularity of the fields and first-order symbol (1), real symmetric
    ellipticity (2), asymptotic flatness including time derivatives (3),
    cube decomposability of the transport field (4), and non-trapping of
    the frozen flow (5)."""
    grid = frozen.grid
    x = grid.x
    n = grid.dim
    entries = []

    reg = max(cn_norm(frozen.a[..., j, k], grid.spacing, 2)
              for j in range(n) for k in range(n))
    reg = max(reg, float(np.max(np.abs(frozen.transport))),
              float(np.max(np.abs(frozen.b2))),
              float(np.max(np.abs(frozen.c1))),
              float(np.max(np.abs(frozen.c2))))
    if frozen.dt_a is not None:
        reg = max(reg, float(np.max(np.abs(frozen.dt_a))))
    if frozen.dt_b2 is not None:
        reg = max(reg, float(np.max(np.abs(frozen.dt_b2))))
    entries.append(_entry("L1", np.isfinite(reg), reg,
                          "largest field magnitude / regularity surrogate"))

    sym = float(np.max(np.abs(frozen.a - np.swapaxes(frozen.a, -1, -2))))
    lam_lo, lam_hi = frozen.ellipticity()
    entries.append(_entry("L2", sym <= 1e-10 and lam_lo > 1e-6,
                          min(lam_lo, 1.0 / lam_hi) if lam_hi else 0.0,
                          f"eigenvalues in [{lam_lo:.4g}, {lam_hi:.4g}], "
                          f"symmetry defect {sym:.2e}"))

    eye = _identity_matrix(x, n)
    grad_fd = np.stack([
        _axis_difference(frozen.a[..., j, k], l, grid.spacing)
        for l in range(n) for j in range(n) for k in range(n)], axis=-1)
    flat_fields = [frozen.a - eye, grad_fd]
    if frozen.dt_a is not None:
        flat_fields.append(frozen.dt_a)
        dtg = np.stack([
            _axis_difference(frozen.dt_a[..., j, k], l, grid.spacing)
            for l in range(n) for j in range(n) for k in range(n)], axis=-1)
        flat_fields.append(dtg)
    flat_worst = max(_weighted_sup(x, f) for f in flat_fields)
    decay_ok = all(_decay_check(x, f, grid.half_width)[0]
                   for f in flat_fields)
    entries.append(_entry("L3", decay_ok and np.isfinite(flat_worst),
                          flat_worst,
                          "weighted sup incl. time derivatives"))

    re_transport = np.sqrt(np.sum(frozen.transport.real ** 2, axis=-1))
    dec = cube_decompose(grid, re_transport)
    recon = float(np.max(np.abs(dec.reconstruct() - re_transport))) \
        if dec.sum_alpha > 0 else 0.0
    entries.append(_entry("L4", recon <= 1e-8, dec.sum_alpha,
                          f"transport cube weights, reconstruction "
                          f"{recon:.2e}"))

    l5_ok, l5_val, l5_detail = True, 0.0, "skipped"
    if check_nontrapping:
        metric = frozen.metric()
        X0, Xi0 = rays.default_ray_sample(n, grid.half_width / 2.0)
        verdict = rays.classify_nontrapping(
            metric, X0, Xi0, escape_radius=grid.half_width / 2.0,
            s_budget=ray_budget)
        l5_ok = verdict.nontrapping_on_sample
        l5_val = float(verdict.n_undetermined)
        l5_detail = (f"{len(verdict.records)} rays, "
                     f"{verdict.n_undetermined} undetermined")
    entries.append(_entry("L5", l5_ok, l5_val, l5_detail))

    return EstimateReport(
        name=f"frozen-assumptions[{frozen.label}]",
        entries=entries,
        constants={"ellipticity": float(min(lam_lo, 1.0 / lam_hi)),
                   "C_flat": float(flat_worst),
                   "transport_weight_sum": dec.sum_alpha},
        verdict=all(e["passed"] for e in entries))
