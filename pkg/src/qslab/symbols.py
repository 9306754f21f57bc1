"""Phase-space symbols: evaluation, derivatives, brackets, seminorm scans.

A symbol is a function q(x, xi, t) on the phase space of the periodic box,
tagged with an order m. Points are passed as arrays whose last axis is the
space dimension; evaluation broadcasts. Symbols may carry analytic first
derivatives; anything missing falls back to centered finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from itertools import product as iter_product
from typing import Callable

import numpy as np

from .cutoffs import radial_bump, radial_bump_d

# centered stencils, offsets paired with weights, O(step^2) accuracy
_STENCILS = {
    0: ((0,), (1.0,)),
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
    4: ((-2, -1, 0, 1, 2), (1.0, -4.0, 6.0, -4.0, 1.0)),
}


@dataclass
class Symbol:
    """Order-tagged phase-space function with optional analytic gradients."""

    order: float
    fn: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    grad_x: Callable | None = None      # (x, xi, t) -> (..., dim)
    grad_xi: Callable | None = None
    label: str = ""
    fd_step_x: float = 0.05
    fd_step_xi: float = 0.05

    def __call__(self, x, xi, t: float = 0.0) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, float), np.asarray(xi, float), t))

    def dx(self, x, xi, t: float = 0.0) -> np.ndarray:
        """Spatial gradient, analytic if available."""
        if self.grad_x is not None:
            return np.asarray(self.grad_x(np.asarray(x, float),
                                          np.asarray(xi, float), t))
        return self._fd_grad(x, xi, t, wrt="x")

    def dxi(self, x, xi, t: float = 0.0) -> np.ndarray:
        if self.grad_xi is not None:
            return np.asarray(self.grad_xi(np.asarray(x, float),
                                           np.asarray(xi, float), t))
        return self._fd_grad(x, xi, t, wrt="xi")

    def _fd_grad(self, x, xi, t, wrt: str) -> np.ndarray:
        x = np.asarray(x, float)
        xi = np.asarray(xi, float)
        base, step = (x, self.fd_step_x) if wrt == "x" else (xi, self.fd_step_xi)
        dim = base.shape[-1]
        outs = []
        for ax in range(dim):
            e = np.zeros(dim)
            e[ax] = step
            if wrt == "x":
                hi, lo = self.fn(x + e, xi, t), self.fn(x - e, xi, t)
            else:
                hi, lo = self.fn(x, xi + e, t), self.fn(x, xi - e, t)
            outs.append((np.asarray(hi) - np.asarray(lo)) / (2.0 * step))
        return np.stack(np.broadcast_arrays(*outs), axis=-1)

    # -- algebra (gradients propagate through sums/products) ---------------

    def __add__(self, other: "Symbol") -> "Symbol":
        a, b = self, other
        gx = None
        if a.grad_x is not None and b.grad_x is not None:
            gx = lambda x, xi, t: a.grad_x(x, xi, t) + b.grad_x(x, xi, t)
        gxi = None
        if a.grad_xi is not None and b.grad_xi is not None:
            gxi = lambda x, xi, t: a.grad_xi(x, xi, t) + b.grad_xi(x, xi, t)
        return Symbol(max(a.order, b.order),
                      lambda x, xi, t: a.fn(x, xi, t) + b.fn(x, xi, t),
                      gx, gxi, label=f"({a.label}+{b.label})",
                      fd_step_x=a.fd_step_x, fd_step_xi=a.fd_step_xi)

    def __sub__(self, other: "Symbol") -> "Symbol":
        return self + (-1.0) * other

    def __mul__(self, other):
        if isinstance(other, Symbol):
            a, b = self, other
            gx = None
            if a.grad_x is not None and b.grad_x is not None:
                gx = lambda x, xi, t: (a.grad_x(x, xi, t) * b.fn(x, xi, t)[..., None]
                                       + a.fn(x, xi, t)[..., None] * b.grad_x(x, xi, t))
            gxi = None
            if a.grad_xi is not None and b.grad_xi is not None:
                gxi = lambda x, xi, t: (a.grad_xi(x, xi, t) * b.fn(x, xi, t)[..., None]
                                        + a.fn(x, xi, t)[..., None] * b.grad_xi(x, xi, t))
            return Symbol(a.order + b.order,
                          lambda x, xi, t: a.fn(x, xi, t) * b.fn(x, xi, t),
                          gx, gxi, label=f"({a.label}*{b.label})",
                          fd_step_x=a.fd_step_x, fd_step_xi=a.fd_step_xi)
        c = complex(other) if isinstance(other, complex) else float(other)
        a = self
        gx = None if a.grad_x is None else (lambda x, xi, t: c * a.grad_x(x, xi, t))
        gxi = None if a.grad_xi is None else (lambda x, xi, t: c * a.grad_xi(x, xi, t))
        return Symbol(a.order, lambda x, xi, t: c * a.fn(x, xi, t),
                      gx, gxi, label=f"({other}*{a.label})",
                      fd_step_x=a.fd_step_x, fd_step_xi=a.fd_step_xi)

    __rmul__ = __mul__

    def __neg__(self) -> "Symbol":
        return (-1.0) * self

    def shifted(self, x0) -> "Symbol":
        """Same symbol with the spatial argument shifted by x0."""
        x0 = np.asarray(x0, float)
        a = self
        gx = None if a.grad_x is None else (lambda x, xi, t: a.grad_x(x - x0, xi, t))
        gxi = None if a.grad_xi is None else (lambda x, xi, t: a.grad_xi(x - x0, xi, t))
        return Symbol(a.order, lambda x, xi, t: a.fn(x - x0, xi, t),
                      gx, gxi, label=f"{a.label}@{x0.tolist()}",
                      fd_step_x=a.fd_step_x, fd_step_xi=a.fd_step_xi)


def constant_symbol(value: complex, dim: int) -> Symbol:
    zero = lambda x, xi, t: np.zeros(np.broadcast_shapes(x.shape, xi.shape))
    return Symbol(0.0,
                  lambda x, xi, t: np.full(
                      np.broadcast_shapes(x.shape[:-1], xi.shape[:-1]), value),
                  grad_x=zero, grad_xi=zero, label=f"const({value})")


def xi_symbol(order: float, f, df=None, label: str = "") -> Symbol:
    """Symbol depending on xi only; f maps (..., dim) -> (...)."""
    gx = lambda x, xi, t: np.zeros(np.broadcast_shapes(x.shape, xi.shape))
    gxi = None if df is None else (lambda x, xi, t: np.broadcast_to(
        df(xi), np.broadcast_shapes(x.shape, xi.shape)).copy())
    return Symbol(order, lambda x, xi, t: np.broadcast_to(
        f(xi), np.broadcast_shapes(x.shape[:-1], xi.shape[:-1])).copy(),
        grad_x=gx, grad_xi=gxi, label=label or "xi-symbol")


def x_symbol(f, df=None, label: str = "") -> Symbol:
    """Order-0 symbol depending on x only."""
    gxi = lambda x, xi, t: np.zeros(np.broadcast_shapes(x.shape, xi.shape))
    gx = None if df is None else (lambda x, xi, t: np.broadcast_to(
        df(x), np.broadcast_shapes(x.shape, xi.shape)).copy())
    return Symbol(0.0, lambda x, xi, t: np.broadcast_to(
        f(x), np.broadcast_shapes(x.shape[:-1], xi.shape[:-1])).copy(),
        grad_x=gx, grad_xi=gxi, label=label or "x-symbol")


def flat_principal(dim: int) -> Symbol:
    """|xi|^2, the flat second-order principal symbol."""
    return xi_symbol(2.0, lambda xi: np.sum(xi ** 2, axis=-1),
                     df=lambda xi: 2.0 * xi, label="|xi|^2")


def cutoff_theta(R: float, dim: int = 1) -> Symbol:
    """theta_R(xi): 0 for |xi| <= R, 1 for |xi| >= 2R, smooth between."""
    if R <= 0:
        raise ValueError("cutoff radius must be positive")

    def f(xi):
        rho = np.sqrt(np.sum(xi ** 2, axis=-1))
        return 1.0 - radial_bump(rho / R)

    def df(xi):
        rho = np.sqrt(np.sum(xi ** 2, axis=-1))
        safe = np.where(rho > 0, rho, 1.0)
        rad = -radial_bump_d(rho / R) / R
        return rad[..., None] * xi / safe[..., None]

    return xi_symbol(0.0, f, df=df, label=f"theta_{R:g}")


def poisson_bracket(h: Symbol, p: Symbol) -> Symbol:
    """{h, p} = sum_i dh/dxi_i dp/dx_i - dh/dx_i dp/dxi_i."""

    def fn(x, xi, t):
        return np.sum(h.dxi(x, xi, t) * p.dx(x, xi, t)
                      - h.dx(x, xi, t) * p.dxi(x, xi, t), axis=-1)

    return Symbol(h.order + p.order - 1.0, fn,
                  label=f"{{{h.label},{p.label}}}",
                  fd_step_x=p.fd_step_x, fd_step_xi=p.fd_step_xi)


# ---------------------------------------------------------------------------
# evaluation of higher derivatives

def eval_derivative(sym: Symbol, alpha, beta, x, xi, t: float = 0.0,
                    step_x: float | None = None,
                    step_xi: float | None = None) -> np.ndarray:
    """d^alpha_xi d^beta_x q at the given points.

    alpha and beta are per-axis order tuples (ints, each <= 4). First-order
    requests use analytic gradients when the symbol has them; everything
    else runs iterated centered stencils on the raw evaluations.
    """
    x = np.asarray(x, float)
    xi = np.asarray(xi, float)
    alpha = tuple(int(a) for a in np.atleast_1d(alpha))
    beta = tuple(int(b) for b in np.atleast_1d(beta))
    if any(a > 4 or a < 0 for a in alpha + beta):
        raise ValueError("per-axis derivative order must be in 0..4")
    ta, tb = sum(alpha), sum(beta)
    if ta + tb == 0:
        return sym(x, xi, t)
    if ta + tb == 1:
        if ta == 1 and sym.grad_xi is not None:
            return sym.dxi(x, xi, t)[..., alpha.index(1)]
        if tb == 1 and sym.grad_x is not None:
            return sym.dx(x, xi, t)[..., beta.index(1)]
    hx = sym.fd_step_x if step_x is None else step_x
    hxi = sym.fd_step_xi if step_xi is None else step_xi

    def accumulate(orders, base_fn, step, wrt):
        fns = [base_fn]
        for ax, d in enumerate(orders):
            if d == 0:
                continue
            offs, wts = _STENCILS[d]
            prev = fns

            def make(prev_fns, ax=ax, offs=offs, wts=wts):
                def g(xx, xxi):
                    e = np.zeros(xx.shape[-1] if wrt == "x" else xxi.shape[-1])
                    acc = 0.0
                    for off, w in zip(offs, wts):
                        shift = np.zeros_like(e)
                        shift[ax] = off * step
                        if wrt == "x":
                            acc = acc + w * prev_fns[0](xx + shift, xxi)
                        else:
                            acc = acc + w * prev_fns[0](xx, xxi + shift)
                    return acc / step ** d
                return g
            fns = [make(prev)]
        return fns[0]

    base = lambda xx, xxi: np.asarray(sym.fn(xx, xxi, t))
    with_x = accumulate(beta, base, hx, "x")
    full = accumulate(alpha, with_x, hxi, "xi")
    return full(x, xi)


# ---------------------------------------------------------------------------
# seminorm estimation

@dataclass
class SymbolSample:
    """Deterministic phase-space sample: x points and xi points, crossed."""

    x_points: np.ndarray    # (P, dim)
    xi_points: np.ndarray   # (Q, dim)

    @property
    def dim(self) -> int:
        return self.x_points.shape[-1]


def default_symbol_sample(dim: int, x_extent: float = 16.0,
                          xi_min: float = 1.0, xi_max: float = 1.0e4,
                          n_per_axis: int = 33) -> SymbolSample:
    """33^n x-points on |x| <= x_extent crossed with 33^n xi-points whose
    magnitudes are log-spaced in [xi_min, xi_max]."""
    ax = np.linspace(-x_extent, x_extent, n_per_axis)
    if dim == 1:
        xp = ax[:, None]
        n_pos = (n_per_axis + 1) // 2
        mags = np.geomspace(xi_min, xi_max, n_pos)
        xi = np.concatenate([-mags[: n_per_axis - n_pos][::-1], mags])[:, None]
    else:
        mesh = np.meshgrid(ax, ax, indexing="ij")
        xp = np.stack([m.ravel() for m in mesh], axis=-1)
        mags = np.geomspace(xi_min, xi_max, n_per_axis)
        angs = np.linspace(0.0, 2.0 * np.pi, n_per_axis, endpoint=False)
        mm, aa = np.meshgrid(mags, angs, indexing="ij")
        xi = np.stack([(mm * np.cos(aa)).ravel(), (mm * np.sin(aa)).ravel()],
                      axis=-1)
    return SymbolSample(xp, xi)


def _multi_indices(dim: int, max_total: int):
    if dim == 1:
        return [(a,) for a in range(max_total + 1)]
    out = []
    for a1, a2 in iter_product(range(max_total + 1), repeat=2):
        if a1 + a2 <= max_total:
            out.append((a1, a2))
    return out


@dataclass
class SeminormEntry:
    alpha: tuple
    beta: tuple
    value: float
    at_x: np.ndarray
    at_xi: np.ndarray


@dataclass
class SeminormReport:
    label: str
    order: float
    entries: list
    threshold: float | None
    verdict: bool

    @property
    def worst(self) -> SeminormEntry:
        return max(self.entries, key=lambda e: e.value)

    def value(self, alpha, beta) -> float:
        alpha = tuple(np.atleast_1d(alpha))
        beta = tuple(np.atleast_1d(beta))
        for e in self.entries:
            if e.alpha == alpha and e.beta == beta:
                return e.value
        raise KeyError((alpha, beta))


def estimate_seminorms(sym: Symbol, sample: SymbolSample,
                       max_alpha: int = 4, max_beta: int = 4,
                       threshold: float | None = None,
                       max_pairs: int = 20000) -> SeminormReport:
    """Scan sup |d^alpha_xi d^beta_x q| (1+|xi|)^(|alpha| - m) over the sample.

    The x/xi product is strided down to at most ``max_pairs`` evaluation
    points per entry to keep high-order scans affordable.
    """
    dim = sample.dim
    xp, xip = sample.x_points, sample.xi_points
    stride = max(1, int(np.ceil(np.sqrt(len(xp) * len(xip) / max_pairs))))
    xp = xp[::stride]
    xip = xip[::stride]
    X = xp[:, None, :]
    XI = xip[None, :, :]
    ximag = np.sqrt(np.sum(xip ** 2, axis=-1))[None, :]
    entries = []
    for alpha in _multi_indices(dim, max_alpha):
        weight = (1.0 + ximag) ** (sum(alpha) - sym.order)
        for beta in _multi_indices(dim, max_beta):
            vals = np.abs(eval_derivative(sym, alpha, beta, X, XI)) * weight
            idx = np.unravel_index(np.argmax(vals), vals.shape)
            entries.append(SeminormEntry(alpha, beta, float(vals[idx]),
                                         xp[idx[0]], xip[idx[1]]))
    worst = max(e.value for e in entries)
    verdict = True if threshold is None else bool(worst <= threshold)
    return SeminormReport(sym.label, sym.order, entries, threshold, verdict)
