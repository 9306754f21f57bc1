"""Periodic box discretization: grids, fields, spectra, cubes, trajectories.

Conventions
-----------
The box is [-L, L)^dim sampled at N points per axis, spacing h = 2L/N.
Spectral coefficients live on the lattice k = pi*m/L, m in [-N/2, N/2),
stored in FFT layout, and are normalized like the continuum transform:

    coef(k) = h^dim * sum_j u(x_j) exp(-i k . x_j)
    u(x_j)  = (2L)^-dim * sum_k coef(k) exp(+i k . x_j)

With this pairing the discrete Parseval identity
``l2_norm(u)^2 == (2L)^-dim * sum |coef|^2`` holds exactly, and Fourier
multipliers act as plain pointwise products on ``coef``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from .cutoffs import partition_window


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [-L, L)^dim."""

    dim: int
    n_points: int   # points per axis
    half_width: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n_points < 4 or self.n_points % 2:
            raise ValueError("n_points must be even and >= 4")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n_points

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_points,) * self.dim

    @property
    def size(self) -> int:
        return self.n_points ** self.dim

    @property
    def axis(self) -> np.ndarray:
        """Sample coordinates along one axis."""
        return -self.half_width + self.spacing * np.arange(self.n_points)

    @property
    def freq_axis(self) -> np.ndarray:
        """Frequency lattice pi*m/L along one axis, FFT layout."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)

    @property
    def x(self) -> np.ndarray:
        """Coordinates, shape ``shape + (dim,)``."""
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def k(self) -> np.ndarray:
        """Frequency points, shape ``shape + (dim,)``, FFT layout."""
        mesh = np.meshgrid(*([self.freq_axis] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def k_sq(self) -> np.ndarray:
        return np.sum(self.k ** 2, axis=-1)

    @property
    def k_max(self) -> float:
        return float(np.pi * (self.n_points // 2) / self.half_width)

    @property
    def phase(self) -> np.ndarray:
        """(-1)^(m_1+...+m_dim): exact value of exp(i k . L) on the lattice."""
        m = np.fft.fftfreq(self.n_points) * self.n_points
        p1 = (-1.0) ** m
        out = p1
        for _ in range(self.dim - 1):
            out = np.multiply.outer(out, p1)
        return out

    def mode_frequency(self, m: int) -> float:
        """Physical frequency of integer lattice mode m along one axis."""
        if not -self.n_points // 2 <= m < self.n_points // 2:
            raise ValueError(f"mode {m} not on the lattice")
        return np.pi * m / self.half_width

    def nearest_mode(self, freq: float) -> int:
        """Integer lattice mode closest to a requested physical frequency."""
        m = int(np.rint(freq * self.half_width / np.pi))
        return max(-self.n_points // 2, min(self.n_points // 2 - 1, m))


@dataclass
class StateField:
    """Complex field sampled on a grid at one instant."""

    grid: Grid
    values: np.ndarray
    time_tag: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values.view(np.float64))):
            raise ValueError("non-finite field values")

    def copy(self) -> "StateField":
        return StateField(self.grid, self.values.copy(), self.time_tag)


@dataclass
class Spectrum:
    """Spectral coefficients of a StateField, FFT layout."""

    grid: Grid
    coef: np.ndarray
    time_tag: float = 0.0


def forward_transform(f: StateField) -> Spectrum:
    g = f.grid
    coef = (g.spacing ** g.dim) * g.phase * np.fft.fftn(f.values)
    return Spectrum(g, coef, f.time_tag)


def inverse_transform(sp: Spectrum) -> StateField:
    g = sp.grid
    values = np.fft.ifftn(g.phase * sp.coef) / (g.spacing ** g.dim)
    return StateField(g, values, sp.time_tag)


def _coef(grid: Grid, values: np.ndarray) -> np.ndarray:
    return (grid.spacing ** grid.dim) * grid.phase * np.fft.fftn(values)


def _values(grid: Grid, coef: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(grid.phase * coef) / (grid.spacing ** grid.dim)


def apply_multiplier(f: StateField, mult: np.ndarray) -> StateField:
    """Apply a Fourier multiplier given as an array on the frequency lattice."""
    g = f.grid
    out = _values(g, mult * _coef(g, f.values))
    return StateField(g, out, f.time_tag)


def spectral_gradient(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Gradient via the lattice, shape ``grid.shape + (dim,)``."""
    coef = _coef(grid, values)
    out = np.empty(grid.shape + (grid.dim,), dtype=np.complex128)
    k = grid.k
    for ax in range(grid.dim):
        out[..., ax] = _values(grid, 1j * k[..., ax] * coef)
    return out


def spectral_derivative(grid: Grid, values: np.ndarray, axis: int) -> np.ndarray:
    coef = _coef(grid, values)
    return _values(grid, 1j * grid.k[..., axis] * coef)


# ---------------------------------------------------------------------------
# norms

def l2_norm(f: StateField) -> float:
    g = f.grid
    return float(np.sqrt(g.spacing ** g.dim * np.sum(np.abs(f.values) ** 2)))


def sobolev_norm(f: StateField, s: float) -> float:
    """H^s norm via the multiplier (1 + |k|^2)^(s/2)."""
    if not -10.0 <= s <= 10.0:
        raise ValueError(f"sobolev index {s} outside [-10, 10]")
    g = f.grid
    coef = _coef(g, f.values)
    w = (1.0 + g.k_sq) ** s
    total = np.sum(w * np.abs(coef) ** 2) / (2.0 * g.half_width) ** g.dim
    return float(np.sqrt(total))


def sobolev_norm_values(grid: Grid, values: np.ndarray, s: float) -> float:
    return sobolev_norm(StateField(grid, values), s)


def smoothing_weight(f: StateField, order: float = 0.5) -> StateField:
    """Apply J^order = (1 + |k|^2)^(order/2); J^(1/2) is the smoothing weight."""
    g = f.grid
    return apply_multiplier(f, (1.0 + g.k_sq) ** (order / 2.0))


# ---------------------------------------------------------------------------
# cube partitions

@dataclass
class CubePartition:
    """Axis-aligned partition of the box into equal cubes (default side 1).

    Cube indices are integer lattice points; cube c covers
    [-L + c*side, -L + (c+1)*side) per axis, with center stored in
    ``centers``. Doubles share the center with twice the side and wrap
    periodically at the box edge.
    """

    grid: Grid
    side: float = 1.0
    labels: np.ndarray = dc_field(init=False, repr=False)
    centers: np.ndarray = dc_field(init=False, repr=False)

    def __post_init__(self):
        g = self.grid
        per_axis = 2.0 * g.half_width / self.side
        if abs(per_axis - round(per_axis)) > 1e-12:
            raise ValueError("cube side must divide the box edge")
        self.per_axis = int(round(per_axis))
        ax_label = np.floor((g.axis + g.half_width) / self.side).astype(int)
        ax_label = np.clip(ax_label, 0, self.per_axis - 1)
        if g.dim == 1:
            self.labels = ax_label
        else:
            self.labels = (ax_label[:, None] * self.per_axis + ax_label[None, :])
        ax_centers = -g.half_width + self.side * (np.arange(self.per_axis) + 0.5)
        if g.dim == 1:
            self.centers = ax_centers[:, None]
        else:
            cc = np.meshgrid(ax_centers, ax_centers, indexing="ij")
            self.centers = np.stack([c.ravel() for c in cc], axis=-1)

    @property
    def n_cubes(self) -> int:
        return self.per_axis ** self.grid.dim

    def wrap(self, disp: np.ndarray) -> np.ndarray:
        """Wrap displacements to [-L, L) per axis."""
        L = self.grid.half_width
        return (disp + L) % (2.0 * L) - L

    def window_values(self, mu: int) -> np.ndarray:
        """Smooth window subordinate to the double of cube mu, on the grid.

        Windows over all cubes sum to 1 exactly at every grid point.
        """
        disp = self.wrap(self.grid.x - self.centers[mu])
        w = partition_window(disp[..., 0] / self.side)
        for ax in range(1, self.grid.dim):
            w = w * partition_window(disp[..., ax] / self.side)
        return w

    def double_mask(self, mu: int) -> np.ndarray:
        """Grid points inside the double cube of mu (open, sup-metric)."""
        disp = self.wrap(self.grid.x - self.centers[mu])
        return np.all(np.abs(disp) < self.side, axis=-1)

    def cube_l2_sq(self, values: np.ndarray) -> np.ndarray:
        """Per-cube integral of |values|^2, shape (n_cubes,)."""
        g = self.grid
        dens = (np.abs(values) ** 2).ravel() * g.spacing ** g.dim
        return np.bincount(self.labels.ravel(), weights=dens,
                           minlength=self.n_cubes)


# ---------------------------------------------------------------------------
# trajectories and space-time norms

@dataclass
class Trajectory:
    """Time-ordered field samples with uniform spacing."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray   # shape (n_times,) + grid.shape

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != (len(self.times),) + self.grid.shape:
            raise ValueError("trajectory values shape mismatch")
        if len(self.times) >= 2:
            dt = np.diff(self.times)
            if np.any(dt <= 0):
                raise ValueError("times must be strictly increasing")
            if np.ptp(dt) > 1e-9 * dt[0]:
                raise ValueError("times must be uniformly spaced")

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.n_times > 1 else 0.0

    def field(self, i: int) -> StateField:
        return StateField(self.grid, self.values[i], float(self.times[i]))

    def final(self) -> StateField:
        return self.field(self.n_times - 1)

    def sup_norm(self, s: float | None = None) -> float:
        """sup over samples of the L2 (s=None) or H^s norm."""
        if s is None:
            return max(l2_norm(self.field(i)) for i in range(self.n_times))
        return max(sobolev_norm(self.field(i), s) for i in range(self.n_times))


def cube_spacetime_l2(tr: Trajectory, part: CubePartition,
                      transform=None) -> np.ndarray:
    """Per-cube space-time L2 norms over the whole trajectory (trapezoid).

    ``transform`` optionally maps each StateField to a new one first
    (e.g. the smoothing weight J^(1/2)).
    """
    rows = np.empty((tr.n_times, part.n_cubes))
    for i in range(tr.n_times):
        f = tr.field(i)
        if transform is not None:
            f = transform(f)
        rows[i] = part.cube_l2_sq(f.values)
    if tr.n_times == 1:
        return np.sqrt(rows[0] * 0.0)
    integ = np.trapezoid(rows, dx=tr.dt, axis=0)
    return np.sqrt(integ)


def triple_norm_sup(tr: Trajectory, part: CubePartition, transform=None) -> float:
    """sup over cubes of the space-time L2 norm."""
    return float(np.max(cube_spacetime_l2(tr, part, transform)))


def triple_norm_sum(tr: Trajectory, part: CubePartition, transform=None) -> float:
    """Sum over cubes of the space-time L2 norms."""
    return float(np.sum(cube_spacetime_l2(tr, part, transform)))


# ---------------------------------------------------------------------------
# standard fields

def plane_wave(grid: Grid, modes: int | tuple[int, ...],
               amplitude: complex = 1.0) -> StateField:
    """Exact lattice mode exp(i k . x) with integer mode index per axis."""
    if isinstance(modes, int):
        modes = (modes,) * grid.dim
    phase = np.zeros(grid.shape)
    for ax, m in enumerate(modes):
        phase = phase + grid.mode_frequency(m) * grid.x[..., ax]
    return StateField(grid, amplitude * np.exp(1j * phase))


def wave_packet(grid: Grid, center, carrier, width: float = 1.0,
                amplitude: complex = 1.0) -> StateField:
    """Gaussian envelope times a lattice-snapped carrier wave.

    The envelope must be narrow relative to the box for the field to be
    numerically periodic; the carrier is snapped to the nearest lattice
    frequency per axis.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    carrier = np.atleast_1d(np.asarray(carrier, dtype=float))
    x = grid.x
    phase = np.zeros(grid.shape)
    r_sq = np.zeros(grid.shape)
    for ax in range(grid.dim):
        k_ax = grid.mode_frequency(grid.nearest_mode(carrier[ax]))
        phase = phase + k_ax * x[..., ax]
        r_sq = r_sq + (x[..., ax] - center[ax]) ** 2
    vals = amplitude * np.exp(-r_sq / (2.0 * width ** 2)) * np.exp(1j * phase)
    return StateField(grid, vals)


# ---------------------------------------------------------------------------
# binary field dumps

_HEADER = struct.Struct("<IId")   # dim: u32, n_points: u32, half_width: f64


def dump_field(path, f: StateField) -> None:
    """Write a field: little-endian header (dim u32, N u32, L f64) then
    interleaved (re, im) float64 pairs in row-major point order."""
    g = f.grid
    data = np.ascontiguousarray(f.values, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(g.dim, g.n_points, g.half_width))
        fh.write(data.tobytes())


def load_field(path) -> StateField:
    with open(path, "rb") as fh:
        dim, n, L = _HEADER.unpack(fh.read(_HEADER.size))
        grid = Grid(dim, n, L)
        raw = fh.read(16 * grid.size)
    values = np.frombuffer(raw, dtype="<c16").reshape(grid.shape)
    return StateField(grid, values.astype(np.complex128))
