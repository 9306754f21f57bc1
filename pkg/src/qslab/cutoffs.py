"""Smooth compactly supported cutoffs built from the classical exp(-1/t) step.

Everything here is C^infinity with exact support boundaries, which the
verification sweeps rely on (no tail leakage outside the stated radii).
"""

from __future__ import annotations

import numpy as np


def sigma(t: np.ndarray | float) -> np.ndarray:
    """exp(-1/t) for t > 0, identically 0 for t <= 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0.0
    with np.errstate(divide="ignore", over="ignore"):
        out[pos] = np.exp(-1.0 / t[pos])
    return out


def smoothstep(t: np.ndarray | float) -> np.ndarray:
    """Monotone C^infinity step: 0 for t <= 0, 1 for t >= 1.

    smoothstep(t) + smoothstep(1 - t) == 1 exactly, which makes the
    integer-shift partition of unity in `partition_window` exact.
    """
    t = np.asarray(t, dtype=float)
    a = sigma(t)
    b = sigma(1.0 - t)
    return a / (a + b + (a + b == 0.0))


def smoothstep_d(t: np.ndarray | float) -> np.ndarray:
    """Derivative of `smoothstep` (vanishes outside (0, 1))."""
    t = np.asarray(t, dtype=float)
    a = sigma(t)
    b = sigma(1.0 - t)
    s = a + b
    da = np.zeros_like(t)
    db = np.zeros_like(t)
    pos = t > 0.0
    da[pos] = a[pos] / t[pos] ** 2
    neg = (1.0 - t) > 0.0
    db[neg] = b[neg] / (1.0 - t[neg]) ** 2
    return (da * b + a * db) / (s * s + (s == 0.0))


def radial_bump(y: np.ndarray | float) -> np.ndarray:
    """Even bump: 1 on |y| <= 1, 0 on |y| >= 2, smooth monotone between."""
    return smoothstep(2.0 - np.abs(np.asarray(y, dtype=float)))


def radial_bump_d(y: np.ndarray | float) -> np.ndarray:
    """d/dy of `radial_bump` (odd, supported on 1 < |y| < 2)."""
    y = np.asarray(y, dtype=float)
    return -smoothstep_d(2.0 - np.abs(y)) * np.sign(y)


def partition_window(y: np.ndarray | float) -> np.ndarray:
    """Window w with support (-1, 1) whose integer shifts sum to 1 exactly."""
    y = np.asarray(y, dtype=float)
    return smoothstep(1.0 + y) * smoothstep(1.0 - y)


def partition_window_d(y: np.ndarray | float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return (smoothstep_d(1.0 + y) * smoothstep(1.0 - y)
            - smoothstep(1.0 + y) * smoothstep_d(1.0 - y))
