"""Numerical laboratory for dispersive smoothing machinery.

Periodic-box spectral tooling for quasilinear Schrodinger-type evolution:
symbol calculus and quantization, bicharacteristic escape classification,
Doi escape functions, frozen-coefficient linear flows with local-smoothing
diagnostics, and an artificial-viscosity Picard solver with a
vanishing-viscosity limit study.
"""

from .grid import Grid, StateField, Trajectory, sobolev_norm, wave_packet
from .coeffs import CoefficientSet, freeze_at_state, make_coefficients
from .rays import classify_nontrapping, flat_metric, bump_metric, trap_metric
from .nonlinear import SolverConfig, picard_solve, continuation_solve, \
    vanishing_viscosity

__version__ = "0.1.0"

__all__ = [
    "Grid", "StateField", "Trajectory", "sobolev_norm", "wave_packet",
    "CoefficientSet", "freeze_at_state", "make_coefficients",
    "classify_nontrapping", "flat_metric", "bump_metric", "trap_metric",
    "SolverConfig", "picard_solve", "continuation_solve",
    "vanishing_viscosity", "__version__",
]
