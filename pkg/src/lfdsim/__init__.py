"""Landau-Fermi-Dirac velocity-space simulator."""

__version__ = "0.1.0"

from .coefficients import build_kernels, compute_A, compute_potentials  # noqa: E402
from .equilibrium import EquilibriumParams, evaluate_equilibrium, fit_fermi_dirac  # noqa: E402
from .grid import VelocityGrid, make_grid, moments  # noqa: E402
from .stepper import StepConfig, Stepper  # noqa: E402

__all__ = [
    "VelocityGrid",
    "make_grid",
    "moments",
    "build_kernels",
    "compute_A",
    "compute_potentials",
    "EquilibriumParams",
    "fit_fermi_dirac",
    "evaluate_equilibrium",
    "StepConfig",
    "Stepper",
]
