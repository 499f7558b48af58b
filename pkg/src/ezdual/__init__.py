"""Epstein-Zin consumption-investment: value-process solvers, recursive dual
valuation and Monte Carlo verification of the primal/dual identity."""

from .bsde import ValueSurface, hamiltonian, solve_constant, solve_pde, verify_y_bounds
from .duality import DualityReport, evaluate_feedback, extract_policy, verify_duality
from .errors import ConfigError, DomainError, EZDualError, ModelError, RegimeError, SolverError
from .market import (
    ConstantModel,
    HestonModel,
    HestonParams,
    KimOmbergModel,
    KimOmbergParams,
    check_heston,
    check_kim_omberg,
    check_model,
    derive_coefficients,
)
from .preferences import EZPreference, Regime

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConstantModel", "DomainError", "DualityReport", "EZDualError", "EZPreference",
    "HestonModel", "HestonParams", "KimOmbergModel", "KimOmbergParams", "ModelError", "Regime",
    "RegimeError", "SolverError", "ValueSurface", "check_heston", "check_kim_omberg", "check_model",
    "derive_coefficients", "evaluate_feedback", "extract_policy", "hamiltonian", "solve_constant",
    "solve_pde", "verify_duality", "verify_y_bounds",
]
