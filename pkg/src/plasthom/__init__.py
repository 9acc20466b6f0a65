"""Periodic homogenization of finite-strain plasticity with plastic strains in SL(3)."""

__version__ = "0.1.0"

from .errors import (AssumptionViolated, InputError, NoConvergence, NumericalError,
                     PlasthomError, TableOutOfRange)
from .materials import MaterialModel, validate_assumptions

__all__ = ["__version__", "AssumptionViolated", "InputError", "MaterialModel", "NoConvergence",
           "NumericalError", "PlasthomError", "TableOutOfRange", "validate_assumptions"]
