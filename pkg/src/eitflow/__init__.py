"""Eulerian fluid dynamics with relaxing heat flux and viscous stress."""

from .constitutive import ClosureError, ClosureSpec, Mode
from .fields import AxisKind, Grid
from .solver import BoundaryPolicy, FieldSet, Model, StepControl, evaluate_rhs, initial_fields, run, step
from .thermo import AdmissibilityError, DomainError, EquilibriumEOS, NonEqEOS

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError",
    "AxisKind",
    "BoundaryPolicy",
    "ClosureError",
    "ClosureSpec",
    "DomainError",
    "EquilibriumEOS",
    "FieldSet",
    "Grid",
    "Mode",
    "Model",
    "NonEqEOS",
    "StepControl",
    "evaluate_rhs",
    "initial_fields",
    "run",
    "step",
]
