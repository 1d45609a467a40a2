"""Riemannian adaptive stochastic optimization on embedded submanifolds."""

from .estimators import RiemannianMatrixCompletion, RiemannianPCA
from .exceptions import (
    DimensionError,
    DivergenceError,
    FeasibilityError,
    PoisonedStateError,
    RetractionError,
)
from .manifolds import Grassmann, Sphere, Stiefel
from .optim import BatchSchedule, OptimizerSpec, StepSchedule, minimize, step
from .problems import LrmcProblem, PcaProblem

__version__ = "0.1.0"

__all__ = [
    "Sphere",
    "Stiefel",
    "Grassmann",
    "OptimizerSpec",
    "StepSchedule",
    "BatchSchedule",
    "minimize",
    "step",
    "PcaProblem",
    "LrmcProblem",
    "RiemannianPCA",
    "RiemannianMatrixCompletion",
    "DimensionError",
    "FeasibilityError",
    "RetractionError",
    "PoisonedStateError",
    "DivergenceError",
]
