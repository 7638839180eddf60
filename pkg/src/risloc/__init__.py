"""Near-field RIS-aided snapshot localization: simulator, estimator, bounds and sweeps."""

from .errors import (
    DegenerateGeometry,
    DegenerateModel,
    NumericalFailure,
    ParseError,
    RankDeficient,
    RislocError,
    Unidentifiable,
    ValidationError,
)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DegenerateGeometry",
    "DegenerateModel",
    "NumericalFailure",
    "ParseError",
    "RankDeficient",
    "RislocError",
    "Unidentifiable",
    "ValidationError",
    "__version__",
]
