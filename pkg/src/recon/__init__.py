"""Partial-data reconstruction of Radon-type integrals of a Schrodinger potential
from Carleman-weighted Green's operators on a tetrahedral ball mesh."""

from .errors import (
    ConfigError,
    IllConditioned,
    MaskViolation,
    NearSingular,
    NotContracting,
    ReconError,
    StageError,
    TauTooLarge,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "IllConditioned",
    "MaskViolation",
    "NearSingular",
    "NotContracting",
    "ReconError",
    "StageError",
    "TauTooLarge",
    "__version__",
]
