"""Homogenization workbench for linear elasticity on periodically perforated domains."""

from .cell import CorrectorSet, EffectiveTensor, build_corrector_set
from .coefficients import CoefficientField
from .geometry import MacroDomain, PerforationSpec, build_macro_domain
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CoefficientField",
    "CorrectorSet",
    "EffectiveTensor",
    "MacroDomain",
    "PerforationSpec",
    "build_corrector_set",
    "build_macro_domain",
]
