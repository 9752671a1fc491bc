"""Smooth approximation of functions on Hilbert space by functions with no critical points."""

__version__ = "0.1.0"

from .catalog import constant, custom, linear, oscillatory, quadratic
from .errors import CoverBudgetExceeded, DegenerateFrame, EngineError, OutsideDomain
from .pipeline import build_psi, eval_psi, separate, support_function, verify
from .space import Ball, IndexAllocator, SparseVec

__all__ = [
    "Ball",
    "CoverBudgetExceeded",
    "DegenerateFrame",
    "EngineError",
    "IndexAllocator",
    "OutsideDomain",
    "SparseVec",
    "build_psi",
    "constant",
    "custom",
    "eval_psi",
    "linear",
    "oscillatory",
    "quadratic",
    "separate",
    "support_function",
    "verify",
]
