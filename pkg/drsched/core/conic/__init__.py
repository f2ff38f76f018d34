from __future__ import annotations

from drsched.core.conic.backend import CompiledProgram, CvxpyBackend, solve
from drsched.core.conic.program import (
    Affine,
    ConicProgram,
    ConicSolution,
    ProgramBuilder,
    Sense,
    Tolerances,
    VarBlock,
    min_eigenvalue,
    psd_inv_sqrt,
    psd_sqrt,
)

__all__ = [
    "Affine",
    "CompiledProgram",
    "ConicProgram",
    "ConicSolution",
    "CvxpyBackend",
    "ProgramBuilder",
    "Sense",
    "Tolerances",
    "VarBlock",
    "min_eigenvalue",
    "psd_inv_sqrt",
    "psd_sqrt",
    "solve",
]
