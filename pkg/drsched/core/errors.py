from __future__ import annotations

from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from drsched.core.conic.program import ConicSolution


class DrschedError(Exception):
    """Base class for every error raised by the scheduling core."""

    kind = "error"


class CaseError(DrschedError):
    kind = "case"


class ScenarioError(DrschedError):
    kind = "scenarios"


class ParameterError(DrschedError, ValueError):
    kind = "parameter"


class PartitionError(DrschedError):
    kind = "partition"


class InvalidAmbiguityError(DrschedError):
    kind = "ambiguity"

    def __init__(self, message: str, *, m_bar: float, samples: int, diagnostics: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.m_bar = float(m_bar)
        self.samples = int(samples)
        self.diagnostics = dict(diagnostics or {})


class InfeasibleError(DrschedError):
    kind = "infeasible"


class SolverError(DrschedError):
    kind = "solver"

    def __init__(self, message: str, *, solution: ConicSolution | None = None) -> None:
        super().__init__(message)
        self.solution = solution


# Errors caused by user input rather than by the numerics.
INPUT_ERRORS: tuple[type[DrschedError], ...] = (
    CaseError,
    ScenarioError,
    ParameterError,
    PartitionError,
    InvalidAmbiguityError,
)
