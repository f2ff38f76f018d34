from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Any

import cvxpy as cp
import numpy as np

from drsched.config import SolverSettings
from drsched.core.conic.program import ConicProgram, ConicSolution, Sense, SolveStatus, Tolerances, unpack_operator


log = logging.getLogger(__name__)

_STATUS_MAP: dict[str, SolveStatus] = {
    cp.OPTIMAL: "optimal",
    cp.INFEASIBLE: "infeasible",
    cp.INFEASIBLE_INACCURATE: "infeasible",
    cp.UNBOUNDED: "unbounded",
    cp.UNBOUNDED_INACCURATE: "unbounded",
}

# An inaccurate solve is promoted to optimal when residuals stay below this multiple of the tolerance.
_INACCURATE_SLACK = 100.0


def _solver_options(solver: str, tol: Tolerances, settings: SolverSettings) -> dict[str, Any]:
    name = solver.upper()
    if name == "CLARABEL":
        opts: dict[str, Any] = {"tol_feas": tol.feasibility, "tol_gap_rel": tol.gap, "tol_gap_abs": tol.gap}
        if settings.max_iters:
            opts["max_iter"] = int(settings.max_iters)
        return opts
    if name == "SCS":
        opts = {"eps_abs": tol.feasibility, "eps_rel": tol.gap}
        if settings.max_iters:
            opts["max_iters"] = int(settings.max_iters)
        return opts
    return {}


@dataclass
class _Translation:
    x: cp.Variable
    shift: cp.Parameter | None
    problem: cp.Problem
    row_constraints: list[tuple[str, cp.Constraint]]
    penalty_scale: cp.Parameter | None = None
    penalty_target: cp.Parameter | None = None


def _translate(program: ConicProgram, *, with_shift: bool, penalty_index: np.ndarray | None = None) -> _Translation:
    n = program.n_vars
    x = cp.Variable(n, name="x")
    constraints: list[cp.Constraint] = []
    row_constraints: list[tuple[str, cp.Constraint]] = []

    for group in program.linear:
        lhs = group.coeffs @ x
        if group.sense is Sense.LE:
            con = lhs <= group.rhs
        elif group.sense is Sense.GE:
            con = lhs >= group.rhs
        else:
            con = lhs == group.rhs
        constraints.append(con)
        row_constraints.append((group.name, con))

    for block in program.soc:
        scalar = (block.scalar.coeffs @ x + block.scalar.const)[0]
        if block.vector.rows == 0:
            constraints.append(scalar >= 0)
        else:
            constraints.append(cp.SOC(scalar, block.vector.coeffs @ x + block.vector.const))

    for block in program.psd:
        packed = block.packed.coeffs @ x + block.packed.const
        if block.size == 1:
            constraints.append(packed >= 0)
            continue
        full = unpack_operator(block.size) @ packed
        constraints.append(cp.reshape(full, (block.size, block.size), order="C") >> 0)

    finite_lo = np.flatnonzero(np.isfinite(program.lower))
    if finite_lo.size:
        constraints.append(x[finite_lo] >= program.lower[finite_lo])
    finite_hi = np.flatnonzero(np.isfinite(program.upper))
    if finite_hi.size:
        constraints.append(x[finite_hi] <= program.upper[finite_hi])

    objective = program.objective @ x + program.objective_const
    shift: cp.Parameter | None = None
    if with_shift:
        shift = cp.Parameter(n, name="objective_shift", value=np.zeros(n))
        objective = objective + shift @ x
    scale: cp.Parameter | None = None
    target: cp.Parameter | None = None
    if penalty_index is not None and np.size(penalty_index):
        idx = np.asarray(penalty_index, dtype=np.int64).ravel()
        # ||scale * x[idx] - target||^2 with scale = sqrt(rho/2), target = scale * center
        scale = cp.Parameter(nonneg=True, name="penalty_scale", value=0.0)
        target = cp.Parameter(idx.size, name="penalty_target", value=np.zeros(idx.size))
        objective = objective + cp.sum_squares(scale * x[idx] - target)
    problem = cp.Problem(cp.Minimize(objective), constraints)
    return _Translation(
        x=x, shift=shift, problem=problem, row_constraints=row_constraints, penalty_scale=scale, penalty_target=target
    )


class CvxpyBackend:
    """Solve contract realised through cvxpy's conic solvers."""

    def __init__(self, settings: SolverSettings | None = None) -> None:
        self.settings = settings or SolverSettings()

    @property
    def tolerances(self) -> Tolerances:
        return Tolerances(feasibility=self.settings.feasibility_tol, gap=self.settings.gap_tol)

    def solve(self, program: ConicProgram, tol: Tolerances | None = None) -> ConicSolution:
        return self.compile(program).solve(tol=tol)

    def compile(
        self,
        program: ConicProgram,
        *,
        with_shift: bool = False,
        penalty_index: np.ndarray | None = None,
    ) -> CompiledProgram:
        t0 = time.perf_counter()
        translation = _translate(program, with_shift=with_shift, penalty_index=penalty_index)
        log.debug(
            "Translated conic program",
            extra={**program.stats(), "seconds": round(time.perf_counter() - t0, 4)},
        )
        return CompiledProgram(program, translation, self.settings)


def solver_order(program: ConicProgram, settings: SolverSettings) -> list[str]:
    """Solvers to try, in order.

    Interior-point KKT systems hold every PSD block densely in svec form, so a
    program whose largest block exceeds ``large_psd_size`` starts with the
    first-order ``large_psd_solver`` instead.
    """

    order = [settings.solver]
    if settings.fallback_solver:
        order.append(settings.fallback_solver)
    largest = max((b.size for b in program.psd), default=0)
    if settings.large_psd_size is not None and largest > settings.large_psd_size:
        order.insert(0, settings.large_psd_solver)
    out: list[str] = []
    for name in order:
        if name.upper() not in {o.upper() for o in out}:
            out.append(name)
    return out


class CompiledProgram:
    """A translated program that can be re-solved with a new objective shift or penalty.

    Both enter as cvxpy parameters, so repeated solves reuse the
    canonicalisation.
    """

    def __init__(self, program: ConicProgram, translation: _Translation, settings: SolverSettings) -> None:
        self.program = program
        self._t = translation
        self._settings = settings

    def set_penalty(self, rho: float, center: np.ndarray) -> None:
        """Add ``(rho/2) ||x[penalty_index] - center||^2`` to the objective."""

        if self._t.penalty_scale is None or self._t.penalty_target is None:
            raise ValueError("program was compiled without a penalty index")
        scale = math.sqrt(0.5 * float(rho))
        self._t.penalty_scale.value = scale
        self._t.penalty_target.value = scale * np.asarray(center, dtype=float).ravel()

    def solve(
        self,
        objective_shift: np.ndarray | None = None,
        *,
        tol: Tolerances | None = None,
        penalty: tuple[float, np.ndarray] | None = None,
    ) -> ConicSolution:
        if objective_shift is not None:
            if self._t.shift is None:
                raise ValueError("program was compiled without an objective shift")
            self._t.shift.value = np.asarray(objective_shift, dtype=float)
        if penalty is not None:
            self.set_penalty(*penalty)
        tol = tol or Tolerances(self._settings.feasibility_tol, self._settings.gap_tol)

        solvers = solver_order(self.program, self._settings)
        result: ConicSolution | None = None
        for solver in solvers:
            result = self._solve_with(solver, tol)
            if result.status in {"optimal", "infeasible", "unbounded"}:
                return result
            log.warning(
                "Solver did not reach a definite status",
                extra={"solver": solver, "status": result.status, "raw_status": result.diagnostics.get("raw_status")},
            )
        assert result is not None
        return result

    def _solve_with(self, solver: str, tol: Tolerances) -> ConicSolution:
        problem = self._t.problem
        opts = _solver_options(solver, tol, self._settings)
        t0 = time.perf_counter()
        try:
            problem.solve(solver=solver.upper(), verbose=self._settings.verbose, **opts)
        except cp.error.SolverError as exc:
            wall = time.perf_counter() - t0
            log.warning("Solver raised", extra={"solver": solver, "error": str(exc)})
            return ConicSolution(
                status="numerical_limit",
                x=None,
                objective=float("nan"),
                wall_time=wall,
                solver=solver,
                diagnostics={"raw_status": "solver_error", "error": str(exc)},
            )
        wall = time.perf_counter() - t0

        raw = str(problem.status)
        x = None if self._t.x.value is None else np.asarray(self._t.x.value, dtype=float).copy()
        status: SolveStatus = _STATUS_MAP.get(raw, "numerical_limit")
        diagnostics: dict[str, Any] = {"raw_status": raw}

        if x is not None:
            residuals = self.program.residuals(x)
            diagnostics.update(residuals)
            diagnostics["shifted_objective"] = float(problem.value) if problem.value is not None else float("nan")
            if raw == cp.OPTIMAL_INACCURATE and _residuals_ok(residuals, tol.feasibility * _INACCURATE_SLACK):
                status = "optimal"
                diagnostics["inaccurate"] = True

        duals: dict[str, np.ndarray] = {}
        if status == "optimal":
            for name, con in self._t.row_constraints:
                if con.dual_value is not None:
                    value = np.atleast_1d(np.asarray(con.dual_value, dtype=float))
                    duals[name] = np.concatenate([duals[name], value]) if name in duals else value

        stats = problem.solver_stats
        iterations = getattr(stats, "num_iters", None) if stats is not None else None
        objective = self.program.objective_value(x) if x is not None else float("nan")
        log.debug(
            "Conic solve finished",
            extra={"solver": solver, "status": status, "raw_status": raw, "objective": objective, "seconds": round(wall, 4)},
        )
        return ConicSolution(
            status=status,
            x=x,
            objective=objective,
            iterations=iterations,
            wall_time=wall,
            solver=solver,
            row_duals=duals,
            diagnostics=diagnostics,
        )


def _residuals_ok(residuals: dict[str, float], tol: float) -> bool:
    return (
        residuals["max_linear_violation"] <= tol
        and residuals["max_soc_violation"] <= tol
        and residuals["min_psd_eigenvalue"] >= -tol
    )


def solve(program: ConicProgram, tol: Tolerances | None = None, *, settings: SolverSettings | None = None) -> ConicSolution:
    """Solve a conic program with the default backend."""

    return CvxpyBackend(settings).solve(program, tol)
