from __future__ import annotations

import logging
import time
from dataclasses import replace
from typing import Any

import numpy as np

from drsched.config import SolverSettings
from drsched.core.conic.backend import CvxpyBackend
from drsched.core.conic.program import ProgramBuilder, Tolerances
from drsched.core.dro.exact import failed_decision, schedule_diagnostics
from drsched.core.errors import InfeasibleError, ParameterError
from drsched.core.network.models import NetworkCase
from drsched.core.network.schedule import ScheduleDecision, build_schedule_constraints, evaluate_profit
from drsched.core.pricing.moments import SupportBox


log = logging.getLogger(__name__)

RO_LABEL = "SIMPLIFIED"


def run_deterministic(
    case: NetworkCase,
    segments: int,
    lambda_fixed: Any,
    *,
    evaluate_at: Any | None = None,
    settings: SolverSettings | None = None,
    tol: Tolerances | None = None,
    model_name: str = "det",
) -> ScheduleDecision:
    """Maximise ``P'lam - 1'z`` over the schedule set at a fixed price.

    ``objective`` is minus the profit at ``lambda_fixed``; ``profit`` is taken
    at ``evaluate_at`` (defaults to ``lambda_fixed``).
    """

    lam = np.asarray(lambda_fixed, dtype=float).ravel()
    if lam.size != case.price_dim:
        raise ParameterError(f"price vector has {lam.size} entries, the schedule has {case.price_dim} unit-periods")
    at = lam if evaluate_at is None else np.asarray(evaluate_at, dtype=float).ravel()

    t0 = time.perf_counter()
    b = ProgramBuilder()
    model = build_schedule_constraints(case, segments, builder=b)
    b.add_objective(model.cost_expr().sum() - model.output_expr().dot(lam))
    program = b.build()
    build_seconds = time.perf_counter() - t0
    solution = CvxpyBackend(settings).solve(program, tol)
    if solution.status == "infeasible":
        raise InfeasibleError(f"{case.name}: schedule set is empty")
    if not solution.ok or solution.x is None:
        return failed_decision(model_name, case, solution)

    x = solution.x
    P, theta, z = model.outputs(x), model.angles(x), model.costs(x)
    decision = ScheduleDecision(
        status=solution.status,
        model=model_name,
        P=P,
        theta=theta,
        z=z,
        alpha=float("nan"),
        objective=-evaluate_profit(P, z, lam),
        profit=evaluate_profit(P, z, at),
        wall_time=build_seconds + solution.wall_time,
        diagnostics={
            "solver": solution.solver,
            "iterations": solution.iterations,
            "build_seconds": build_seconds,
            "solve_seconds": solution.wall_time,
            **schedule_diagnostics(case, P, theta, z, segments),
        },
    )
    log.info("Fixed-price schedule solved", extra={"model": model_name, "status": decision.status, "profit": decision.profit})
    return decision


def run_ro_baseline(
    case: NetworkCase,
    segments: int,
    box: SupportBox,
    *,
    evaluate_at: Any | None = None,
    settings: SolverSettings | None = None,
    tol: Tolerances | None = None,
) -> ScheduleDecision:
    """Box worst-case schedule: with ``P >= 0`` the inner minimum sits at ``lambda_minus``."""

    if box.dim != case.price_dim:
        raise ParameterError(f"support box has dimension {box.dim}, the schedule has {case.price_dim} unit-periods")
    decision = run_deterministic(case, segments, box.lambda_minus, evaluate_at=evaluate_at, settings=settings, tol=tol, model_name="ro")
    if not decision.ok:
        return decision
    return replace(decision, worst_profit=evaluate_profit(decision.P, decision.z, box.lambda_minus), extras={"label": RO_LABEL})
