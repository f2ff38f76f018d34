"""Exact moment-based worst-case CVaR schedule as one SDP.

The semi-infinite constraint ``r + lam'Q lam + lam'q >= h(y, alpha, lam)`` over
the support box is written as two LMIs (one per branch of ``h``) with box
multipliers ``tau1, tau2 >= 0``:

    [[Q, (q + A'tau1)/2], [., r - alpha - tau1'B]]                                >= 0
    [[Q, (q + P/(1-b) + A'tau2)/2], [., r + b alpha/(1-b) - 1'z/(1-b) - tau2'B]]  >= 0

and the moment term ``t >= (g2 S + mu mu')*Q + mu'q + sqrt(g1) ||S^1/2 (q + 2 Q mu)||``
is a second-order cone. The objective is ``r + t``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np
import scipy.sparse as sp

from drsched.config import SolverSettings
from drsched.core.conic.backend import CvxpyBackend
from drsched.core.conic.program import (
    Affine,
    ConicProgram,
    ConicSolution,
    ProgramBuilder,
    Sense,
    Tolerances,
    min_eigenvalue,
    psd_sqrt,
)
from drsched.core.dro.cvar import check_beta, h_values
from drsched.core.errors import ParameterError
from drsched.core.network.models import NetworkCase
from drsched.core.network.schedule import ScheduleDecision, ScheduleModel, build_schedule_constraints, check_schedule, evaluate_profit
from drsched.core.pricing.ambiguity import AmbiguityParams
from drsched.core.pricing.moments import MomentEstimate, SupportBox


log = logging.getLogger(__name__)

# Post-solve check tolerance, scaled by the largest output magnitude (at least 1).
CHECK_TOL = 1e-6


@dataclass(frozen=True)
class CvarBlocks:
    """Names of the risk variables one DR-CVaR block added to a program."""

    prefix: str
    dim: int
    alpha: str | None
    r: str | None
    t: str | None
    Q: str | None
    q: str | None
    tau1: str | None
    tau2: str | None


@dataclass(frozen=True)
class ExactModelHandle:
    program: ConicProgram
    schedule: ScheduleModel
    blocks: CvarBlocks
    moments: MomentEstimate = field(repr=False)
    box: SupportBox = field(repr=False)
    params: AmbiguityParams
    beta: float
    build_seconds: float = 0.0

    @property
    def dim(self) -> int:
        return self.blocks.dim

    def scalar(self, x: np.ndarray, name: str | None) -> float:
        return float(self.program.value(x, name).ravel()[0]) if name else 0.0

    def alpha_value(self, x: np.ndarray) -> float:
        return self.scalar(x, self.blocks.alpha)

    def objective_value(self, x: np.ndarray) -> float:
        return self.scalar(x, self.blocks.r) + self.scalar(x, self.blocks.t)

    def certificate(self, x: np.ndarray, lams: np.ndarray) -> np.ndarray:
        """``r + lam'Q lam + lam'q`` for each price row."""

        if self.dim == 0:
            return np.zeros(len(lams))
        Q = self.program.value(x, self.blocks.Q)
        q = self.program.value(x, self.blocks.q)
        return self.scalar(x, self.blocks.r) + np.einsum("ij,jk,ik->i", lams, Q, lams) + lams @ q

    def risk_diagnostics(self, x: np.ndarray) -> dict[str, Any]:
        eig = min_eigenvalue(self.program.value(x, self.blocks.Q)) if self.dim else math.inf
        return {"r": self.scalar(x, self.blocks.r), "t": self.scalar(x, self.blocks.t), "Q_min_eigenvalue": eig}


def check_dimensions(case: NetworkCase, moments: MomentEstimate, box: SupportBox, *, units: int | None = None) -> int:
    d = (case.n_generators if units is None else units) * case.horizon
    if moments.dim != d:
        raise ParameterError(f"moments have dimension {moments.dim}, the schedule has {d} unit-periods")
    if box.dim != d:
        raise ParameterError(f"support box has dimension {box.dim}, the schedule has {d} unit-periods")
    return d


def box_transpose(tau: Affine, d: int) -> Affine:
    """``A' tau`` for ``A = [I; -I]``."""

    return tau[np.arange(d)] - tau[np.arange(d, 2 * d)]


def emit_exact_cvar(
    b: ProgramBuilder,
    model: ScheduleModel,
    moments: MomentEstimate,
    box: SupportBox,
    params: AmbiguityParams,
    beta: float,
    *,
    prefix: str = "",
) -> CvarBlocks:
    """Add the worst-case CVaR variables, LMIs and moment cone for ``model``'s units.

    Adds ``r + t`` to the objective. A scope without units adds nothing: its
    loss is identically zero.
    """

    beta = check_beta(beta)
    d = model.price_dim
    if moments.dim != d or box.dim != d:
        raise ParameterError(f"price data has dimension {moments.dim}/{box.dim}, the schedule has {d} unit-periods")
    if d == 0:
        return CvarBlocks(prefix, 0, None, None, None, None, None, None, None)

    alpha = b.add_variable(f"{prefix}alpha").expr()
    r = b.add_variable(f"{prefix}r").expr()
    t = b.add_variable(f"{prefix}t").expr()
    Q = b.add_symmetric(f"{prefix}Q", d)
    q = b.add_variable(f"{prefix}q", d).expr()
    tau1 = b.add_variable(f"{prefix}tau1", 2 * d, lb=0.0).expr()
    tau2 = b.add_variable(f"{prefix}tau2", 2 * d, lb=0.0).expr()

    out = model.output_expr()
    zsum = model.cost_expr().sum()
    q_full = Affine.select(Q.indices.ravel(), Q.start + Q.size)
    bound = box.B
    k = 1.0 / (1.0 - beta)

    b.add_lmi(
        f"{prefix}lmi.1",
        q_full,
        (q + box_transpose(tau1, d)) * 0.5,
        r - alpha - tau1.dot(bound),
    )
    b.add_lmi(
        f"{prefix}lmi.2",
        q_full,
        (q + out * k + box_transpose(tau2, d)) * 0.5,
        r + alpha * (beta * k) - zsum * k - tau2.dot(bound),
    )

    mu = moments.mu
    second = params.gamma2 * moments.sigma + np.outer(mu, mu)
    scalar = t - q_full.dot(second.ravel()) - q.dot(mu)
    if params.gamma1 > 0:
        # v = q + 2 Q mu; the cone then carries d^2 nonzeros rather than d^3 / 2.
        v = b.add_variable(f"{prefix}v", d).expr()
        q_mu = q_full.lmul(sp.kron(sp.identity(d), sp.csr_matrix(mu[None, :]), format="csr"))
        b.add_rows(f"{prefix}moment.v", v - q - q_mu * 2.0, Sense.EQ, 0.0)
        vector = v.lmul(math.sqrt(params.gamma1) * psd_sqrt(moments.sigma))
    else:
        vector = Affine.zeros(0)
    b.add_soc(f"{prefix}moment", vector, scalar)
    b.add_objective(r + t)

    return CvarBlocks(
        prefix=prefix,
        dim=d,
        alpha=f"{prefix}alpha",
        r=f"{prefix}r",
        t=f"{prefix}t",
        Q=f"{prefix}Q",
        q=f"{prefix}q",
        tau1=f"{prefix}tau1",
        tau2=f"{prefix}tau2",
    )


def build_exact_sdp(
    case: NetworkCase,
    segments: int,
    moments: MomentEstimate,
    box: SupportBox,
    params: AmbiguityParams,
    beta: float,
) -> ExactModelHandle:
    check_dimensions(case, moments, box)
    t0 = time.perf_counter()
    b = ProgramBuilder()
    model = build_schedule_constraints(case, segments, builder=b)
    blocks = emit_exact_cvar(b, model, moments, box, params, beta)
    program = b.build()
    elapsed = time.perf_counter() - t0
    log.debug("Exact model assembled", extra={**program.stats(), "seconds": round(elapsed, 4)})
    return ExactModelHandle(program, model, blocks, moments, box, params, float(beta), elapsed)


class RiskHandle(Protocol):
    """What post-solve checks need from an assembled DR-CVaR model."""

    program: ConicProgram
    schedule: ScheduleModel
    moments: MomentEstimate
    box: SupportBox
    params: AmbiguityParams
    beta: float
    build_seconds: float

    def alpha_value(self, x: np.ndarray) -> float: ...

    def objective_value(self, x: np.ndarray) -> float: ...

    def certificate(self, x: np.ndarray, lams: np.ndarray) -> np.ndarray: ...

    def risk_diagnostics(self, x: np.ndarray) -> dict[str, Any]: ...


def failed_decision(model_name: str, case: NetworkCase, solution: ConicSolution, **diagnostics: Any) -> ScheduleDecision:
    G, N, T = case.n_generators, case.n_buses, case.horizon
    return ScheduleDecision(
        status=solution.status,
        model=model_name,
        P=np.full((G, T), np.nan),
        theta=np.full((N, T), np.nan),
        z=np.full((G, T), np.nan),
        alpha=math.nan,
        objective=math.nan,
        profit=math.nan,
        wall_time=solution.wall_time,
        diagnostics={**dict(solution.diagnostics), "solver": solution.solver, **diagnostics},
    )


def schedule_diagnostics(case: NetworkCase, P: np.ndarray, theta: np.ndarray, z: np.ndarray, segments: int) -> dict[str, Any]:
    violations = check_schedule(case, P, theta, z, segments)
    worst = max(violations.values())
    tol = CHECK_TOL * max(1.0, float(np.max(np.abs(P), initial=0.0)))
    if worst > tol:
        log.warning("Schedule violates constraints beyond tolerance", extra={"max_violation": worst, **violations})
    return {"schedule_violation": violations, "schedule_feasible": worst <= tol}


def extract_solution(handle: RiskHandle, solution: ConicSolution, *, model_name: str = "exact") -> ScheduleDecision:
    """Recover the schedule, VaR level and objective; check Q and the schedule rows."""

    case = handle.schedule.case
    if not solution.ok:
        return failed_decision(model_name, case, solution)
    x = solution.x
    assert x is not None
    P = handle.schedule.outputs(x)
    theta = handle.schedule.angles(x)
    z = handle.schedule.costs(x)

    risk = handle.risk_diagnostics(x)
    if risk["Q_min_eigenvalue"] < -CHECK_TOL * max(1.0, abs(handle.objective_value(x))):
        log.warning("Second-moment multiplier is not PSD within tolerance", extra={"min_eigenvalue": risk["Q_min_eigenvalue"]})
    diagnostics: dict[str, Any] = {
        **dict(solution.diagnostics),
        "solver": solution.solver,
        "iterations": solution.iterations,
        "build_seconds": handle.build_seconds,
        "solve_seconds": solution.wall_time,
        **risk,
        "ambiguity": handle.params.to_dict(),
        **schedule_diagnostics(case, P, theta, z, handle.schedule.segments),
    }
    return ScheduleDecision(
        status=solution.status,
        model=model_name,
        P=P,
        theta=theta,
        z=z,
        alpha=handle.alpha_value(x),
        objective=handle.objective_value(x),
        profit=evaluate_profit(P, z, handle.moments.mu),
        worst_profit=evaluate_profit(P, z, handle.box.lambda_minus),
        wall_time=handle.build_seconds + solution.wall_time,
        diagnostics=diagnostics,
    )


def lmi_min_eigenvalues(handle: RiskHandle, solution: ConicSolution) -> dict[str, float]:
    """Smallest eigenvalue of every PSD block at the solution.

    Symmetric multipliers are PSD through the LMIs they head; each is reported
    as ``<name>.psd``.
    """

    if solution.x is None:
        raise ParameterError("solution carries no primal point")
    out = {blk.name: min_eigenvalue(blk.matrix(solution.x)) for blk in handle.program.psd}
    for name, blk in handle.program.blocks.items():
        if blk.symmetric:
            out[f"{name}.psd"] = min_eigenvalue(handle.program.value(solution.x, name))
    return out


def sampled_feasibility(
    handle: RiskHandle,
    solution: ConicSolution,
    *,
    count: int = 10_000,
    seed: int = 0,
    box: SupportBox | None = None,
) -> float:
    """Worst ``h(y, alpha, lam) - certificate(lam)`` over uniform samples from the box.

    A value at or below zero (up to solver tolerance) means the semi-infinite
    constraint held at every sample.
    """

    if solution.x is None:
        raise ParameterError("solution carries no primal point")
    x = solution.x
    lams = (box or handle.box).sample(count, np.random.default_rng(seed))
    h = h_values(handle.schedule.outputs(x), handle.schedule.costs(x), handle.alpha_value(x), lams, handle.beta)
    return float(np.max(h - handle.certificate(x, lams)))


def empirical_bound(handle: RiskHandle, solution: ConicSolution, samples: np.ndarray) -> float:
    """Mean of ``h`` over the samples at the solution's schedule and alpha."""

    if solution.x is None:
        raise ParameterError("solution carries no primal point")
    x = solution.x
    return float(np.mean(h_values(handle.schedule.outputs(x), handle.schedule.costs(x), handle.alpha_value(x), samples, handle.beta)))


def solve_exact(
    case: NetworkCase,
    moments: MomentEstimate,
    box: SupportBox,
    params: AmbiguityParams,
    beta: float,
    *,
    segments: int = 10,
    settings: SolverSettings | None = None,
    tol: Tolerances | None = None,
) -> ScheduleDecision:
    handle = build_exact_sdp(case, segments, moments, box, params, beta)
    solution = CvxpyBackend(settings).solve(handle.program, tol)
    decision = extract_solution(handle, solution)
    log.info(
        "Exact model solved",
        extra={"status": decision.status, "objective": decision.objective, "profit": decision.profit, "seconds": round(decision.wall_time, 3)},
    )
    return decision
