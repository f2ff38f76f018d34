"""Consensus ADMM over boundary-bus angles.

Each region solves its own DR-CVaR program with a quadratic penalty pulling its
angle copies towards ``global - dual``. The coordinator averages the
(over-relaxed) copies, updates the scaled duals and stops when both residuals
fall below tolerance. Regions only ever see (and send) boundary angles and duals.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterator, Literal, Sequence

import numpy as np

from drsched.config import SolverSettings
from drsched.core.admm.partition import RegionPartition
from drsched.core.admm.region import RegionModel, RegionPrices, build_region_sdp
from drsched.core.conic.backend import CompiledProgram, CvxpyBackend
from drsched.core.conic.program import Affine, ConicProgram, ConicSolution, ProgramBuilder, Sense, Tolerances
from drsched.core.dro.cvar import check_beta
from drsched.core.dro.exact import failed_decision, schedule_diagnostics
from drsched.core.errors import ParameterError
from drsched.core.network.grid import admittance_sparse, cost_cuts, cut_envelope
from drsched.core.network.models import NetworkCase
from drsched.core.network.schedule import ScheduleDecision, build_schedule_constraints, check_schedule, evaluate_profit


log = logging.getLogger(__name__)

MessageKind = Literal["local_copy", "global", "dual"]
MESSAGE_KINDS: tuple[str, ...] = ("local_copy", "global", "dual")
TRACE_HEADER = ("iter", "primal_res", "dual_res", "sum_objective")

# Residual balancing: change rho when one residual exceeds the other by this factor.
_BALANCE_RATIO = 10.0
# Weight of angle moves against output moves when restoring a stitched schedule.
RESTORE_ANGLE_WEIGHT = 1e-3


@dataclass(frozen=True)
class ADMMConfig:
    """Consensus ADMM settings.

    ``eps_primal`` and ``eps_dual`` bound the residual norms divided by
    ``sqrt(copy count)``, i.e. the RMS per boundary-angle copy. ``rho`` of
    ``None`` means the mean off-diagonal susceptance magnitude.

    With ``adaptive_rho`` the coordinator rebalances rho every
    ``rho_interval`` iterations, keeps it within a factor ``rho_range`` of its
    start value and stops adapting after half of ``max_iter``.
    """

    rho: float | None = None
    eps_primal: float = 1e-4
    eps_dual: float = 1e-4
    max_iter: int = 500
    relaxation: float = 1.6
    adaptive_rho: bool = False
    rho_interval: int = 10
    rho_range: float = 100.0
    restore: bool = True
    workers: int | None = None
    record_messages: bool = True

    def __post_init__(self) -> None:
        _validate_admm_config(self)


def _validate_admm_config(cfg: ADMMConfig) -> None:
    if cfg.rho is not None and not (math.isfinite(cfg.rho) and cfg.rho > 0):
        raise ParameterError(f"admm: rho must be > 0, got {cfg.rho}")
    for name in ("eps_primal", "eps_dual"):
        v = getattr(cfg, name)
        if not (math.isfinite(v) and v > 0):
            raise ParameterError(f"admm: {name} must be > 0, got {v}")
    if cfg.max_iter < 1:
        raise ParameterError(f"admm: max_iter must be >= 1, got {cfg.max_iter}")
    if not (0.0 < cfg.relaxation < 2.0):
        raise ParameterError(f"admm: relaxation must lie in (0, 2), got {cfg.relaxation}")
    if cfg.rho_interval < 1:
        raise ParameterError(f"admm: rho_interval must be >= 1, got {cfg.rho_interval}")
    if not (math.isfinite(cfg.rho_range) and cfg.rho_range >= 1.0):
        raise ParameterError(f"admm: rho_range must be >= 1, got {cfg.rho_range}")
    if cfg.workers is not None and cfg.workers < 1:
        raise ParameterError(f"admm: workers must be >= 1, got {cfg.workers}")


def default_rho(partition: RegionPartition) -> float:
    """Mean magnitude of the nonzero off-diagonal susceptances."""

    B = admittance_sparse(partition.case).tocoo()
    off = np.abs(B.data[(B.row != B.col) & (B.data != 0)])
    return float(off.mean()) if off.size else 1.0


def balance_rho(rho: float, primal: float, dual: float, *, floor: float, ceiling: float) -> float:
    """One residual-balancing step, clamped to ``[floor, ceiling]``."""

    if primal > _BALANCE_RATIO * dual:
        return min(rho * 2.0, ceiling)
    if dual > _BALANCE_RATIO * primal:
        return max(rho / 2.0, floor)
    return rho


@dataclass(frozen=True)
class Message:
    iter: int
    region: int
    kind: MessageKind
    bus: int
    values: tuple[float, ...]

    def payload(self) -> dict[str, Any]:
        return {"iter": self.iter, "region": self.region, "kind": self.kind, "bus": self.bus, "values": list(self.values)}


class MessageLog:
    """Ordered record of what crossed the coordinator/region boundary."""

    def __init__(self, *, enabled: bool = True) -> None:
        self.enabled = enabled
        self._items: list[Message] = []
        self._lock = threading.Lock()

    def record(self, iteration: int, region: int, kind: MessageKind, bus: int, values: np.ndarray) -> None:
        if not self.enabled:
            return
        if kind not in MESSAGE_KINDS:
            raise ParameterError(f"unknown message kind: {kind!r}")
        msg = Message(iteration, region, kind, bus, tuple(float(v) for v in np.asarray(values).ravel()))
        with self._lock:
            self._items.append(msg)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Message]:
        return iter(list(self._items))

    def payloads(self) -> list[dict[str, Any]]:
        return [m.payload() for m in self._items]


@dataclass
class ConsensusState:
    """Coordinator-owned iterate: global angles ``(n_boundary, T)`` and per-region copies/duals."""

    global_angles: np.ndarray
    local: list[np.ndarray]
    duals: list[np.ndarray]
    rho: float
    iteration: int = 0
    primal_residual: float = math.inf
    dual_residual: float = math.inf

    def max_disagreement(self, gather: Sequence[np.ndarray]) -> float:
        worst = 0.0
        for x, g in zip(self.local, gather):
            if x.size:
                worst = max(worst, float(np.max(np.abs(x - self.global_angles[g]))))
        return worst


@dataclass(frozen=True)
class TraceRow:
    iter: int
    primal_res: float
    dual_res: float
    sum_objective: float
    rho: float


@dataclass(frozen=True)
class _RegionStep:
    """Immutable result a region hands back after one local solve."""

    index: int
    solution: ConicSolution = field(repr=False)
    copies: np.ndarray
    objective: float

    @property
    def ok(self) -> bool:
        return self.solution.ok and self.solution.x is not None


@dataclass(frozen=True)
class _Iterate:
    score: float
    xs: list[np.ndarray] = field(repr=False)
    iteration: int
    max_disagreement: float


@dataclass(frozen=True)
class ADMMResult:
    decision: ScheduleDecision
    trace: tuple[TraceRow, ...]
    messages: MessageLog = field(repr=False)
    region_objectives: tuple[float, ...]
    iterations: int
    converged: bool
    rho: float


def _gather_indices(partition: RegionPartition) -> list[np.ndarray]:
    pos = {b: i for i, b in enumerate(partition.boundary_buses)}
    return [np.asarray([pos[b] for b in reg.consensus_buses], dtype=np.int64) for reg in partition.regions]


def _solve_region(
    compiled: CompiledProgram,
    model: RegionModel,
    index: int,
    target: np.ndarray,
    rho: float,
    tol: Tolerances | None,
) -> _RegionStep:
    penalty = (rho, target) if model.n_copies else None
    solution = compiled.solve(tol=tol, penalty=penalty)
    if not solution.ok or solution.x is None:
        return _RegionStep(index, solution, np.zeros(model.copy_index.shape), math.nan)
    return _RegionStep(index, solution, model.copies(solution.x), model.objective_value(solution.x))


def restore_schedule(
    case: NetworkCase,
    P: np.ndarray,
    theta: np.ndarray,
    z: np.ndarray,
    segments: int = 10,
    *,
    settings: SolverSettings | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict[str, Any]]:
    """Move a stitched schedule onto the full-case feasible set.

    Copy disagreement at the boundary shows up in the balance rows scaled by
    the susceptances. This solves ``min sum|dP| + w sum|dtheta|`` over the
    full schedule rows and lifts ``z`` to the cut envelope of the new outputs.
    Costs never move down.
    """

    G, N, T = case.n_generators, case.n_buses, case.horizon
    before = check_schedule(case, P, theta, z, segments)
    info: dict[str, Any] = {"stitch_violation": max(before.values()), "restored": False}

    b = ProgramBuilder()
    sched = build_schedule_constraints(case, segments, builder=b)
    dp = b.add_variable("restore.p", G * T, lb=0.0)
    dth = b.add_variable("restore.theta", N * T, lb=0.0)
    out, ang = sched.output_expr(), sched.theta.expr()
    p0, th0 = np.asarray(P, dtype=float).ravel(), np.asarray(theta, dtype=float).ravel()
    b.add_rows("restore.p.hi", out - dp.expr(), Sense.LE, p0)
    b.add_rows("restore.p.lo", out + dp.expr(), Sense.GE, p0)
    b.add_rows("restore.theta.hi", ang - dth.expr(), Sense.LE, th0)
    b.add_rows("restore.theta.lo", ang + dth.expr(), Sense.GE, th0)
    b.add_objective(dp.expr().sum() + dth.expr().sum() * RESTORE_ANGLE_WEIGHT)

    solution = CvxpyBackend(settings).solve(b.build())
    if not solution.ok or solution.x is None:
        log.warning("Schedule restoration failed", extra={"status": solution.status, **info})
        return P, theta, z, info

    new_p = sched.outputs(solution.x)
    new_theta = sched.angles(solution.x)
    new_z = np.asarray(z, dtype=float).reshape(G, T).copy()
    for i, gen in enumerate(case.generators):
        new_z[i] = np.maximum(new_z[i], cut_envelope(cost_cuts(gen, segments), new_p[i]))
    info.update(
        restored=True,
        restoration_shift=float(np.max(np.abs(new_p - np.asarray(P).reshape(G, T)), initial=0.0)),
        restoration_angle_shift=float(np.max(np.abs(new_theta - np.asarray(theta).reshape(N, T)), initial=0.0)),
    )
    log.debug("Stitched schedule restored", extra=info)
    return new_p, new_theta, new_z, info


def stitch_decision(
    partition: RegionPartition,
    models: Sequence[RegionModel],
    xs: Sequence[np.ndarray],
    *,
    status: str,
    model_name: str,
    wall_time: float,
    diagnostics: dict[str, Any] | None = None,
    restore: bool = False,
    settings: SolverSettings | None = None,
) -> ScheduleDecision:
    """Assemble the full-case schedule from each region's owned units and buses.

    With ``restore`` the stitched ``(P, theta, z)`` is projected onto the full
    feasible set; the objective stays the sum of the region objectives.
    """

    case = partition.case
    G, N, T = case.n_generators, case.n_buses, case.horizon
    segments = models[0].handle.schedule.segments
    P = np.zeros((G, T))
    z = np.zeros((G, T))
    theta = np.zeros((N, T))
    mu = np.zeros(G * T)
    lam_lo = np.zeros(G * T)
    regions: list[dict[str, Any]] = []
    for model, x in zip(models, xs):
        sched = model.handle.schedule
        out, cost, ang = sched.outputs(x), sched.costs(x), sched.angles(x)
        for k, u in enumerate(model.region.units):
            P[u] = out[k]
            z[u] = cost[k]
            mu[u * T : (u + 1) * T] = model.handle.moments.mu[k * T : (k + 1) * T]
            lam_lo[u * T : (u + 1) * T] = model.handle.box.lambda_minus[k * T : (k + 1) * T]
        for bus in model.region.buses:
            theta[bus] = ang[sched.angle_row(bus)]
        regions.append(
            {
                "region": model.region.label,
                "objective": model.objective_value(x),
                "alpha": model.handle.alpha_value(x) if model.handle.dim else None,
                "dim": model.handle.dim,
                "params": model.handle.params.to_dict(),
            }
        )

    diag = dict(diagnostics or {})
    if restore:
        P, theta, z, info = restore_schedule(case, P, theta, z, segments, settings=settings)
        diag.update(info)
    objective = float(sum(r["objective"] for r in regions))
    diag.update(schedule_diagnostics(case, P, theta, z, segments))
    return ScheduleDecision(
        status=status,
        model=model_name,
        P=P,
        theta=theta,
        z=z,
        alpha=math.nan,
        objective=objective,
        profit=evaluate_profit(P, z, mu),
        worst_profit=evaluate_profit(P, z, lam_lo),
        wall_time=wall_time,
        diagnostics=diag,
        extras={"regions": regions, "partition": partition.summary()},
    )


def build_region_models(
    partition: RegionPartition,
    prices: Sequence[RegionPrices],
    beta: float,
    *,
    segments: int = 10,
) -> list[RegionModel]:
    if len(prices) != partition.n_regions:
        raise ParameterError(f"got {len(prices)} region price models for {partition.n_regions} regions")
    beta = check_beta(beta)
    return [build_region_sdp(partition, i, prices[i], beta, segments=segments) for i in range(partition.n_regions)]


def admm_solve(
    partition: RegionPartition,
    prices: Sequence[RegionPrices],
    beta: float,
    config: ADMMConfig | None = None,
    *,
    segments: int = 10,
    settings: SolverSettings | None = None,
    tol: Tolerances | None = None,
) -> ADMMResult:
    cfg = config or ADMMConfig()
    t0 = time.perf_counter()
    models = build_region_models(partition, prices, beta, segments=segments)
    backend = CvxpyBackend(settings)
    compiled = [backend.compile(m.program, penalty_index=m.copy_index if m.n_copies else None) for m in models]
    build_seconds = time.perf_counter() - t0

    case = partition.case
    T = case.horizon
    gather = _gather_indices(partition)
    counts = np.zeros(len(partition.boundary_buses))
    for g in gather:
        np.add.at(counts, g, 1.0)

    rho0 = cfg.rho if cfg.rho is not None else default_rho(partition)
    copies = partition.copy_count()
    scale = math.sqrt(copies) if copies else 1.0
    eps_p, eps_d = cfg.eps_primal * scale, cfg.eps_dual * scale
    state = ConsensusState(
        global_angles=np.zeros((len(partition.boundary_buses), T)),
        local=[np.zeros((len(g), T)) for g in gather],
        duals=[np.zeros((len(g), T)) for g in gather],
        rho=rho0,
    )
    messages = MessageLog(enabled=cfg.record_messages)
    trace: list[TraceRow] = []
    workers = cfg.workers or min(partition.n_regions, os.cpu_count() or 1)
    log.info(
        "ADMM started",
        extra={"regions": partition.n_regions, "copies": copies, "rho": rho0, "eps_primal": eps_p, "eps_dual": eps_d, "workers": workers},
    )

    best: _Iterate | None = None
    failure: _RegionStep | None = None
    last_x: list[np.ndarray] = []
    converged = False
    alpha = cfg.relaxation
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for it in range(1, cfg.max_iter + 1):
            state.iteration = it
            targets: list[np.ndarray] = []
            for d, (reg, g) in enumerate(zip(partition.regions, gather)):
                glob = state.global_angles[g]
                for j, bus in enumerate(reg.consensus_buses):
                    messages.record(it, reg.label, "global", case.bus_label(bus), glob[j])
                    messages.record(it, reg.label, "dual", case.bus_label(bus), state.duals[d][j])
                targets.append(glob - state.duals[d])

            futures = [
                pool.submit(_solve_region, compiled[d], models[d], d, targets[d].copy(), state.rho, tol) for d in range(len(models))
            ]
            steps = sorted((f.result() for f in futures), key=lambda s: s.index)
            failed = [s for s in steps if not s.ok]
            if failed:
                failure = failed[0]
                log.warning(
                    "Region solve failed, stopping",
                    extra={"iter": it, "region": models[failure.index].region.label, "status": failure.solution.status},
                )
                break

            for step, reg in zip(steps, partition.regions):
                for j, bus in enumerate(reg.consensus_buses):
                    messages.record(it, reg.label, "local_copy", case.bus_label(bus), step.copies[j])
            state.local = [s.copies for s in steps]
            last_x = [s.solution.x for s in steps]  # type: ignore[misc]
            objectives = [s.objective for s in steps]

            prev = state.global_angles
            relaxed = [alpha * x + (1.0 - alpha) * prev[g] for x, g in zip(state.local, gather)]
            total = np.zeros_like(prev)
            for xr, u, g in zip(relaxed, state.duals, gather):
                np.add.at(total, g, xr + u)
            state.global_angles = np.divide(total, counts[:, None], out=np.zeros_like(total), where=counts[:, None] > 0)
            for d, g in enumerate(gather):
                state.duals[d] = state.duals[d] + relaxed[d] - state.global_angles[g]

            r = math.sqrt(sum(float(np.sum((x - state.global_angles[g]) ** 2)) for x, g in zip(state.local, gather)))
            s = state.rho * math.sqrt(sum(float(np.sum((state.global_angles[g] - prev[g]) ** 2)) for g in gather))
            state.primal_residual, state.dual_residual = r, s
            trace.append(TraceRow(it, r, s, float(sum(objectives)), state.rho))
            if log.isEnabledFor(5):
                log.trace(  # type: ignore[attr-defined]
                    "ADMM iteration",
                    extra={"iter": it, "primal_res": r, "dual_res": s, "sum_objective": sum(objectives), "rho": state.rho},
                )

            score = max(r / eps_p, s / eps_d)
            if best is None or score < best.score:
                best = _Iterate(score, list(last_x), it, state.max_disagreement(gather))
            if r <= eps_p and s <= eps_d:
                converged = True
                break

            if cfg.adaptive_rho and it % cfg.rho_interval == 0 and it <= cfg.max_iter // 2:
                new_rho = balance_rho(state.rho, r, s, floor=rho0 / cfg.rho_range, ceiling=rho0 * cfg.rho_range)
                if new_rho != state.rho:
                    # Scaled duals follow rho so the unscaled multipliers stay put.
                    state.duals = [u * (state.rho / new_rho) for u in state.duals]
                    state.rho = new_rho

    wall = time.perf_counter() - t0
    diagnostics: dict[str, Any] = {
        "iterations": state.iteration,
        "converged": converged,
        "primal_residual": state.primal_residual,
        "dual_residual": state.dual_residual,
        "eps_primal": eps_p,
        "eps_dual": eps_d,
        "rho_final": state.rho,
        "relaxation": alpha,
        "build_seconds": build_seconds,
        "messages": len(messages),
    }
    if failure is not None:
        diagnostics["failed_region"] = models[failure.index].region.label
        diagnostics["region_status"] = failure.solution.status

    if converged:
        xs, status, picked, spread = last_x, "optimal", state.iteration, state.max_disagreement(gather)
    elif best is not None:
        xs, status, picked, spread = best.xs, "numerical_limit", best.iteration, best.max_disagreement
        if failure is None:
            log.warning(
                "ADMM hit the iteration limit",
                extra={"max_iter": cfg.max_iter, "primal_res": state.primal_residual, "dual_res": state.dual_residual},
            )
    else:
        assert failure is not None
        decision = replace(failed_decision("admm", case, failure.solution, **diagnostics), status="numerical_limit", wall_time=wall)
        log.warning("ADMM stopped before the first consensus step", extra={"region_status": failure.solution.status})
        return ADMMResult(decision, tuple(trace), messages, (), state.iteration, False, state.rho)

    diagnostics.update(iterate=picked, max_copy_disagreement=spread)
    decision = stitch_decision(
        partition,
        models,
        xs,
        status=status,
        model_name="admm",
        wall_time=wall,
        diagnostics=diagnostics,
        restore=cfg.restore and partition.n_regions > 1,
        settings=settings,
    )
    log.info(
        "ADMM finished",
        extra={"status": status, "iterations": state.iteration, "objective": decision.objective, "profit": decision.profit, "seconds": round(wall, 3)},
    )
    return ADMMResult(
        decision=decision,
        trace=tuple(trace),
        messages=messages,
        region_objectives=tuple(r["objective"] for r in decision.extras["regions"]),
        iterations=state.iteration,
        converged=converged,
        rho=state.rho,
    )


@dataclass(frozen=True)
class JointProgram:
    program: ConicProgram
    models: tuple[RegionModel, ...]
    offsets: tuple[int, ...]
    build_seconds: float = 0.0

    def region_x(self, x: np.ndarray) -> list[np.ndarray]:
        return [np.asarray(x)[off : off + m.program.n_vars] for m, off in zip(self.models, self.offsets)]


def build_joint_program(
    partition: RegionPartition,
    prices: Sequence[RegionPrices],
    beta: float,
    *,
    segments: int = 10,
) -> JointProgram:
    """All region programs in one, each boundary copy tied to its owner's angle by equality rows."""

    t0 = time.perf_counter()
    models = build_region_models(partition, prices, beta, segments=segments)
    b = ProgramBuilder()
    offsets = [b.embed(m.program, f"r{m.region.label}/") for m in models]
    n = b.n_vars
    for d, (m, off) in enumerate(zip(models, offsets)):
        for j, bus in enumerate(m.region.consensus_buses):
            o = partition.owner(bus)
            if o == d:
                continue
            owner = models[o]
            owner_idx = owner.handle.schedule.theta.indices[owner.handle.schedule.angle_row(bus), :] + offsets[o]
            copy_idx = m.copy_index[j] + off
            b.add_rows(
                f"r{m.region.label}/link",
                Affine.select(copy_idx, n) - Affine.select(owner_idx, n),
                Sense.EQ,
                0.0,
            )
    program = b.build()
    elapsed = time.perf_counter() - t0
    log.debug("Joint region program assembled", extra={**program.stats(), "seconds": round(elapsed, 4)})
    return JointProgram(program, tuple(models), tuple(offsets), elapsed)


def solve_joint(
    partition: RegionPartition,
    prices: Sequence[RegionPrices],
    beta: float,
    *,
    segments: int = 10,
    settings: SolverSettings | None = None,
    tol: Tolerances | None = None,
) -> ScheduleDecision:
    joint = build_joint_program(partition, prices, beta, segments=segments)
    solution = CvxpyBackend(settings).solve(joint.program, tol)
    if not solution.ok or solution.x is None:
        return failed_decision("joint", partition.case, solution)
    return stitch_decision(
        partition,
        joint.models,
        joint.region_x(solution.x),
        status=solution.status,
        model_name="joint",
        wall_time=joint.build_seconds + solution.wall_time,
        diagnostics={"solver": solution.solver, "iterations": solution.iterations, "solve_seconds": solution.wall_time},
    )


def write_trace_csv(path: str | Path, trace: Sequence[TraceRow]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in trace:
            w.writerow([row.iter, repr(row.primal_res), repr(row.dual_res), repr(row.sum_objective)])
    return p
