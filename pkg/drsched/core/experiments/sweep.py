from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from drsched.config import BetaScaling, SolverSettings
from drsched.core.admm.consensus import ADMMConfig, admm_solve
from drsched.core.admm.partition import RegionPartition
from drsched.core.admm.region import region_prices
from drsched.core.dro.cvar import check_beta
from drsched.core.dro.exact import solve_exact
from drsched.core.dro.split import solve_split
from drsched.core.errors import DrschedError, ParameterError
from drsched.core.experiments.baselines import RO_LABEL, run_deterministic, run_ro_baseline
from drsched.core.network.models import NetworkCase
from drsched.core.network.schedule import ScheduleDecision
from drsched.core.pricing.ambiguity import AmbiguityParams, ambiguity_params
from drsched.core.pricing.moments import MomentEstimate, SupportBox, estimate_moments, support_box
from drsched.core.pricing.scenarios import ScenarioSet


log = logging.getLogger(__name__)

MODELS: tuple[str, ...] = ("exact", "split", "admm", "ro", "det")

SWEEP_HEADER = ("delta", "beta", "model", "label", "status", "objective", "profit", "worst_profit")
TIMING_HEADER = ("wall_time", "build_seconds", "solve_seconds")


@dataclass(frozen=True)
class SweepOptions:
    segments: int = 10
    pieces: int = 2
    partition: RegionPartition | None = None
    beta_scaling: BetaScaling = "m"
    gammas: tuple[float, float] | None = None
    eps_reg: float | None = None
    settings: SolverSettings | None = None
    admm: ADMMConfig | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.segments < 1:
            raise ParameterError(f"segments must be >= 1, got {self.segments}")
        if self.pieces < 1:
            raise ParameterError(f"pieces must be >= 1, got {self.pieces}")
        if self.workers < 1:
            raise ParameterError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class SweepRow:
    delta: float
    beta: float
    model: str
    status: str
    objective: float
    profit: float
    worst_profit: float
    wall_time: float
    build_seconds: float = 0.0
    solve_seconds: float = 0.0
    label: str = ""
    error: str | None = None

    @property
    def key(self) -> tuple[float, float, int]:
        return (self.delta, self.beta, MODELS.index(self.model))

    def to_dict(self) -> dict[str, Any]:
        return {
            "delta": self.delta,
            "beta": self.beta,
            "model": self.model,
            "label": self.label,
            "status": self.status,
            "objective": self.objective,
            "profit": self.profit,
            "worst_profit": self.worst_profit,
            "wall_time": self.wall_time,
            "error": self.error,
        }


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    case: str
    samples: int

    def cell(self, delta: float, beta: float, model: str) -> SweepRow:
        for row in self.rows:
            if row.delta == delta and row.beta == beta and row.model == model:
                return row
        raise KeyError((delta, beta, model))

    def to_dict(self) -> dict[str, Any]:
        return {"case": self.case, "samples": self.samples, "rows": [r.to_dict() for r in self.rows]}


def gap_metric(p_dro: float, p_app: float) -> float:
    """Relative profit gap ``|p_dro - p_app| / |p_dro|``."""

    if p_dro == 0:
        raise ZeroDivisionError("gap metric is undefined for a zero reference profit")
    return abs(p_dro - p_app) / abs(p_dro)


def _validate_lists(deltas: Sequence[float], betas: Sequence[float], models: Sequence[str]) -> None:
    if not deltas:
        raise ParameterError("sweep needs at least one delta")
    if not betas:
        raise ParameterError("sweep needs at least one beta")
    if not models:
        raise ParameterError("sweep needs at least one model")
    unknown = [m for m in models if m not in MODELS]
    if unknown:
        raise ParameterError(f"unknown models: {', '.join(unknown)} (expected {', '.join(MODELS)})")
    for d in deltas:
        if not 0.0 < float(d) < 1.0:
            raise ParameterError(f"delta must lie in (0, 1), got {d}")
    for b in betas:
        check_beta(b)


@dataclass(frozen=True)
class _PriceModel:
    moments: MomentEstimate = field(repr=False)
    box: SupportBox = field(repr=False)


def _params(price: _PriceModel, delta: float, samples: int, opts: SweepOptions) -> AmbiguityParams:
    if opts.gammas is not None:
        return AmbiguityParams.from_gammas(opts.gammas[0], opts.gammas[1], delta=delta, samples=samples, dim=price.moments.dim)
    return ambiguity_params(price.moments, price.box, delta, samples, beta_scaling=opts.beta_scaling)


def run_model(
    model: str,
    case: NetworkCase,
    scenarios: ScenarioSet,
    delta: float,
    beta: float,
    opts: SweepOptions,
    *,
    price: _PriceModel | None = None,
) -> ScheduleDecision:
    """Run one model of the pipeline on already-loaded scenarios."""

    if price is None:
        moments = estimate_moments(scenarios, opts.eps_reg)
        price = _PriceModel(moments, support_box(scenarios))
    mu = price.moments.mu
    if model == "det":
        return run_deterministic(case, opts.segments, mu, settings=opts.settings)
    if model == "ro":
        return run_ro_baseline(case, opts.segments, price.box, evaluate_at=mu, settings=opts.settings)
    if model == "admm":
        if opts.partition is None:
            raise ParameterError("the admm model needs a partition")
        prices = region_prices(
            opts.partition, scenarios, delta=delta, beta_scaling=opts.beta_scaling, gammas=opts.gammas, eps_reg=opts.eps_reg
        )
        result = admm_solve(opts.partition, prices, beta, opts.admm, segments=opts.segments, settings=opts.settings)
        return result.decision
    params = _params(price, delta, scenarios.count, opts)
    if model == "exact":
        return solve_exact(case, price.moments, price.box, params, beta, segments=opts.segments, settings=opts.settings)
    if model == "split":
        return solve_split(case, price.moments, price.box, params, beta, pieces=opts.pieces, segments=opts.segments, settings=opts.settings)
    raise ParameterError(f"unknown model: {model!r}")


def _row(delta: float, beta: float, model: str, decision: ScheduleDecision) -> SweepRow:
    diag = decision.diagnostics
    return SweepRow(
        delta=delta,
        beta=beta,
        model=model,
        status=decision.status,
        objective=decision.objective,
        profit=decision.profit,
        worst_profit=decision.worst_profit if decision.worst_profit is not None else math.nan,
        wall_time=decision.wall_time,
        build_seconds=float(diag.get("build_seconds", 0.0)),
        solve_seconds=float(diag.get("solve_seconds", decision.wall_time)),
        label=RO_LABEL if model == "ro" else "",
    )


def _cell(case: NetworkCase, scenarios: ScenarioSet, price: _PriceModel, delta: float, beta: float, model: str, opts: SweepOptions) -> SweepRow:
    t0 = time.perf_counter()
    try:
        decision = run_model(model, case, scenarios, delta, beta, opts, price=price)
    except DrschedError as exc:
        log.warning("Sweep cell failed", extra={"delta": delta, "beta": beta, "model": model, "kind": exc.kind, "error": str(exc)})
        nan = math.nan
        return SweepRow(
            delta, beta, model, exc.kind, nan, nan, nan, time.perf_counter() - t0, label=RO_LABEL if model == "ro" else "", error=str(exc)
        )
    return _row(delta, beta, model, decision)


def sweep(
    case: NetworkCase,
    scenarios: ScenarioSet,
    deltas: Sequence[float],
    betas: Sequence[float],
    models: Sequence[str],
    options: SweepOptions | None = None,
) -> SweepResult:
    """Run every requested (delta, beta, model) cell; failures become the cell's status."""

    opts = options or SweepOptions()
    _validate_lists(deltas, betas, models)
    moments = estimate_moments(scenarios, opts.eps_reg)
    price = _PriceModel(moments, support_box(scenarios))
    cells = [(float(d), float(b), m) for d in deltas for b in betas for m in models]
    log.info("Sweep started", extra={"case": case.name, "cells": len(cells), "workers": opts.workers})

    if opts.workers > 1:
        with ThreadPoolExecutor(max_workers=opts.workers) as pool:
            rows = list(pool.map(lambda c: _cell(case, scenarios, price, c[0], c[1], c[2], opts), cells))
    else:
        rows = [_cell(case, scenarios, price, d, b, m, opts) for d, b, m in cells]
    rows.sort(key=lambda r: r.key)
    failed = sum(1 for r in rows if r.status != "optimal")
    log.info("Sweep finished", extra={"cells": len(rows), "failed": failed})
    return SweepResult(tuple(rows), case.name, scenarios.count)


def write_sweep_csv(path: str | Path, result: SweepResult, *, timing: bool = True) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    header = SWEEP_HEADER + (TIMING_HEADER if timing else ())
    with p.open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in result.rows:
            cells: list[Any] = [repr(r.delta), repr(r.beta), r.model, r.label, r.status, repr(r.objective), repr(r.profit), repr(r.worst_profit)]
            if timing:
                cells += [f"{r.wall_time:.6f}", f"{r.build_seconds:.6f}", f"{r.solve_seconds:.6f}"]
            w.writerow(cells)
    return p


@dataclass(frozen=True)
class TimingComparison:
    exact: float
    split: float
    admm: float | None
    statuses: dict[str, str]

    def to_dict(self) -> dict[str, Any]:
        return {"exact": self.exact, "split": self.split, "admm": self.admm, "statuses": dict(self.statuses)}


def compare_timing(
    case: NetworkCase,
    scenarios: ScenarioSet,
    *,
    delta: float = 0.2,
    beta: float = 0.9,
    options: SweepOptions | None = None,
) -> TimingComparison:
    """Wall time of exact, split and (with a partition) ADMM solves on the same data."""

    opts = options or SweepOptions()
    models = ["exact", "split"] + (["admm"] if opts.partition is not None else [])
    result = sweep(case, scenarios, [delta], [beta], models, opts)
    times = {r.model: r.wall_time for r in result.rows}
    return TimingComparison(
        exact=times["exact"],
        split=times["split"],
        admm=times.get("admm"),
        statuses={r.model: r.status for r in result.rows},
    )
