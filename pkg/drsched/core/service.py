from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from drsched.config import DrschedSettings, NoiseFamily, load_settings, package_cases_dir
from drsched.core.admm.consensus import ADMMConfig, MessageLog, TraceRow, admm_solve
from drsched.core.admm.partition import RegionPartition, partition_case, read_partition, single_region
from drsched.core.admm.region import region_prices
from drsched.core.errors import ParameterError, ScenarioError
from drsched.core.experiments.sweep import MODELS, SweepOptions, SweepResult, run_model, sweep
from drsched.core.network.grid import admittance_sparse
from drsched.core.network.loader import parse_case
from drsched.core.network.models import NetworkCase
from drsched.core.network.schedule import ScheduleDecision
from drsched.core.pricing.moments import estimate_moments
from drsched.core.pricing.scenarios import ScenarioSet, generate_scenarios, read_scenarios


log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveReport:
    decision: ScheduleDecision
    inputs: dict[str, Any] = field(default_factory=dict)
    trace: tuple[TraceRow, ...] = ()
    messages: MessageLog | None = field(default=None, repr=False)

    def to_dict(self, case: NetworkCase | None = None) -> dict[str, Any]:
        out = {"ok": self.decision.ok, "inputs": dict(self.inputs), **self.decision.to_dict(case)}
        if self.trace:
            out["admm"] = {"iterations": len(self.trace), "final": vars(self.trace[-1])}
        return out


def parse_generate(spec: str) -> tuple[int, float, int]:
    """``"M,sigma,seed"`` as used by ``--generate``."""

    parts = [p.strip() for p in str(spec or "").split(",")]
    if len(parts) != 3:
        raise ParameterError(f"--generate expects 'M,sigma,seed', got {spec!r}")
    try:
        return int(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ParameterError(f"--generate expects 'M,sigma,seed', got {spec!r}") from None


class SchedulingService:
    """High-level scheduling API used by the CLI and the tests."""

    def __init__(self, settings: DrschedSettings | None = None, *, cases_dir: str | Path | None = None) -> None:
        self.settings = settings or load_settings()
        self._cases_dir = Path(cases_dir).expanduser() if cases_dir else package_cases_dir()

    def resolve_data_path(self, name: str | Path, *, suffix: str) -> Path:
        """A path as given, or the stem of a shipped fixture."""

        p = Path(name).expanduser()
        if p.exists():
            return p
        packaged = self._cases_dir / (p.name if p.suffix else f"{p.name}{suffix}")
        return packaged if packaged.exists() else p

    def load_case(self, name: str | Path, *, horizon: int | None = None) -> NetworkCase:
        case = parse_case(self.resolve_data_path(name, suffix=".json"))
        if horizon is not None:
            case = case.with_horizon(horizon)
        log.info("Case loaded", extra={"case": case.name, "buses": case.n_buses, "units": case.n_generators, "horizon": case.horizon})
        return case

    def case_summary(self, case: NetworkCase) -> dict[str, Any]:
        B = admittance_sparse(case)
        return {**case.summary(), "admittance_shape": list(B.shape), "admittance_nonzeros": int(B.nnz)}

    def generate_scenarios(
        self,
        case: NetworkCase,
        count: int,
        *,
        sigma: float | None = None,
        seed: int = 0,
        family: NoiseFamily | None = None,
    ) -> ScenarioSet:
        return generate_scenarios(
            case,
            count,
            sigma=self.settings.noise_sigma if sigma is None else sigma,
            family=family or self.settings.noise_family,
            seed=seed,
            segments=self.settings.segments,
            settings=self.settings.solver,
        )

    def load_scenarios(self, path: str | Path, case: NetworkCase) -> ScenarioSet:
        scenarios = read_scenarios(path)
        if scenarios.n_units != case.n_generators:
            raise ScenarioError(f"{path}: {scenarios.n_units} units in the scenarios, {case.n_generators} in the case")
        if scenarios.horizon > case.horizon:
            scenarios = scenarios.with_horizon(case.horizon)
        if scenarios.horizon != case.horizon:
            raise ScenarioError(f"{path}: {scenarios.horizon} periods in the scenarios, {case.horizon} in the case")
        return scenarios

    def load_partition(self, case: NetworkCase, path: str | Path | None) -> RegionPartition:
        if path is None:
            return partition_case(case, single_region(case))
        return partition_case(case, read_partition(self.resolve_data_path(path, suffix=".csv")))

    def sweep_options(
        self,
        *,
        pieces: int = 2,
        partition: RegionPartition | None = None,
        gammas: tuple[float, float] | None = None,
        workers: int = 1,
    ) -> SweepOptions:
        s = self.settings
        return SweepOptions(
            segments=s.segments,
            pieces=pieces,
            partition=partition,
            beta_scaling=s.beta_scaling,
            gammas=gammas,
            settings=s.solver,
            admm=ADMMConfig(eps_primal=s.admm_eps, eps_dual=s.admm_eps, max_iter=s.admm_max_iter, workers=s.workers),
            workers=workers,
        )

    def solve(
        self,
        case: NetworkCase,
        scenarios: ScenarioSet,
        *,
        model: str,
        beta: float,
        delta: float,
        pieces: int = 2,
        partition: RegionPartition | None = None,
        gammas: tuple[float, float] | None = None,
    ) -> SolveReport:
        if model not in MODELS:
            raise ParameterError(f"unknown model: {model!r} (expected {', '.join(MODELS)})")
        opts = self.sweep_options(pieces=pieces, partition=partition, gammas=gammas)
        inputs: dict[str, Any] = {
            "case": case.name,
            "model": model,
            "beta": beta,
            "delta": delta,
            "samples": scenarios.count,
            "segments": opts.segments,
            "horizon": case.horizon,
        }
        if model == "split":
            inputs["pieces"] = pieces
        if model == "admm":
            part = partition or partition_case(case, single_region(case))
            prices = region_prices(part, scenarios, delta=delta, beta_scaling=opts.beta_scaling, gammas=gammas, eps_reg=opts.eps_reg)
            result = admm_solve(part, prices, beta, opts.admm, segments=opts.segments, settings=opts.settings)
            inputs["regions"] = part.n_regions
            return SolveReport(result.decision, inputs, result.trace, result.messages)

        decision = run_model(model, case, scenarios, delta, beta, opts)
        if model in ("exact", "split"):
            moments = estimate_moments(scenarios, opts.eps_reg)
            inputs["regularization_added"] = moments.regularization_added
            inputs["mean_price"] = float(np.mean(moments.mu)) if moments.dim else 0.0
        return SolveReport(decision, inputs)

    def sweep(
        self,
        case: NetworkCase,
        scenarios: ScenarioSet,
        *,
        deltas: Sequence[float],
        betas: Sequence[float],
        models: Sequence[str],
        pieces: int = 2,
        partition: RegionPartition | None = None,
        gammas: tuple[float, float] | None = None,
        workers: int = 1,
    ) -> SweepResult:
        opts = self.sweep_options(pieces=pieces, partition=partition, gammas=gammas, workers=workers)
        return sweep(case, scenarios, deltas, betas, models, opts)
