from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from drsched.config import BetaScaling
from drsched.core.admm.partition import Region, RegionPartition
from drsched.core.conic.program import ConicProgram, ProgramBuilder
from drsched.core.dro.exact import ExactModelHandle, emit_exact_cvar
from drsched.core.errors import ParameterError
from drsched.core.network.schedule import build_schedule_constraints
from drsched.core.pricing.ambiguity import AmbiguityParams, ambiguity_params
from drsched.core.pricing.moments import MomentEstimate, SupportBox, estimate_moments, support_box
from drsched.core.pricing.scenarios import ScenarioSet


log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegionPrices:
    """Moments, support box and ambiguity parameters of one region's units."""

    moments: MomentEstimate = field(repr=False)
    box: SupportBox = field(repr=False)
    params: AmbiguityParams

    @property
    def dim(self) -> int:
        return self.moments.dim


def region_prices(
    partition: RegionPartition,
    scenarios: ScenarioSet,
    *,
    delta: float = 0.05,
    beta_scaling: BetaScaling = "m",
    gammas: tuple[float, float] | None = None,
    eps_reg: float | None = None,
) -> list[RegionPrices]:
    """Estimate per-region price models from the columns of each region's units."""

    if scenarios.n_units != partition.case.n_generators:
        raise ParameterError(f"scenarios cover {scenarios.n_units} units, the case has {partition.case.n_generators}")
    out: list[RegionPrices] = []
    for reg in partition.regions:
        if not reg.units:
            empty = MomentEstimate(np.zeros(0), np.zeros((0, 0)), 0.0, scenarios.count)
            params = AmbiguityParams.from_gammas(0.0, 1.0, delta=delta, samples=scenarios.count, dim=0)
            out.append(RegionPrices(empty, SupportBox(np.zeros(0), np.zeros(0)), params))
            continue
        local = scenarios.slice(reg.units)
        moments = estimate_moments(local, eps_reg)
        box = support_box(local)
        if gammas is not None:
            params = AmbiguityParams.from_gammas(gammas[0], gammas[1], delta=delta, samples=scenarios.count, dim=moments.dim)
        else:
            params = ambiguity_params(moments, box, delta, scenarios.count, beta_scaling=beta_scaling)
        out.append(RegionPrices(moments, box, params))
    return out


@dataclass(frozen=True)
class RegionModel:
    """One region's DR-CVaR program and where its consensus copies live in ``x``.

    ``copy_index`` is ``(len(consensus_buses), T)``. The ADMM penalty on the
    copies is attached when the program is compiled.
    """

    region: Region
    handle: ExactModelHandle
    copy_index: np.ndarray = field(repr=False)

    @property
    def program(self) -> ConicProgram:
        return self.handle.program

    @property
    def n_copies(self) -> int:
        return int(self.copy_index.size)

    def copies(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)[self.copy_index]

    def objective_value(self, x: np.ndarray) -> float:
        return self.handle.objective_value(x)

    def stats(self) -> dict[str, Any]:
        return {"region": self.region.label, **self.program.stats()}


def build_region_sdp(
    partition: RegionPartition,
    index: int,
    prices: RegionPrices,
    beta: float,
    *,
    segments: int = 10,
) -> RegionModel:
    """Assemble region ``index``: its schedule block and its DR-CVaR block."""

    reg = partition.regions[index]
    case = partition.case
    T = case.horizon

    t0 = time.perf_counter()
    b = ProgramBuilder()
    schedule = build_schedule_constraints(case, segments, builder=b, scope=reg.scope)
    if schedule.price_dim != prices.dim:
        raise ParameterError(f"region {reg.label}: price model has dimension {prices.dim}, the region has {schedule.price_dim} unit-periods")
    blocks = emit_exact_cvar(b, schedule, prices.moments, prices.box, prices.params, beta)

    rows = [schedule.angle_row(bus) for bus in reg.consensus_buses]
    copy_index = schedule.theta.indices[np.asarray(rows, dtype=np.int64), :] if rows else np.zeros((0, T), dtype=np.int64)

    program = b.build()
    elapsed = time.perf_counter() - t0
    handle = ExactModelHandle(program, schedule, blocks, prices.moments, prices.box, prices.params, float(beta), elapsed)
    log.debug("Region model assembled", extra={"region": reg.label, **program.stats(), "seconds": round(elapsed, 4)})
    return RegionModel(reg, handle, copy_index)
