"""
Regional decomposition and consensus ADMM.

 Group 1: Partitions
   1.  The packaged 6-bus split has the expected tie lines, boundary and ghosts
   2.  Partition files and assignments are validated

 Group 2: Consensus (6-bus, 2 periods)
   3.  One region needs no consensus and matches the exact model
   4.  Two regions reach the joint optimum within 1%
   5.  The stitched schedule is restored onto the full feasible set
   6.  Only boundary angles and duals cross the region boundary
   7.  Trace CSV layout and config validation

 Group 3: Default settings and failures
   8.  Default config with delta=0.2 meets 1e-4 residuals and 1e-4 feasibility
   9.  Residual balancing is damped, bounded and stops halfway
  10.  A failing region ends the run with the best iterate as numerical_limit
  11.  A failure before any consensus step reports numerical_limit without raising
  12.  Four periods with ten cost segments finish without raising
"""

from __future__ import annotations

import itertools
import math
from pathlib import Path

import numpy as np
import pytest

from conftest import flat_scenarios
from drsched.config import SolverSettings, package_cases_dir
from drsched.core.admm import consensus
from drsched.core.admm.consensus import (
    MESSAGE_KINDS,
    TRACE_HEADER,
    ADMMConfig,
    ADMMResult,
    admm_solve,
    balance_rho,
    default_rho,
    solve_joint,
    write_trace_csv,
)
from drsched.core.admm.partition import RegionPartition, partition_case, read_partition, single_region
from drsched.core.admm.region import RegionPrices, region_prices
from drsched.core.conic.program import ConicSolution
from drsched.core.dro.exact import solve_exact
from drsched.core.errors import ParameterError, PartitionError
from drsched.core.network.models import NetworkCase
from drsched.core.network.schedule import check_schedule
from drsched.core.pricing.ambiguity import AmbiguityParams
from drsched.core.pricing.moments import estimate_moments, support_box
from drsched.core.pricing.scenarios import ScenarioSet


SEGMENTS = 4
BETA = 0.9
GAMMAS = (0.1, 1.2)
CONFIG = ADMMConfig(eps_primal=1e-3, eps_dual=1e-3, max_iter=400)


@pytest.fixture(scope="module")
def case6_t2(case6: NetworkCase) -> NetworkCase:
    return case6.with_horizon(2)


@pytest.fixture(scope="module")
def prices6(case6_t2: NetworkCase) -> ScenarioSet:
    return flat_scenarios(case6_t2, 300, level=20.0, spread=0.15, seed=3)


@pytest.fixture(scope="module")
def two_regions(case6_t2: NetworkCase) -> RegionPartition:
    return partition_case(case6_t2, read_partition(package_cases_dir() / "case6_2regions.csv"))


@pytest.fixture(scope="module")
def admm_run(two_regions: RegionPartition, prices6: ScenarioSet) -> ADMMResult:
    prices = region_prices(two_regions, prices6, gammas=GAMMAS)
    return admm_solve(two_regions, prices, BETA, CONFIG, segments=SEGMENTS)


# ═══ Group 1: Partitions ═══


def test_case6_partition(two_regions: RegionPartition) -> None:
    case = two_regions.case
    ties = {(case.bus_label(case.lines[k].from_bus), case.bus_label(case.lines[k].to_bus)) for k in two_regions.tie_lines}
    assert ties == {(1, 4), (2, 4), (3, 6)}
    assert [case.bus_label(b) for b in two_regions.boundary_buses] == [1, 2, 3, 4, 6]

    first, second = two_regions.regions
    assert first.has_ref and not second.has_ref
    assert first.units == (0, 1) and second.units == (2,)
    assert [case.bus_label(b) for b in first.ghosts] == [4, 6]
    assert [case.bus_label(b) for b in second.ghosts] == [1, 2, 3]
    # Tie lines belong to both sides.
    for k in two_regions.tie_lines:
        assert k in first.lines and k in second.lines
    assert two_regions.copy_count() == (5 + 5) * case.horizon
    summary = two_regions.summary()
    assert summary["regions"][1]["units"] == [3]


def test_single_region_partition(case6_t2: NetworkCase) -> None:
    part = partition_case(case6_t2, single_region(case6_t2))
    assert part.n_regions == 1
    assert part.tie_lines == () and part.boundary_buses == ()
    assert part.copy_count() == 0


@pytest.mark.parametrize(
    "text, message",
    [
        ("bus_id,region_id\n", "no assignments"),
        ("1,1\n2\n", "expected 'bus_id,region_id'"),
        ("1,1\n2,x\n", "must be integers"),
        ("1,1\n1,2\n", "assigned twice"),
    ],
)
def test_partition_file_errors(tmp_path: Path, text: str, message: str) -> None:
    p = tmp_path / "part.csv"
    p.write_text(text, encoding="utf-8")
    with pytest.raises(PartitionError, match=message):
        read_partition(p)


def test_partition_assignment_errors(case6_t2: NetworkCase, tmp_path: Path) -> None:
    full = {b: 1 for b in range(1, 7)}
    with pytest.raises(PartitionError, match="unknown buses"):
        partition_case(case6_t2, {**full, 9: 1})
    with pytest.raises(PartitionError, match="does not assign"):
        partition_case(case6_t2, {b: 1 for b in range(1, 6)})
    with pytest.raises(PartitionError, match="regions without buses"):
        partition_case(case6_t2, full, regions=[1, 2])
    with pytest.raises(PartitionError, match="undeclared regions"):
        partition_case(case6_t2, {**full, 6: 3}, regions=[1])
    with pytest.raises(PartitionError, match="file not found"):
        read_partition(tmp_path / "missing.csv")


# ═══ Group 2: Consensus ═══


def test_single_region_matches_exact(case6_t2: NetworkCase, prices6: ScenarioSet) -> None:
    part = partition_case(case6_t2, single_region(case6_t2))
    prices = region_prices(part, prices6, gammas=GAMMAS)
    result = admm_solve(part, prices, BETA, CONFIG, segments=SEGMENTS)
    assert result.converged
    assert result.iterations == 1

    moments, box = estimate_moments(prices6), support_box(prices6)
    exact = solve_exact(case6_t2, moments, box, AmbiguityParams.from_gammas(*GAMMAS), BETA, segments=SEGMENTS)
    assert result.decision.objective == pytest.approx(exact.objective, rel=1e-5)


def test_two_regions_reach_joint_optimum(admm_run: ADMMResult, two_regions: RegionPartition, prices6: ScenarioSet) -> None:
    joint = solve_joint(two_regions, region_prices(two_regions, prices6, gammas=GAMMAS), BETA, segments=SEGMENTS)
    assert joint.ok and joint.model == "joint"
    assert admm_run.decision.model == "admm"
    assert admm_run.converged, f"stopped after {admm_run.iterations} iterations"
    assert admm_run.decision.status == "optimal"
    assert admm_run.decision.objective == pytest.approx(joint.objective, rel=1e-2)
    assert len(admm_run.region_objectives) == 2
    assert sum(admm_run.region_objectives) == pytest.approx(admm_run.decision.objective)


def test_stitched_schedule_is_feasible(admm_run: ADMMResult, two_regions: RegionPartition) -> None:
    case = two_regions.case
    d = admm_run.decision
    assert np.isnan(d.alpha)
    assert [r["region"] for r in d.extras["regions"]] == [1, 2]
    assert d.diagnostics["max_copy_disagreement"] <= 1e-2
    assert d.diagnostics["restored"] is True
    assert d.diagnostics["stitch_violation"] >= 0.0
    assert d.diagnostics["restoration_shift"] <= 1.0
    violations = check_schedule(case, d.P, d.theta, d.z, SEGMENTS)
    for name, value in violations.items():
        assert value <= 1e-4, f"{name}: {value:.3e}"
    assert d.diagnostics["schedule_feasible"] is True


def test_messages_carry_only_boundary_angles(admm_run: ADMMResult, two_regions: RegionPartition) -> None:
    case = two_regions.case
    allowed = {r.label: {case.bus_label(b) for b in r.consensus_buses} for r in two_regions.regions}
    payloads = admm_run.messages.payloads()
    assert payloads
    for msg in payloads:
        assert set(msg) == {"iter", "region", "kind", "bus", "values"}
        assert msg["kind"] in MESSAGE_KINDS
        assert msg["bus"] in allowed[msg["region"]]
        assert len(msg["values"]) == case.horizon
    kinds = {m["kind"] for m in payloads}
    assert kinds == set(MESSAGE_KINDS)


def test_trace_csv(admm_run: ADMMResult, tmp_path: Path) -> None:
    path = write_trace_csv(tmp_path / "trace.csv", admm_run.trace)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(TRACE_HEADER)
    assert len(lines) == admm_run.iterations + 1
    assert [int(line.split(",")[0]) for line in lines[1:]] == list(range(1, admm_run.iterations + 1))


def test_default_rho_is_positive(two_regions: RegionPartition) -> None:
    assert default_rho(two_regions) > 0.0


@pytest.mark.parametrize(
    "kwargs",
    [
        {"rho": 0.0},
        {"rho": -1.0},
        {"eps_primal": 0.0},
        {"eps_dual": float("nan")},
        {"max_iter": 0},
        {"workers": 0},
        {"relaxation": 0.0},
        {"relaxation": 2.0},
        {"rho_interval": 0},
        {"rho_range": 0.5},
    ],
)
def test_config_validation(kwargs: dict) -> None:
    with pytest.raises(ParameterError):
        ADMMConfig(**kwargs)


def test_region_price_count_mismatch(two_regions: RegionPartition, prices6: ScenarioSet) -> None:
    prices = region_prices(two_regions, prices6, gammas=GAMMAS)
    with pytest.raises(ParameterError):
        admm_solve(two_regions, prices[:1], BETA, CONFIG, segments=SEGMENTS)


# ═══ Group 3: Default settings and failures ═══


@pytest.fixture(scope="module")
def dense_prices6(case6_t2: NetworkCase) -> ScenarioSet:
    return flat_scenarios(case6_t2, 200_000, level=20.0, spread=0.15, seed=5)


@pytest.fixture(scope="module")
def data_prices(two_regions: RegionPartition, dense_prices6: ScenarioSet) -> list[RegionPrices]:
    return region_prices(two_regions, dense_prices6, delta=0.2)


def test_default_config_meets_tolerances(two_regions: RegionPartition, data_prices: list[RegionPrices]) -> None:
    cfg = ADMMConfig()
    assert (cfg.eps_primal, cfg.eps_dual, cfg.max_iter, cfg.adaptive_rho) == (1e-4, 1e-4, 500, False)
    assert all(p.params.source == "data" and p.params.delta == 0.2 for p in data_prices)

    result = admm_solve(two_regions, data_prices, BETA, cfg, segments=SEGMENTS)
    assert result.converged, f"stopped after {result.iterations} iterations"
    assert result.iterations <= 500
    assert result.decision.status == "optimal"
    # Residual norms are compared per copy.
    root = math.sqrt(two_regions.copy_count())
    assert result.trace[-1].primal_res / root <= 1e-4
    assert result.trace[-1].dual_res / root <= 1e-4

    joint = solve_joint(two_regions, data_prices, BETA, segments=SEGMENTS)
    assert joint.ok
    assert result.decision.objective == pytest.approx(joint.objective, rel=1e-2)

    d = result.decision
    violations = check_schedule(two_regions.case, d.P, d.theta, d.z, SEGMENTS)
    for name, value in violations.items():
        assert value <= 1e-4, f"{name}: {value:.3e}"


def test_balance_rho_is_clamped() -> None:
    assert balance_rho(10.0, 100.0, 1.0, floor=1.0, ceiling=15.0) == 15.0
    assert balance_rho(10.0, 100.0, 1.0, floor=1.0, ceiling=100.0) == 20.0
    assert balance_rho(10.0, 1.0, 100.0, floor=8.0, ceiling=100.0) == 8.0
    assert balance_rho(10.0, 1.0, 2.0, floor=1.0, ceiling=100.0) == 10.0


def test_adaptive_rho_is_damped(two_regions: RegionPartition, prices6: ScenarioSet) -> None:
    prices = region_prices(two_regions, prices6, gammas=GAMMAS)
    cfg = ADMMConfig(eps_primal=1e-9, eps_dual=1e-9, max_iter=40, adaptive_rho=True, rho_interval=5, rho_range=4.0)
    result = admm_solve(two_regions, prices, BETA, cfg, segments=SEGMENTS)
    rho0 = default_rho(two_regions)
    rhos = [row.rho for row in result.trace]
    assert rhos[0] == pytest.approx(rho0)
    for prev, row in zip(result.trace, result.trace[1:]):
        if row.rho != prev.rho:
            assert prev.iter % 5 == 0 and prev.iter <= 20, f"rho changed after iteration {prev.iter}"
    assert all(rho0 / 4.0 - 1e-12 <= r <= rho0 * 4.0 + 1e-12 for r in rhos)


def _failing_after(calls: int, monkeypatch: pytest.MonkeyPatch) -> None:
    real = consensus._solve_region
    counter = itertools.count(1)

    def solve_or_fail(compiled, model, index, target, rho, tol):
        if next(counter) > calls:
            broken = ConicSolution(status="numerical_limit", x=None, objective=math.nan, solver="CLARABEL")
            return consensus._RegionStep(index, broken, np.zeros(model.copy_index.shape), math.nan)
        return real(compiled, model, index, target, rho, tol)

    monkeypatch.setattr(consensus, "_solve_region", solve_or_fail)


def test_region_failure_returns_best_iterate(
    two_regions: RegionPartition, prices6: ScenarioSet, monkeypatch: pytest.MonkeyPatch
) -> None:
    prices = region_prices(two_regions, prices6, gammas=GAMMAS)
    # Two regions per iteration: the fifth local solve is the first of iteration 3.
    _failing_after(4, monkeypatch)
    result = admm_solve(two_regions, prices, BETA, CONFIG, segments=SEGMENTS)
    d = result.decision
    assert not result.converged
    assert result.iterations == 3
    assert len(result.trace) == 2
    assert d.status == "numerical_limit"
    assert d.diagnostics["region_status"] == "numerical_limit"
    assert d.diagnostics["failed_region"] in (1, 2)
    assert d.diagnostics["iterate"] in (1, 2)
    assert np.all(np.isfinite(d.P)) and math.isfinite(d.objective)


def test_failure_before_consensus(two_regions: RegionPartition, prices6: ScenarioSet) -> None:
    prices = region_prices(two_regions, prices6, gammas=GAMMAS)
    starved = SolverSettings(max_iters=1, fallback_solver=None)
    result = admm_solve(two_regions, prices, BETA, CONFIG, segments=SEGMENTS, settings=starved)
    assert not result.converged
    assert result.trace == ()
    assert result.decision.status == "numerical_limit"
    assert "failed_region" in result.decision.diagnostics
    assert math.isnan(result.decision.objective)


def test_four_periods_ten_segments_do_not_raise(case6: NetworkCase) -> None:
    case = case6.with_horizon(4)
    part = partition_case(case, read_partition(package_cases_dir() / "case6_2regions.csv"))
    prices = region_prices(part, flat_scenarios(case, 300, level=20.0, spread=0.15, seed=3), gammas=GAMMAS)
    result = admm_solve(part, prices, BETA, ADMMConfig(), segments=10)
    d = result.decision
    assert d.status in ("optimal", "numerical_limit")
    if result.converged:
        violations = check_schedule(case, d.P, d.theta, d.z, 10)
        assert max(violations.values()) <= 1e-4, violations
