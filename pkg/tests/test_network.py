"""
Network cases and the linear schedule set.

 Group 1: Case files
   1.  Shipped cases load with the documented sizes
   2.  Malformed cases raise CaseError with the offending field
   3.  Horizon truncation keeps the first periods

 Group 2: Grid quantities
   4.  Susceptance matrix is symmetric with zero row sums
   5.  Zero reactance is rejected when the matrix is formed
   6.  Tangent cuts never exceed the cost and stay within c*step^2/4 inside the tangent range
   7.  The last segment reaches a gap of c*step^2 at p_max; worked cut values for unit 1 of case6

 Group 3: Schedule rows
   8.  Row counts per category match the closed-form counts
   9.  A hand-built feasible schedule passes check_schedule
  10.  Ramp and reference violations are reported per category
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from conftest import tiny_case_dict
from drsched.core.conic.program import ProgramBuilder
from drsched.core.errors import CaseError, ParameterError
from drsched.core.network.grid import admittance_matrix, admittance_sparse, cost_cuts, cost_value, cut_envelope
from drsched.core.network.loader import parse_case, parse_case_dict
from drsched.core.network.models import GeneratorSpec, NetworkCase
from drsched.core.network.schedule import build_schedule_constraints, check_schedule, evaluate_profit, expected_row_counts


# ═══ Group 1: Case files ═══


def test_case6_sizes(case6: NetworkCase) -> None:
    assert case6.n_buses == 6
    assert len(case6.lines) == 7
    assert case6.n_generators == 3
    assert case6.horizon == 24
    assert case6.ref_bus == 0
    assert case6.price_dim == 72


def test_case30_sizes(case30: NetworkCase) -> None:
    assert case30.n_buses == 30
    assert len(case30.lines) == 41
    assert case30.n_generators == 6


def test_summary_reports_one_based_ids(case6: NetworkCase) -> None:
    s = case6.summary()
    assert s["ref_bus"] == 1
    assert [g["bus"] for g in s["generators"]] == [1, 2, 6]
    assert len(s["total_load"]) == 24


def test_missing_file(tmp_path: Path) -> None:
    with pytest.raises(CaseError, match="file not found"):
        parse_case(tmp_path / "missing.json")


def test_invalid_json(tmp_path: Path) -> None:
    p = tmp_path / "bad.json"
    p.write_text("{not json", encoding="utf-8")
    with pytest.raises(CaseError, match="invalid json"):
        parse_case(p)


def test_parse_case_file(tmp_path: Path) -> None:
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(tiny_case_dict()), encoding="utf-8")
    case = parse_case(p)
    assert case.name == "tiny"
    assert case.horizon == 2
    assert case.generators[0].name == "G1"


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"lines": [{"from": 1, "to": 2, "x": -0.1}]}, r"x must be >= 0"),
        ({"lines": [{"from": 1, "to": 3, "x": 0.1}]}, r"unknown bus 3"),
        ({"lines": [{"from": 1, "to": 1, "x": 0.1}]}, r"to itself"),
        ({"generators": [{"bus": 1, "pmin": 50, "pmax": 10, "a": 0, "b": 1, "c": 0, "rup": 1, "rdn": 1}]}, r"exceeds pmax"),
        ({"generators": [{"bus": 1, "pmin": 0, "pmax": 10, "a": 0, "b": 1, "c": -1, "rup": 1, "rdn": 1}]}, r"c must be >= 0"),
        ({"loads": [[0, 0], [30]]}, r"loads\[1\] has 1 periods"),
        ({"loads": [[0, 0], [30, -1]]}, r"must be >= 0"),
        ({"horizon": 3}, r"horizon must equal"),
        ({"colour": "red"}, r"unknown keys in case: colour"),
    ],
)
def test_malformed_cases(overrides: dict, message: str) -> None:
    with pytest.raises(CaseError, match=message):
        parse_case_dict(tiny_case_dict(**overrides), source="tiny")


def test_missing_required_key() -> None:
    obj = tiny_case_dict()
    del obj["loads"]
    with pytest.raises(CaseError, match="missing keys in case: loads"):
        parse_case_dict(obj)


def test_duplicate_generator_bus() -> None:
    gen = {"bus": 1, "pmin": 0, "pmax": 10, "a": 0, "b": 1, "c": 0, "rup": 5, "rdn": 5}
    with pytest.raises(CaseError, match="duplicates another generator bus"):
        parse_case_dict(tiny_case_dict(generators=[gen, gen]))


def test_with_horizon(case6: NetworkCase) -> None:
    short = case6.with_horizon(4)
    assert short.horizon == 4
    assert np.array_equal(short.loads, case6.loads[:, :4])
    with pytest.raises(ParameterError):
        case6.with_horizon(0)
    with pytest.raises(ParameterError):
        case6.with_horizon(25)


# ═══ Group 2: Grid quantities ═══


def test_admittance_structure(case6: NetworkCase) -> None:
    B = admittance_matrix(case6)
    assert B.shape == (6, 6)
    assert np.allclose(B, B.T)
    assert np.allclose(B.sum(axis=1), 0.0), "every row of a DC susceptance matrix sums to zero"
    assert B[0, 1] == pytest.approx(-1.0 / 0.170)
    assert B[0, 0] == pytest.approx(1.0 / 0.170 + 1.0 / 0.258)
    assert admittance_sparse(case6).nnz == 6 + 2 * 7


def test_zero_reactance_rejected() -> None:
    case = parse_case_dict(tiny_case_dict(lines=[{"from": 1, "to": 2, "x": 0}]))
    with pytest.raises(CaseError, match="zero reactance"):
        admittance_sparse(case)


GEN = GeneratorSpec(bus=0, p_min=20.0, p_max=80.0, a=3.0, b=1.75, c=0.0175, ramp_up=30.0, ramp_down=30.0)


@pytest.mark.parametrize("segments", [1, 3, 10])
def test_cuts_underestimate_cost(segments: int) -> None:
    grid = np.linspace(GEN.p_min, GEN.p_max, 501)
    gap = GEN.cost(grid) - cut_envelope(cost_cuts(GEN, segments), grid)
    assert gap.min() >= -1e-9, "a tangent cut must never lie above a convex cost"


@pytest.mark.parametrize("segments", [2, 5, 10])
def test_cut_gap_inside_tangent_range(segments: int) -> None:
    step = (GEN.p_max - GEN.p_min) / segments
    last = GEN.p_min + (segments - 1) * step
    grid = np.linspace(GEN.p_min, last, 1001)
    gap = GEN.cost(grid) - cut_envelope(cost_cuts(GEN, segments), grid)
    assert gap.max() <= GEN.c * step**2 / 4 + 1e-9


@pytest.mark.parametrize("segments", [1, 4, 10])
def test_cut_gap_at_pmax(segments: int) -> None:
    step = (GEN.p_max - GEN.p_min) / segments
    gap = float(GEN.cost(GEN.p_max) - cut_envelope(cost_cuts(GEN, segments), np.asarray([GEN.p_max]))[0])
    assert gap == pytest.approx(GEN.c * step**2)


def test_case6_unit1_cuts(case6: NetworkCase) -> None:
    cuts = cost_cuts(case6.generators[0], 2)
    assert cuts == [pytest.approx((2.375, -9.375)), pytest.approx((2.9375, -58.59375))]


def test_cost_value() -> None:
    assert cost_value(GEN, 50.0) == pytest.approx(3.0 + 1.75 * 50.0 + 0.0175 * 2500.0)


def test_linear_cost_cuts_coincide() -> None:
    flat = GeneratorSpec(bus=0, p_min=0.0, p_max=10.0, a=1.0, b=4.0, c=0.0, ramp_up=5.0, ramp_down=5.0)
    assert cost_cuts(flat, 3) == [(4.0, 1.0)] * 3


def test_cut_rejects_zero_segments() -> None:
    with pytest.raises(ParameterError):
        cost_cuts(GEN, 0)


# ═══ Group 3: Schedule rows ═══


@pytest.mark.parametrize("segments", [1, 5])
def test_row_counts_case6(case6_t4: NetworkCase, segments: int) -> None:
    b = ProgramBuilder()
    model = build_schedule_constraints(case6_t4, segments, builder=b)
    program = b.build()
    assert model.row_counts(program) == expected_row_counts(case6_t4, segments)
    assert model.price_dim == 12


def test_row_counts_with_initial_output() -> None:
    gen = {"bus": 1, "pmin": 10, "pmax": 100, "a": 0, "b": 2.0, "c": 0.01, "rup": 40, "rdn": 40, "p0": 20}
    case = parse_case_dict(tiny_case_dict(generators=[gen]))
    b = ProgramBuilder()
    model = build_schedule_constraints(case, 3, builder=b)
    counts = model.row_counts(b.build())
    assert counts == expected_row_counts(case, 3)
    assert counts["ramp"] == 2 * 1 + 2


def test_unlimited_lines_emit_no_line_rows(case6_t4: NetworkCase) -> None:
    case = case6_t4.with_line_limits(None)
    b = ProgramBuilder()
    model = build_schedule_constraints(case, 2, builder=b)
    assert model.row_counts(b.build())["line"] == 0


def _tiny_schedule(case: NetworkCase, P: list[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p = np.asarray([P], dtype=float)
    # Bus 1 is the reference; all output flows over the single line to bus 2.
    theta = np.vstack([np.zeros(len(P)), -0.1 * p[0]])
    z = cut_envelope(cost_cuts(case.generators[0], 4), p)
    return p, theta, z


def test_check_schedule_feasible(tiny: NetworkCase) -> None:
    P, theta, z = _tiny_schedule(tiny, [30.0, 50.0])
    violations = check_schedule(tiny, P, theta, z, 4)
    assert max(violations.values()) <= 1e-9, violations


def test_check_schedule_reports_ramp() -> None:
    gen = {"bus": 1, "pmin": 10, "pmax": 100, "a": 0, "b": 2.0, "c": 0.01, "rup": 10, "rdn": 10}
    case = parse_case_dict(tiny_case_dict(generators=[gen]))
    P, theta, z = _tiny_schedule(case, [30.0, 50.0])
    violations = check_schedule(case, P, theta, z, 4)
    assert violations["ramp"] == pytest.approx(10.0)
    assert violations["balance"] <= 1e-9


def test_check_schedule_reports_reference(tiny: NetworkCase) -> None:
    P, theta, z = _tiny_schedule(tiny, [30.0, 50.0])
    violations = check_schedule(tiny, P, theta + 0.5, z, 4)
    assert violations["ref"] == pytest.approx(0.5)


def test_check_schedule_reports_cost_floor(tiny: NetworkCase) -> None:
    P, theta, z = _tiny_schedule(tiny, [30.0, 50.0])
    violations = check_schedule(tiny, P, theta, z - 1.0, 4)
    assert violations["cuts"] == pytest.approx(1.0)


def test_profit_shape_mismatch() -> None:
    with pytest.raises(ParameterError):
        evaluate_profit(np.ones(3), np.zeros(3), np.ones(4))
    assert evaluate_profit(np.ones((2, 2)), np.ones((2, 2)), np.full(4, 3.0)) == pytest.approx(8.0)
