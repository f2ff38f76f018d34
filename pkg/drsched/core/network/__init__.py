from __future__ import annotations

from drsched.core.network.grid import admittance_matrix, admittance_sparse, cost_cuts, cost_value, cut_envelope
from drsched.core.network.loader import load_packaged_case, parse_case, parse_case_dict
from drsched.core.network.models import GeneratorSpec, Line, NetworkCase
from drsched.core.network.schedule import (
    ScheduleDecision,
    ScheduleModel,
    ScheduleScope,
    build_schedule_constraints,
    check_schedule,
    evaluate_profit,
    expected_row_counts,
)


__all__ = [
    "GeneratorSpec",
    "Line",
    "NetworkCase",
    "ScheduleDecision",
    "ScheduleModel",
    "ScheduleScope",
    "admittance_matrix",
    "admittance_sparse",
    "build_schedule_constraints",
    "check_schedule",
    "cost_cuts",
    "cost_value",
    "cut_envelope",
    "evaluate_profit",
    "expected_row_counts",
    "load_packaged_case",
    "parse_case",
    "parse_case_dict",
]
