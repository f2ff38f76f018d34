from __future__ import annotations

from drsched.core.experiments.baselines import RO_LABEL, run_deterministic, run_ro_baseline
from drsched.core.experiments.sweep import (
    MODELS,
    SweepOptions,
    SweepResult,
    SweepRow,
    TimingComparison,
    compare_timing,
    gap_metric,
    run_model,
    sweep,
    write_sweep_csv,
)

__all__ = [
    "MODELS",
    "RO_LABEL",
    "SweepOptions",
    "SweepResult",
    "SweepRow",
    "TimingComparison",
    "compare_timing",
    "gap_metric",
    "run_deterministic",
    "run_model",
    "run_ro_baseline",
    "sweep",
    "write_sweep_csv",
]
