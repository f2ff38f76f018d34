from __future__ import annotations

from drsched.core.dro.cvar import CvarReport, empirical_cvar, h_value, h_values
from drsched.core.dro.exact import (
    ExactModelHandle,
    build_exact_sdp,
    empirical_bound,
    extract_solution,
    lmi_min_eigenvalues,
    sampled_feasibility,
    solve_exact,
)
from drsched.core.dro.split import (
    SplitModelHandle,
    SplitPlan,
    WhiteningTransform,
    block_identity_residual,
    build_split_sdp,
    eigen_whiten,
    make_split_plan,
    solve_split,
    whitened_box,
)

__all__ = [
    "CvarReport",
    "ExactModelHandle",
    "SplitModelHandle",
    "SplitPlan",
    "WhiteningTransform",
    "block_identity_residual",
    "build_exact_sdp",
    "build_split_sdp",
    "eigen_whiten",
    "empirical_bound",
    "empirical_cvar",
    "extract_solution",
    "h_value",
    "h_values",
    "lmi_min_eigenvalues",
    "make_split_plan",
    "sampled_feasibility",
    "solve_exact",
    "solve_split",
    "whitened_box",
]
