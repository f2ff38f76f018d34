from __future__ import annotations

from drsched.core.pricing.ambiguity import (
    AmbiguityParams,
    ambiguity_params,
    box_radius,
    box_radius_bruteforce,
    sample_threshold,
)
from drsched.core.pricing.moments import MomentEstimate, SupportBox, estimate_moments, support_box
from drsched.core.pricing.scenarios import (
    ScenarioSet,
    base_prices,
    generate_scenarios,
    read_scenarios,
    write_scenarios,
)

__all__ = [
    "AmbiguityParams",
    "MomentEstimate",
    "ScenarioSet",
    "SupportBox",
    "ambiguity_params",
    "base_prices",
    "box_radius",
    "box_radius_bruteforce",
    "estimate_moments",
    "generate_scenarios",
    "read_scenarios",
    "sample_threshold",
    "support_box",
    "write_scenarios",
]
