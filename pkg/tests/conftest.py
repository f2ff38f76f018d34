from __future__ import annotations

import os
from typing import Any

import numpy as np
import pytest

from drsched.core.network.loader import load_packaged_case, parse_case_dict
from drsched.core.network.models import NetworkCase
from drsched.core.pricing.scenarios import ScenarioSet, generate_scenarios


slow = pytest.mark.skipif(os.getenv("DRSCHED_RUN_SLOW") != "1", reason="set DRSCHED_RUN_SLOW=1 to run")


def tiny_case_dict(**overrides: Any) -> dict[str, Any]:
    """Two buses, one line, one unit at bus 1 serving a load at bus 2."""

    obj: dict[str, Any] = {
        "name": "tiny",
        "buses": 2,
        "ref_bus": 1,
        "lines": [{"from": 1, "to": 2, "x": 0.1, "fmax": 100}],
        "generators": [{"name": "G1", "bus": 1, "pmin": 10, "pmax": 100, "a": 0, "b": 2.0, "c": 0.01, "rup": 40, "rdn": 40}],
        "loads": [[0, 0], [30, 50]],
    }
    obj.update(overrides)
    return obj


@pytest.fixture(scope="session")
def case6() -> NetworkCase:
    return load_packaged_case("case6")


@pytest.fixture(scope="session")
def case6_t4(case6: NetworkCase) -> NetworkCase:
    return case6.with_horizon(4)


@pytest.fixture(scope="session")
def case30() -> NetworkCase:
    return load_packaged_case("case30")


@pytest.fixture
def tiny() -> NetworkCase:
    return parse_case_dict(tiny_case_dict(), source="tiny")


@pytest.fixture(scope="session")
def scenarios6_t4(case6_t4: NetworkCase) -> ScenarioSet:
    return generate_scenarios(case6_t4, 400, sigma=0.15, seed=7, segments=6)


def flat_scenarios(case: NetworkCase, count: int, *, level: float = 20.0, spread: float = 0.1, seed: int = 0) -> ScenarioSet:
    """Uniform samples around a flat price, without a dispatch solve."""

    base = np.full(case.price_dim, level)
    return generate_scenarios(case, count, sigma=spread, seed=seed, base=base)
