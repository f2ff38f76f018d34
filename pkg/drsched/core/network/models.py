from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from drsched.core.errors import ParameterError


@dataclass(frozen=True)
class GeneratorSpec:
    """One generating unit. ``bus`` is a 0-based bus index."""

    bus: int
    p_min: float
    p_max: float
    a: float
    b: float
    c: float
    ramp_up: float
    ramp_down: float
    p_initial: float | None = None
    name: str = ""

    def cost(self, p: Any) -> Any:
        p = np.asarray(p, dtype=float)
        return self.a + self.b * p + self.c * p * p

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "bus": self.bus + 1,
            "pmin": self.p_min,
            "pmax": self.p_max,
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "rup": self.ramp_up,
            "rdn": self.ramp_down,
            "p0": self.p_initial,
        }


@dataclass(frozen=True)
class Line:
    """Transmission line between 0-based buses; ``f_max`` may be ``inf``."""

    from_bus: int
    to_bus: int
    x: float
    f_max: float = math.inf


@dataclass(frozen=True)
class NetworkCase:
    n_buses: int
    lines: tuple[Line, ...]
    generators: tuple[GeneratorSpec, ...]
    loads: np.ndarray = field(repr=False)
    ref_bus: int
    name: str = "case"
    bus_ids: tuple[int, ...] = ()

    @property
    def horizon(self) -> int:
        return int(self.loads.shape[1])

    @property
    def n_generators(self) -> int:
        return len(self.generators)

    @property
    def price_dim(self) -> int:
        """Length of the price vector: one entry per unit and period."""

        return self.n_generators * self.horizon

    @property
    def generator_buses(self) -> np.ndarray:
        return np.asarray([g.bus for g in self.generators], dtype=np.int64)

    def bus_label(self, bus: int) -> int:
        return self.bus_ids[bus] if self.bus_ids else bus + 1

    def with_horizon(self, periods: int) -> NetworkCase:
        if not 1 <= periods <= self.horizon:
            raise ParameterError(f"horizon must be in 1..{self.horizon}, got {periods}")
        return replace(self, loads=self.loads[:, :periods].copy())

    def with_line_limits(self, f_max: float | None) -> NetworkCase:
        """Copy with every line limit replaced (``None`` lifts all limits)."""

        limit = math.inf if f_max is None else float(f_max)
        return replace(self, lines=tuple(replace(ln, f_max=limit) for ln in self.lines))

    def summary(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "buses": self.n_buses,
            "lines": len(self.lines),
            "generators": [g.to_dict() for g in self.generators],
            "horizon": self.horizon,
            "ref_bus": self.bus_label(self.ref_bus),
            "total_load": [float(v) for v in self.loads.sum(axis=0)],
            "capacity": float(sum(g.p_max for g in self.generators)),
        }
