from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from drsched.config import SolverSettings
from drsched.core.conic.backend import CvxpyBackend
from drsched.core.conic.program import ProgramBuilder
from drsched.core.errors import InfeasibleError, ParameterError, ScenarioError, SolverError
from drsched.core.network.models import NetworkCase
from drsched.core.network.schedule import build_schedule_constraints


log = logging.getLogger(__name__)

NoiseFamily = Literal["uniform", "normal"]

_HEADER_RE = re.compile(r"^u(\d+)_t(\d+)$")


@dataclass(frozen=True)
class ScenarioSet:
    """M price samples, columns ordered unit-major (``u * T + t``)."""

    samples: np.ndarray = field(repr=False)
    n_units: int
    horizon: int

    def __post_init__(self) -> None:
        s = self.samples
        if s.ndim != 2 or s.shape[0] < 1:
            raise ScenarioError("scenario set needs at least one sample row")
        if s.shape[1] != self.n_units * self.horizon:
            raise ScenarioError(f"scenario set has {s.shape[1]} columns, expected {self.n_units} units x {self.horizon} periods")
        if not np.all(np.isfinite(s)):
            raise ScenarioError("scenario set contains non-finite prices")

    @property
    def count(self) -> int:
        return int(self.samples.shape[0])

    @property
    def dim(self) -> int:
        return int(self.samples.shape[1])

    def columns(self, units: Sequence[int]) -> np.ndarray:
        return np.asarray([u * self.horizon + t for u in units for t in range(self.horizon)], dtype=np.int64)

    def slice(self, units: Sequence[int]) -> ScenarioSet:
        """Sub-set holding the price columns of ``units`` (in the given order)."""

        cols = self.columns(units)
        if cols.size == 0:
            return ScenarioSet(np.zeros((self.count, 0)), 0, self.horizon)
        return ScenarioSet(self.samples[:, cols].copy(), len(units), self.horizon)

    def with_horizon(self, periods: int) -> ScenarioSet:
        if not 1 <= periods <= self.horizon:
            raise ParameterError(f"horizon must be in 1..{self.horizon}, got {periods}")
        cols = np.asarray([u * self.horizon + t for u in range(self.n_units) for t in range(periods)], dtype=np.int64)
        return ScenarioSet(self.samples[:, cols].copy(), self.n_units, periods)

    def headers(self) -> list[str]:
        return [f"u{u + 1}_t{t + 1}" for u in range(self.n_units) for t in range(self.horizon)]


def base_prices(
    case: NetworkCase,
    segments: int = 10,
    *,
    settings: SolverSettings | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Locational prices of the cost-minimising demand-serving dispatch.

    Returns the N x T bus prices and the unit-major vector of prices at the
    generator buses.
    """

    b = ProgramBuilder()
    model = build_schedule_constraints(case, segments, builder=b, balance="serve")
    b.add_objective(model.cost_expr().sum())
    program = b.build()
    sol = CvxpyBackend(settings).solve(program)
    if sol.status == "infeasible":
        raise InfeasibleError(f"{case.name}: base dispatch is infeasible (demand cannot be served)")
    if not sol.ok:
        raise SolverError(f"{case.name}: base dispatch solve ended with status {sol.status}", solution=sol)

    duals = sol.row_duals.get("balance.serve")
    if duals is None:
        raise SolverError(f"{case.name}: solver returned no multipliers for the balance rows", solution=sol)
    lmp = np.maximum(np.asarray(duals, dtype=float).reshape(case.n_buses, case.horizon), 0.0)
    unit_prices = lmp[case.generator_buses, :].ravel()
    log.info(
        "Base prices computed",
        extra={"case": case.name, "dispatch_cost": round(sol.objective, 6), "mean_price": round(float(unit_prices.mean()), 6) if unit_prices.size else 0.0},
    )
    return lmp, unit_prices


def draw_noise(rng: np.random.Generator, shape: tuple[int, int], sigma: float, family: NoiseFamily) -> np.ndarray:
    if family == "uniform":
        eps = rng.uniform(-sigma, sigma, size=shape)
    elif family == "normal":
        eps = rng.normal(0.0, sigma, size=shape)
    else:
        raise ParameterError(f"unknown noise family: {family!r}")
    # Prices stay nonnegative.
    return np.maximum(eps, -1.0)


def generate_scenarios(
    case: NetworkCase,
    count: int,
    *,
    sigma: float = 0.15,
    family: NoiseFamily = "uniform",
    seed: int = 0,
    segments: int = 10,
    settings: SolverSettings | None = None,
    base: np.ndarray | None = None,
) -> ScenarioSet:
    """Draw ``count`` price samples around the base prices.

    ``base`` skips the dispatch solve when the unit-major base vector is
    already known.
    """

    if count < 1:
        raise ParameterError(f"scenario count must be >= 1, got {count}")
    if sigma < 0 or not math.isfinite(sigma):
        raise ParameterError(f"relative noise must be a finite value >= 0, got {sigma}")
    if base is None:
        _, base = base_prices(case, segments, settings=settings)
    base = np.asarray(base, dtype=float).ravel()
    if base.size != case.price_dim:
        raise ParameterError(f"base price vector has {base.size} entries, expected {case.price_dim}")

    rng = np.random.default_rng(seed)
    eps = draw_noise(rng, (count, base.size), sigma, family)
    samples = base[None, :] * (1.0 + eps)
    log.info("Scenarios generated", extra={"count": count, "dim": base.size, "sigma": sigma, "family": family, "seed": seed})
    return ScenarioSet(samples, case.n_generators, case.horizon)


def write_scenarios(path: str | Path, scenarios: ScenarioSet) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(scenarios.headers())
        for row in scenarios.samples:
            writer.writerow([repr(float(v)) for v in row])
    return out


def read_scenarios(path: str | Path) -> ScenarioSet:
    """Read a scenario CSV with a ``u<i>_t<t>`` header (1-based, unit-major)."""

    p = Path(path).expanduser()
    try:
        fh = p.open("r", encoding="utf-8", newline="")
    except FileNotFoundError as exc:
        raise ScenarioError(f"{p}: file not found") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ScenarioError(f"{p}: empty file") from None
        n_units, horizon = _parse_header(p, header)
        rows: list[list[float]] = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise ScenarioError(f"{p}: line {lineno}: expected {len(header)} values, got {len(raw)}")
            try:
                rows.append([float(c) for c in raw])
            except ValueError:
                raise ScenarioError(f"{p}: line {lineno}: non-numeric price") from None
    if not rows:
        raise ScenarioError(f"{p}: no sample rows")
    scenarios = ScenarioSet(np.asarray(rows, dtype=float), n_units, horizon)
    log.info("Scenarios loaded", extra={"path": str(p), "count": scenarios.count, "dim": scenarios.dim})
    return scenarios


def _parse_header(path: Path, header: list[str]) -> tuple[int, int]:
    pairs: list[tuple[int, int]] = []
    for col in header:
        m = _HEADER_RE.match(col.strip())
        if m is None:
            raise ScenarioError(f"{path}: header column {col!r} is not of the form u<i>_t<t>")
        pairs.append((int(m.group(1)), int(m.group(2))))
    units = max(u for u, _ in pairs)
    horizon = max(t for _, t in pairs)
    expected = [(u, t) for u in range(1, units + 1) for t in range(1, horizon + 1)]
    if pairs != expected:
        raise ScenarioError(f"{path}: header must list u1_t1..u{units}_t{horizon} unit-major without gaps")
    return units, horizon
