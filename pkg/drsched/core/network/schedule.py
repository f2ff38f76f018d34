"""Linear self-scheduling feasible set over (P, theta, z).

Row groups are named ``<category>[.<side>]`` and optionally prefixed with a
region tag (``r1/balance.lo``). Categories: ``balance``, ``line``, ``ref``,
``nongen``, ``bounds``, ``ramp``, ``cuts``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np
import scipy.sparse as sp

from drsched.core.conic.program import Affine, ConicProgram, ProgramBuilder, Sense, VarBlock
from drsched.core.errors import ParameterError
from drsched.core.network.grid import admittance_sparse, cost_cuts, cut_envelope
from drsched.core.network.models import NetworkCase

BalanceMode = Literal["band", "serve"]

CATEGORIES = ("balance", "line", "ref", "nongen", "bounds", "ramp", "cuts")


def row_category(name: str) -> str:
    return name.rsplit("/", 1)[-1].split(".", 1)[0]


@dataclass(frozen=True)
class ScheduleScope:
    """The part of a case one block of schedule rows covers.

    ``buses`` own P variables, balance and non-generator rows; ``angle_buses``
    additionally hold angle copies of neighbours outside the scope.
    """

    buses: tuple[int, ...]
    angle_buses: tuple[int, ...]
    lines: tuple[int, ...]
    include_ref: bool

    @classmethod
    def full(cls, case: NetworkCase) -> ScheduleScope:
        every = tuple(range(case.n_buses))
        return cls(buses=every, angle_buses=every, lines=tuple(range(len(case.lines))), include_ref=True)


@dataclass(frozen=True)
class ScheduleModel:
    case: NetworkCase
    scope: ScheduleScope
    segments: int
    p: VarBlock
    theta: VarBlock
    z: VarBlock
    units: tuple[int, ...]
    prefix: str = ""
    builder: ProgramBuilder | None = field(default=None, repr=False, compare=False)

    @property
    def horizon(self) -> int:
        return self.case.horizon

    @property
    def price_dim(self) -> int:
        return len(self.units) * self.horizon

    def _unit_rows(self) -> np.ndarray:
        pos = {bus: i for i, bus in enumerate(self.scope.buses)}
        return np.asarray([pos[self.case.generators[u].bus] for u in self.units], dtype=np.int64)

    def output_expr(self) -> Affine:
        """Unit outputs flattened unit-major (``u * T + t``)."""

        idx = self.p.indices[self._unit_rows(), :] if self.units else np.zeros((0,), dtype=np.int64)
        return Affine.select(np.asarray(idx).ravel(), self.p.start + self.p.size)

    def cost_expr(self) -> Affine:
        return self.z.expr()

    def angle_row(self, bus: int) -> int:
        try:
            return self.scope.angle_buses.index(bus)
        except ValueError:
            raise ParameterError(f"bus {self.case.bus_label(bus)} carries no angle in this scope") from None

    def angle_expr(self, bus: int) -> Affine:
        return Affine.select(self.theta.indices[self.angle_row(bus), :], self.theta.start + self.theta.size)

    def outputs(self, x: np.ndarray) -> np.ndarray:
        return self.output_expr().value(x).reshape(len(self.units), self.horizon)

    def angles(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)[self.theta.indices]

    def costs(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)[self.z.indices]

    def row_counts(self, program: ConicProgram) -> dict[str, int]:
        counts = {c: 0 for c in CATEGORIES}
        for group in program.linear:
            if not group.name.startswith(self.prefix):
                continue
            cat = row_category(group.name)
            if cat in counts:
                counts[cat] += group.rows
        return counts


def expected_row_counts(case: NetworkCase, segments: int) -> dict[str, int]:
    """Row counts of the full-case schedule block with finite line limits."""

    n, g, t = case.n_buses, case.n_generators, case.horizon
    limited = sum(1 for ln in case.lines if math.isfinite(ln.f_max))
    initial = sum(1 for gen in case.generators if gen.p_initial is not None)
    return {
        "balance": 2 * n * t,
        "line": 2 * limited * t,
        "ref": t,
        "nongen": (n - g) * t,
        "bounds": 2 * g * t,
        "ramp": 2 * g * (t - 1) + 2 * initial,
        "cuts": g * t * segments,
    }


def build_schedule_constraints(
    case: NetworkCase,
    segments: int = 10,
    *,
    builder: ProgramBuilder | None = None,
    scope: ScheduleScope | None = None,
    prefix: str = "",
    balance: BalanceMode = "band",
) -> ScheduleModel:
    """Emit the schedule rows for ``case`` (or one region of it) into ``builder``.

    ``balance="band"`` keeps the two-sided per-bus band ``0 <= P - B theta <= D``;
    ``balance="serve"`` emits ``P - B theta >= D`` for the demand-serving dispatch.
    """

    if segments < 1:
        raise ParameterError(f"segment count must be >= 1, got {segments}")
    b = builder if builder is not None else ProgramBuilder()
    sc = scope or ScheduleScope.full(case)
    T = case.horizon
    nb, na = len(sc.buses), len(sc.angle_buses)
    owned = set(sc.buses)
    units = tuple(i for i, gen in enumerate(case.generators) if gen.bus in owned)
    gen_bus = {case.generators[u].bus for u in units}

    p = b.add_variable(f"{prefix}P", (nb, T))
    theta = b.add_variable(f"{prefix}theta", (na, T))
    z = b.add_variable(f"{prefix}z", (len(units), T))
    model = ScheduleModel(case, sc, segments, p, theta, z, units, prefix, b)

    p_all = p.expr()
    th_all = theta.expr()
    eye_t = sp.identity(T, format="csr")
    apos = {bus: j for j, bus in enumerate(sc.angle_buses)}

    # Balance rows use every neighbour of an owned bus, including ghost copies.
    B = admittance_sparse(case).tocsr()
    sub = sp.lil_matrix((nb, na))
    for i, bus in enumerate(sc.buses):
        row = B.getrow(bus)
        for j, v in zip(row.indices, row.data):
            if v == 0:
                continue
            if j not in apos:
                raise ParameterError(f"scope is missing an angle for bus {case.bus_label(int(j))}")
            sub[i, apos[j]] = v
    injection = p_all - th_all.lmul(sp.kron(sub.tocsr(), eye_t, format="csr"))
    loads = case.loads[np.asarray(sc.buses, dtype=np.int64), :].ravel()
    if balance == "band":
        b.add_rows(f"{prefix}balance.lo", injection, Sense.GE, 0.0)
        b.add_rows(f"{prefix}balance.hi", injection, Sense.LE, loads)
    elif balance == "serve":
        b.add_rows(f"{prefix}balance.serve", injection, Sense.GE, loads)
    else:
        raise ParameterError(f"unknown balance mode: {balance!r}")

    limited = [k for k in sc.lines if math.isfinite(case.lines[k].f_max)]
    if limited:
        flow = sp.lil_matrix((len(limited), na))
        for r, k in enumerate(limited):
            ln = case.lines[k]
            flow[r, apos[ln.from_bus]] = 1.0 / ln.x
            flow[r, apos[ln.to_bus]] = -1.0 / ln.x
        flows = th_all.lmul(sp.kron(flow.tocsr(), eye_t, format="csr"))
        fmax = np.repeat([case.lines[k].f_max for k in limited], T)
        b.add_rows(f"{prefix}line.fwd", flows, Sense.LE, fmax)
        b.add_rows(f"{prefix}line.rev", flows, Sense.GE, -fmax)

    if sc.include_ref:
        b.add_rows(f"{prefix}ref", model.angle_expr(case.ref_bus), Sense.EQ, 0.0)

    idle = [i for i, bus in enumerate(sc.buses) if bus not in gen_bus]
    if idle:
        b.add_rows(f"{prefix}nongen", p_all[p.indices[idle, :].ravel() - p.start], Sense.EQ, 0.0)

    if units:
        _emit_unit_rows(b, model, prefix)
    return model


def _emit_unit_rows(b: ProgramBuilder, model: ScheduleModel, prefix: str) -> None:
    case, T = model.case, model.horizon
    gens = [case.generators[u] for u in model.units]
    out = model.output_expr()
    zx = model.cost_expr()

    b.add_rows(f"{prefix}bounds.lo", out, Sense.GE, np.repeat([g.p_min for g in gens], T))
    b.add_rows(f"{prefix}bounds.hi", out, Sense.LE, np.repeat([g.p_max for g in gens], T))

    if T > 1:
        # Forward differences within each unit's block of T entries.
        diff = sp.kron(sp.identity(len(gens)), sp.diags([-np.ones(T - 1), np.ones(T - 1)], [0, 1], shape=(T - 1, T)), format="csr")
        step = out.lmul(diff)
        b.add_rows(f"{prefix}ramp.up", step, Sense.LE, np.repeat([g.ramp_up for g in gens], T - 1))
        b.add_rows(f"{prefix}ramp.down", step, Sense.GE, -np.repeat([g.ramp_down for g in gens], T - 1))
    first = [i for i, g in enumerate(gens) if g.p_initial is not None]
    if first:
        start = out[np.asarray([i * T for i in first])]
        p0 = np.asarray([gens[i].p_initial for i in first], dtype=float)
        b.add_rows(f"{prefix}ramp.up0", start, Sense.LE, p0 + np.asarray([gens[i].ramp_up for i in first]))
        b.add_rows(f"{prefix}ramp.down0", start, Sense.GE, p0 - np.asarray([gens[i].ramp_down for i in first]))

    cut_rows: list[Affine] = []
    rhs: list[float] = []
    for i, g in enumerate(gens):
        for slope, intercept in cost_cuts(g, model.segments):
            idx = np.arange(i * T, (i + 1) * T)
            cut_rows.append(zx[idx] - out[idx] * slope)
            rhs.extend([intercept] * T)
    b.add_rows(f"{prefix}cuts", Affine.vstack(cut_rows), Sense.GE, np.asarray(rhs))


def check_schedule(
    case: NetworkCase,
    P: np.ndarray,
    theta: np.ndarray,
    z: np.ndarray,
    segments: int = 10,
) -> dict[str, float]:
    """Largest violation per row category for a full-case schedule.

    ``P`` and ``z`` are G x T unit arrays, ``theta`` is N x T.
    """

    G, N, T = case.n_generators, case.n_buses, case.horizon
    P = np.asarray(P, dtype=float).reshape(G, T)
    z = np.asarray(z, dtype=float).reshape(G, T)
    theta = np.asarray(theta, dtype=float).reshape(N, T)

    bus_p = np.zeros((N, T))
    bus_p[case.generator_buses, :] = P
    inj = bus_p - admittance_sparse(case) @ theta
    out = {c: 0.0 for c in CATEGORIES}
    out["balance"] = float(max(np.max(-inj, initial=0.0), np.max(inj - case.loads, initial=0.0)))

    for ln in case.lines:
        if math.isfinite(ln.f_max):
            flow = np.abs(theta[ln.from_bus] - theta[ln.to_bus]) / ln.x
            out["line"] = max(out["line"], float(np.max(flow - ln.f_max, initial=0.0)))
    out["ref"] = float(np.max(np.abs(theta[case.ref_bus]), initial=0.0))

    for i, g in enumerate(case.generators):
        out["bounds"] = max(out["bounds"], float(np.max(g.p_min - P[i], initial=0.0)), float(np.max(P[i] - g.p_max, initial=0.0)))
        seq = P[i] if g.p_initial is None else np.concatenate([[g.p_initial], P[i]])
        d = np.diff(seq)
        out["ramp"] = max(out["ramp"], float(np.max(d - g.ramp_up, initial=0.0)), float(np.max(-d - g.ramp_down, initial=0.0)))
        floor = cut_envelope(cost_cuts(g, segments), P[i])
        out["cuts"] = max(out["cuts"], float(np.max(floor - z[i], initial=0.0)))
    return out


def evaluate_profit(P: Any, z: Any, lam: Any) -> float:
    """Profit ``P^T lambda - 1^T z`` with P and lambda flattened unit-major."""

    p = np.asarray(P, dtype=float).ravel()
    price = np.asarray(lam, dtype=float).ravel()
    if p.shape != price.shape:
        raise ParameterError(f"profit: output has {p.size} entries but price vector has {price.size}")
    return float(p @ price - np.asarray(z, dtype=float).sum())


@dataclass(frozen=True)
class ScheduleDecision:
    status: str
    model: str
    P: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    alpha: float
    objective: float
    profit: float
    worst_profit: float | None = None
    wall_time: float = 0.0
    diagnostics: dict[str, Any] = field(default_factory=dict)
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def to_dict(self, case: NetworkCase | None = None) -> dict[str, Any]:
        units: list[dict[str, Any]] = []
        for i, row in enumerate(np.atleast_2d(self.P)):
            entry: dict[str, Any] = {"unit": i + 1, "P": row, "z": np.atleast_2d(self.z)[i]}
            if case is not None:
                gen = case.generators[i]
                entry.update({"name": gen.name, "bus": case.bus_label(gen.bus)})
            units.append(entry)
        return {
            "status": self.status,
            "model": self.model,
            "objective": self.objective,
            "profit": self.profit,
            "worst_profit": self.worst_profit,
            "alpha": self.alpha,
            "wall_time": self.wall_time,
            "units": units,
            "theta": self.theta,
            "diagnostics": self.diagnostics,
            **self.extras,
        }
