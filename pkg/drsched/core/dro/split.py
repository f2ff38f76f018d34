"""Vector-splitting upper approximation of the exact DR-CVaR SDP.

Prices are whitened (``lam = W lam_c + mu`` with ``W = U Lambda^1/2``) and the
whitened vector is cut into contiguous blocks along descending eigenvalues.
Dropping cross-block second moments leaves one small LMI per block and branch,
tied together by scalar equality rows. One block reproduces the exact model.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from drsched.config import SolverSettings
from drsched.core.conic.backend import CvxpyBackend
from drsched.core.conic.program import Affine, ConicProgram, ProgramBuilder, Sense, Tolerances, min_eigenvalue
from drsched.core.dro.cvar import check_beta
from drsched.core.dro.exact import box_transpose, check_dimensions, extract_solution
from drsched.core.errors import ParameterError
from drsched.core.network.models import NetworkCase
from drsched.core.network.schedule import ScheduleDecision, ScheduleModel, build_schedule_constraints
from drsched.core.pricing.ambiguity import AmbiguityParams
from drsched.core.pricing.moments import MomentEstimate, SupportBox


log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WhiteningTransform:
    U: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray
    mu: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def Lambda_half(self) -> np.ndarray:
        return np.diag(np.sqrt(self.eigenvalues))

    @property
    def W(self) -> np.ndarray:
        """``U Lambda^1/2``: whitened coordinates to centred prices."""

        return self.U * np.sqrt(self.eigenvalues)

    def forward(self, lam: np.ndarray) -> np.ndarray:
        """Whiten prices (rows or a single vector)."""

        centred = np.asarray(lam, dtype=float) - self.mu
        return (centred @ self.U) / np.sqrt(self.eigenvalues)

    def inverse(self, lam_c: np.ndarray) -> np.ndarray:
        return np.asarray(lam_c, dtype=float) @ self.W.T + self.mu

    def covariance(self) -> np.ndarray:
        return (self.U * self.eigenvalues) @ self.U.T


def eigen_whiten(moments: MomentEstimate) -> WhiteningTransform:
    """Symmetric eigendecomposition of the covariance, eigenvalues descending."""

    sigma = 0.5 * (moments.sigma + moments.sigma.T)
    w, v = np.linalg.eigh(sigma)
    order = np.argsort(w, kind="stable")[::-1]
    w, v = w[order], v[:, order]
    if w.size and w[-1] <= 0:
        raise ParameterError(f"covariance is not positive definite (smallest eigenvalue {w[-1]:.3e}); regularise it first")
    return WhiteningTransform(U=v, eigenvalues=w, mu=moments.mu.copy())


@dataclass(frozen=True)
class SplitPlan:
    pieces: int
    sizes: tuple[int, ...]

    @property
    def ranges(self) -> tuple[tuple[int, int], ...]:
        out: list[tuple[int, int]] = []
        start = 0
        for m in self.sizes:
            out.append((start, start + m))
            start += m
        return tuple(out)

    @property
    def dim(self) -> int:
        return sum(self.sizes)

    def to_dict(self) -> dict[str, Any]:
        return {"pieces": self.pieces, "sizes": list(self.sizes)}


def make_split_plan(gt: int, pieces: int) -> SplitPlan:
    if gt < 1:
        raise ParameterError(f"dimension must be >= 1, got {gt}")
    if not 1 <= pieces <= gt:
        raise ParameterError(f"piece count must lie in 1..{gt}, got {pieces}")
    base, extra = divmod(gt, pieces)
    return SplitPlan(pieces, tuple(base + 1 if i < extra else base for i in range(pieces)))


def whitened_box(box: SupportBox, moments: MomentEstimate, transform: WhiteningTransform) -> tuple[np.ndarray, np.ndarray]:
    """``(A W, B - A mu)``: the support box in whitened coordinates."""

    W = transform.W
    return np.vstack([W, -W]), box.B - np.concatenate([moments.mu, -moments.mu])


def block_identity_residual(transform: WhiteningTransform, plan: SplitPlan, lam_c: np.ndarray) -> float:
    """Max deviation between the block-wise sum ``sum_i W_i lam_c_i`` and ``W lam_c``."""

    if plan.dim != transform.dim:
        raise ParameterError(f"plan covers {plan.dim} coordinates, transform has {transform.dim}")
    W = transform.W
    lam_c = np.asarray(lam_c, dtype=float)
    total = sum(W[:, a:b] @ lam_c[a:b] for a, b in plan.ranges)
    return float(np.max(np.abs(total - W @ lam_c)))


@dataclass(frozen=True)
class SplitModelHandle:
    program: ConicProgram
    schedule: ScheduleModel
    plan: SplitPlan
    transform: WhiteningTransform = field(repr=False)
    moments: MomentEstimate = field(repr=False)
    box: SupportBox = field(repr=False)
    params: AmbiguityParams
    beta: float
    build_seconds: float = 0.0

    def scalar(self, x: np.ndarray, name: str) -> float:
        return float(self.program.value(x, name).ravel()[0])

    def alpha_value(self, x: np.ndarray) -> float:
        return self.scalar(x, "alpha")

    def objective_value(self, x: np.ndarray) -> float:
        return self.scalar(x, "r") + self.scalar(x, "t")

    def blocks(self, x: np.ndarray) -> list[np.ndarray]:
        return [self.program.value(x, f"Q{i + 1}") for i in range(self.plan.pieces)]

    def certificate(self, x: np.ndarray, lams: np.ndarray) -> np.ndarray:
        """``r + sum_i lam_ci' Q_i lam_ci + q' lam_c`` in whitened coordinates."""

        lam_c = self.transform.forward(lams)
        q = self.program.value(x, "q")
        out = self.scalar(x, "r") + lam_c @ q
        for Qi, (a, b) in zip(self.blocks(x), self.plan.ranges):
            part = lam_c[:, a:b]
            out = out + np.einsum("ij,jk,ik->i", part, Qi, part)
        return out

    def risk_diagnostics(self, x: np.ndarray) -> dict[str, Any]:
        eig = min(min_eigenvalue(Qi) for Qi in self.blocks(x))
        return {"r": self.scalar(x, "r"), "t": self.scalar(x, "t"), "Q_min_eigenvalue": eig, "plan": self.plan.to_dict()}


def build_split_sdp(
    case: NetworkCase,
    segments: int,
    moments: MomentEstimate,
    box: SupportBox,
    params: AmbiguityParams,
    beta: float,
    plan: SplitPlan,
    *,
    transform: WhiteningTransform | None = None,
) -> SplitModelHandle:
    beta = check_beta(beta)
    d = check_dimensions(case, moments, box)
    if plan.dim != d:
        raise ParameterError(f"split plan covers {plan.dim} coordinates, the schedule has {d} unit-periods")
    tr = transform or eigen_whiten(moments)

    t0 = time.perf_counter()
    b = ProgramBuilder()
    model = build_schedule_constraints(case, segments, builder=b)
    P = plan.pieces
    alpha = b.add_variable("alpha").expr()
    r = b.add_variable("r").expr()
    t = b.add_variable("t").expr()
    Qs = [b.add_symmetric(f"Q{i + 1}", m) for i, m in enumerate(plan.sizes)]
    q = b.add_variable("q", d).expr()
    tau1 = b.add_variable("tau1", 2 * d, lb=0.0).expr()
    tau2 = b.add_variable("tau2", 2 * d, lb=0.0).expr()
    aux1 = b.add_variable("aux1", P).expr()
    aux2 = b.add_variable("aux2", P).expr()

    k = 1.0 / (1.0 - beta)
    W = tr.W
    mu = moments.mu
    out = model.output_expr()
    zsum = model.cost_expr().sum()
    at1 = box_transpose(tau1, d)
    at2 = box_transpose(tau2, d)
    bound = box.B

    for i, (Qb, (lo, hi)) in enumerate(zip(Qs, plan.ranges)):
        Wi_t = W[:, lo:hi].T
        q_full = Affine.select(Qb.indices.ravel(), Qb.start + Qb.size)
        q_i = q[np.arange(lo, hi)]
        omega1 = q_i + at1.lmul(Wi_t)
        omega2 = q_i + at2.lmul(Wi_t) + out.lmul(Wi_t * k)
        b.add_lmi(f"lmi.1.{i + 1}", q_full, omega1 * 0.5, -aux1[np.asarray([i])])
        b.add_lmi(f"lmi.2.{i + 1}", q_full, omega2 * 0.5, -aux2[np.asarray([i])])

    b.add_rows("link.1", r - alpha - tau1.dot(bound) + at1.dot(mu) + aux1.sum(), Sense.EQ, 0.0)
    b.add_rows(
        "link.2",
        r - tau2.dot(bound) + at2.dot(mu) + alpha * (beta * k) - zsum * k + out.dot(mu * k) + aux2.sum(),
        Sense.EQ,
        0.0,
    )

    traces = Affine.vstack([Affine.select(np.diag(Qb.indices), Qb.start + Qb.size).sum() for Qb in Qs]).sum()
    vector = q * math.sqrt(params.gamma1) if params.gamma1 > 0 else Affine.zeros(0)
    b.add_soc("moment", vector, t - traces * params.gamma2)
    b.add_objective(r + t)
    program = b.build()
    elapsed = time.perf_counter() - t0
    log.debug("Split model assembled", extra={**program.stats(), "pieces": P, "seconds": round(elapsed, 4)})
    return SplitModelHandle(program, model, plan, tr, moments, box, params, beta, elapsed)


def solve_split(
    case: NetworkCase,
    moments: MomentEstimate,
    box: SupportBox,
    params: AmbiguityParams,
    beta: float,
    *,
    pieces: int = 2,
    segments: int = 10,
    settings: SolverSettings | None = None,
    tol: Tolerances | None = None,
) -> ScheduleDecision:
    plan = make_split_plan(case.price_dim, pieces)
    handle = build_split_sdp(case, segments, moments, box, params, beta, plan)
    solution = CvxpyBackend(settings).solve(handle.program, tol)
    decision = extract_solution(handle, solution, model_name="split")
    log.info(
        "Split model solved",
        extra={"status": decision.status, "pieces": pieces, "objective": decision.objective, "profit": decision.profit},
    )
    return decision
