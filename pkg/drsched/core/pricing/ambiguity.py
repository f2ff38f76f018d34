"""Data-driven size of the moment ambiguity set.

Given M samples, a confidence ``1 - delta`` and the support box, the true
distribution lies (with that confidence) in the set whose first moment sits
within ``gamma1`` of the sample mean and whose second moment is bounded by
``gamma2`` times the sample covariance.

Both confidence terms use ``delta_bar = 1 - sqrt(1 - delta)``, one half of the
confidence budget per moment bound. The second-moment radius ``beta_bar``
divides by ``M`` unless ``beta_scaling="sqrt_m"``, which divides by
``sqrt(M)``. The second sample-threshold term divides by
``(sqrt(R_hat + 4) - R_hat) ** 4``.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Literal

import numpy as np

from drsched.core.conic.program import psd_inv_sqrt
from drsched.core.errors import InvalidAmbiguityError, ParameterError
from drsched.core.pricing.moments import MomentEstimate, SupportBox


log = logging.getLogger(__name__)

BetaScaling = Literal["m", "sqrt_m"]

# Corner enumeration is 2**d solves of a norm; keep it for small boxes.
MAX_BRUTEFORCE_DIM = 16


@dataclass(frozen=True)
class AmbiguityParams:
    delta: float | None
    delta_bar: float | None
    R_hat: float
    R_bar: float
    alpha_bar: float
    beta_bar: float
    M_bar: float
    gamma1: float
    gamma2: float
    samples: int = 0
    dim: int = 0
    source: str = "data"
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.gamma1 < 0 or not math.isfinite(self.gamma1):
            raise ParameterError(f"gamma1 must be a finite value >= 0, got {self.gamma1}")
        if self.gamma2 < 1 or not math.isfinite(self.gamma2):
            raise ParameterError(f"gamma2 must be a finite value >= 1, got {self.gamma2}")

    @property
    def sample_size_ok(self) -> bool:
        return self.samples > self.M_bar

    @classmethod
    def from_gammas(cls, gamma1: float, gamma2: float, *, delta: float | None = None, samples: int = 0, dim: int = 0) -> AmbiguityParams:
        """Parameters with an explicitly chosen set size."""

        return cls(
            delta=delta,
            delta_bar=None if delta is None else 1.0 - math.sqrt(1.0 - delta),
            R_hat=math.nan,
            R_bar=math.nan,
            alpha_bar=math.nan,
            beta_bar=math.nan,
            M_bar=math.nan,
            gamma1=float(gamma1),
            gamma2=float(gamma2),
            samples=samples,
            dim=dim,
            source="explicit",
        )

    def scaled(self, gamma1_factor: float = 1.0, gamma2_excess_factor: float = 1.0) -> AmbiguityParams:
        """Copy with ``gamma1 * f1`` and ``1 + (gamma2 - 1) * f2``."""

        return AmbiguityParams.from_gammas(
            self.gamma1 * gamma1_factor,
            1.0 + (self.gamma2 - 1.0) * gamma2_excess_factor,
            delta=self.delta,
            samples=self.samples,
            dim=self.dim,
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _whitener(moments: MomentEstimate) -> np.ndarray:
    scale = max(float(np.max(np.abs(np.diag(moments.sigma)))), 1.0) if moments.dim else 1.0
    return psd_inv_sqrt(moments.sigma, floor=1e-12 * scale)


def box_radius(moments: MomentEstimate, box: SupportBox) -> float:
    """Closed-form radius: norm of the componentwise larger whitened bound."""

    if moments.dim != box.dim:
        raise ParameterError(f"moments have dimension {moments.dim} but the box has {box.dim}")
    if box.dim == 0:
        return 0.0
    w = _whitener(moments)
    lo = w @ (box.lambda_minus - moments.mu)
    hi = w @ (box.lambda_plus - moments.mu)
    return float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))


def box_radius_bruteforce(moments: MomentEstimate, box: SupportBox) -> float:
    """Largest whitened distance over the box corners."""

    d = box.dim
    if d > MAX_BRUTEFORCE_DIM:
        raise ParameterError(f"corner enumeration is limited to {MAX_BRUTEFORCE_DIM} dimensions, got {d}")
    if d == 0:
        return 0.0
    w = _whitener(moments)
    best = 0.0
    for pick in itertools.product((0, 1), repeat=d):
        corner = np.where(np.asarray(pick, dtype=bool), box.lambda_plus, box.lambda_minus)
        best = max(best, float(np.linalg.norm(w @ (corner - moments.mu))))
    return best


def sample_threshold(r_hat: float, delta_bar: float) -> float:
    ln4 = math.log(4.0 / delta_bar)
    first = (r_hat**2 + 2.0) ** 2 * (2.0 + math.sqrt(2.0 * ln4)) ** 2
    den = math.sqrt(r_hat + 4.0) - r_hat
    second = (8.0 + math.sqrt(32.0 * ln4)) ** 2 / den**4 if den > 0 else math.inf
    return max(first, second)


def ambiguity_params(
    moments: MomentEstimate,
    box: SupportBox,
    delta: float,
    samples: int,
    *,
    beta_scaling: BetaScaling = "m",
) -> AmbiguityParams:
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    if samples < 1:
        raise ParameterError(f"sample count must be >= 1, got {samples}")
    if beta_scaling not in ("m", "sqrt_m"):
        raise ParameterError(f"invalid beta_scaling: {beta_scaling!r}")

    dim = moments.dim
    delta_bar = 1.0 - math.sqrt(1.0 - delta)
    ln4 = math.log(4.0 / delta_bar)
    ln2 = math.log(2.0 / delta_bar)
    r_hat = box_radius(moments, box)
    m_bar = sample_threshold(r_hat, delta_bar)
    root_m = math.sqrt(samples)
    diagnostics: dict[str, Any] = {}

    shrink = 1.0 - (r_hat**2 + 2.0) * (2.0 + math.sqrt(2.0 * ln4)) / root_m
    if shrink <= 0:
        raise InvalidAmbiguityError(
            f"ambiguity parameters invalid: insufficient samples ({samples} samples, radius undefined; need more than {m_bar:.4g})",
            m_bar=m_bar,
            samples=samples,
            diagnostics={"R_hat": r_hat, "delta_bar": delta_bar},
        )
    r_bar = r_hat / math.sqrt(shrink)

    dim_term = 1.0 - dim / r_bar**4 if r_bar > 0 else -math.inf
    if dim_term < 0:
        diagnostics["alpha_dimension_term_clamped"] = True
        dim_term = 0.0
    alpha_bar = (r_bar**2 / root_m) * (math.sqrt(dim_term) + math.sqrt(ln4))
    divisor = float(samples) if beta_scaling == "m" else root_m
    beta_bar = (r_bar**2 / divisor) * (2.0 + math.sqrt(2.0 * ln2)) ** 2

    if alpha_bar + beta_bar >= 1.0:
        raise InvalidAmbiguityError(
            f"ambiguity parameters invalid: insufficient samples (alpha_bar + beta_bar = {alpha_bar + beta_bar:.4g} >= 1; need more than {m_bar:.4g})",
            m_bar=m_bar,
            samples=samples,
            diagnostics={"R_hat": r_hat, "R_bar": r_bar, "alpha_bar": alpha_bar, "beta_bar": beta_bar},
        )
    denom = 1.0 - alpha_bar - beta_bar
    gamma1 = beta_bar / denom
    gamma2 = (1.0 + beta_bar) / denom

    if samples <= m_bar:
        diagnostics["insufficient_samples"] = True
        log.warning("Sample count below confidence threshold", extra={"samples": samples, "m_bar": m_bar})
    diagnostics["beta_scaling"] = beta_scaling

    params = AmbiguityParams(
        delta=delta,
        delta_bar=delta_bar,
        R_hat=r_hat,
        R_bar=r_bar,
        alpha_bar=alpha_bar,
        beta_bar=beta_bar,
        M_bar=m_bar,
        gamma1=gamma1,
        gamma2=gamma2,
        samples=samples,
        dim=dim,
        diagnostics=diagnostics,
    )
    log.info(
        "Ambiguity parameters",
        extra={"delta": delta, "R_hat": round(r_hat, 6), "gamma1": gamma1, "gamma2": gamma2, "samples": samples},
    )
    return params
