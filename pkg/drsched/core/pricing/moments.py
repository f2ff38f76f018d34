from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp

from drsched.core.conic.program import min_eigenvalue
from drsched.core.errors import ParameterError
from drsched.core.pricing.scenarios import ScenarioSet


log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MomentEstimate:
    mu: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    regularization_added: float
    samples: int

    @property
    def dim(self) -> int:
        return int(self.mu.size)

    def slice(self, columns: Sequence[int]) -> MomentEstimate:
        idx = np.asarray(columns, dtype=np.int64)
        return MomentEstimate(self.mu[idx].copy(), self.sigma[np.ix_(idx, idx)].copy(), self.regularization_added, self.samples)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "samples": self.samples,
            "regularization_added": self.regularization_added,
            "mean": self.mu,
            "min_eigenvalue": min_eigenvalue(self.sigma) if self.dim else None,
        }


@dataclass(frozen=True)
class SupportBox:
    """Componentwise price bounds ``{lam | A lam <= B}`` with ``A = [I; -I]``."""

    lambda_minus: np.ndarray
    lambda_plus: np.ndarray

    def __post_init__(self) -> None:
        if self.lambda_minus.shape != self.lambda_plus.shape:
            raise ParameterError("support box bounds differ in shape")
        if np.any(self.lambda_minus > self.lambda_plus):
            raise ParameterError("support box is empty: lambda_minus exceeds lambda_plus")

    @property
    def dim(self) -> int:
        return int(self.lambda_minus.size)

    @property
    def A(self) -> sp.csr_matrix:
        eye = sp.identity(self.dim, format="csr")
        return sp.vstack([eye, -eye], format="csr")

    @property
    def B(self) -> np.ndarray:
        return np.concatenate([self.lambda_plus, -self.lambda_minus])

    def contains(self, lam: np.ndarray, tol: float = 0.0) -> bool:
        lam = np.asarray(lam, dtype=float)
        return bool(np.all(lam >= self.lambda_minus - tol) and np.all(lam <= self.lambda_plus + tol))

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform samples from the box, one per row."""

        return rng.uniform(self.lambda_minus, self.lambda_plus, size=(count, self.dim))

    def slice(self, columns: Sequence[int]) -> SupportBox:
        idx = np.asarray(columns, dtype=np.int64)
        return SupportBox(self.lambda_minus[idx].copy(), self.lambda_plus[idx].copy())

    @classmethod
    def degenerate(cls, point: np.ndarray) -> SupportBox:
        p = np.asarray(point, dtype=float).ravel()
        return cls(p.copy(), p.copy())


def default_regularization(sigma: np.ndarray, mu: np.ndarray) -> float:
    """``1e-6 * trace / dim``; falls back to the mean price scale when the spread is zero."""

    d = max(int(sigma.shape[0]), 1)
    tr = float(np.trace(sigma))
    if tr > 0:
        return 1e-6 * tr / d
    scale = float(np.mean(mu * mu)) if mu.size else 0.0
    return 1e-6 * max(scale, 1.0)


def estimate_moments(scenarios: ScenarioSet, eps_reg: float | None = None) -> MomentEstimate:
    """Sample mean and (1/M) covariance, shifted by ``eps * I`` when needed.

    The shift is 0 when the smallest eigenvalue already reaches ``eps_reg``,
    otherwise exactly ``eps_reg``.
    """

    x = scenarios.samples
    mu = x.mean(axis=0)
    centred = x - mu
    sigma = (centred.T @ centred) / scenarios.count
    sigma = 0.5 * (sigma + sigma.T)

    eps = default_regularization(sigma, mu) if eps_reg is None else float(eps_reg)
    if eps <= 0:
        raise ParameterError(f"regularisation must be positive, got {eps}")
    added = 0.0
    if scenarios.dim and min_eigenvalue(sigma) < eps:
        sigma = sigma + eps * np.eye(scenarios.dim)
        added = eps
        log.warning("Covariance regularised", extra={"eps": eps, "dim": scenarios.dim, "samples": scenarios.count})
    log.info("Moments estimated", extra={"dim": scenarios.dim, "samples": scenarios.count, "regularization": added})
    return MomentEstimate(mu=mu, sigma=sigma, regularization_added=added, samples=scenarios.count)


def support_box(scenarios: ScenarioSet) -> SupportBox:
    return SupportBox(scenarios.samples.min(axis=0), scenarios.samples.max(axis=0))
