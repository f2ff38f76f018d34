from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from drsched.core.errors import DrschedError, ParameterError

# Relative agreement required between the two CVaR evaluations.
AGREEMENT_TOL = 1e-9


def check_beta(beta: float) -> float:
    b = float(beta)
    if not 0.0 < b < 1.0:
        raise ParameterError(f"beta must lie in (0, 1), got {beta}")
    return b


def h_value(P: Any, z: Any, alpha: float, lam: Any, beta: float) -> float:
    """``max(alpha, L / (1 - beta) - beta * alpha / (1 - beta))`` with ``L = 1'z - P'lam``."""

    return float(h_values(P, z, alpha, np.atleast_2d(np.asarray(lam, dtype=float).ravel()), beta)[0])


def h_values(P: Any, z: Any, alpha: float, lams: np.ndarray, beta: float) -> np.ndarray:
    """Vectorised :func:`h_value` over price rows."""

    b = check_beta(beta)
    p = np.asarray(P, dtype=float).ravel()
    lams = np.asarray(lams, dtype=float)
    if lams.ndim != 2 or lams.shape[1] != p.size:
        raise ParameterError(f"price rows must have {p.size} columns, got shape {lams.shape}")
    loss = float(np.asarray(z, dtype=float).sum()) - lams @ p
    return np.maximum(alpha, loss / (1.0 - b) - b * alpha / (1.0 - b))


@dataclass(frozen=True)
class CvarReport:
    var_beta: float
    cvar_beta: float
    beta: float
    cvar_minimization: float

    def to_dict(self) -> dict[str, float]:
        return {"beta": self.beta, "var": self.var_beta, "cvar": self.cvar_beta}


def _validate(losses: Any, probs: Any | None) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(losses, dtype=float).ravel()
    if x.size == 0:
        raise ParameterError("loss list is empty")
    if not np.all(np.isfinite(x)):
        raise ParameterError("losses must be finite")
    if probs is None:
        return x, np.full(x.size, 1.0 / x.size)
    p = np.asarray(probs, dtype=float).ravel()
    if p.size != x.size:
        raise ParameterError(f"probability vector has {p.size} entries for {x.size} losses")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ParameterError("probabilities must be finite and nonnegative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ParameterError(f"probabilities must sum to 1, got {p.sum()!r}")
    return x, p


def cvar_by_sorting(losses: np.ndarray, probs: np.ndarray, beta: float) -> tuple[float, float]:
    """VaR as the lower beta-quantile and CVaR as the average of the worst ``1 - beta`` mass."""

    order = np.argsort(losses, kind="stable")
    x, p = losses[order], probs[order]
    cdf = np.cumsum(p)
    k = int(np.searchsorted(cdf, beta - 1e-12, side="left"))
    var = float(x[min(k, x.size - 1)])

    tail = 1.0 - beta
    remaining = tail
    acc = 0.0
    for loss, mass in zip(x[::-1], p[::-1]):
        take = min(mass, remaining)
        acc += take * loss
        remaining -= take
        if remaining <= 0:
            break
    if remaining > 0:
        # Rounding left a sliver of tail mass; it belongs to the smallest atom.
        acc += remaining * float(x[0])
    return var, acc / tail


def cvar_by_minimization(losses: np.ndarray, probs: np.ndarray, beta: float) -> tuple[float, float]:
    """Minimise ``a + E[L - a]^+ / (1 - beta)`` over the loss atoms."""

    excess = np.maximum(losses[None, :] - losses[:, None], 0.0) @ probs
    values = losses + excess / (1.0 - beta)
    k = int(np.argmin(values))
    return float(losses[k]), float(values[k])


def empirical_cvar(losses: Any, probs: Any | None = None, beta: float = 0.95) -> CvarReport:
    b = check_beta(beta)
    x, p = _validate(losses, probs)
    var, cvar = cvar_by_sorting(x, p, b)
    _, cvar_min = cvar_by_minimization(x, p, b)
    scale = max(1.0, abs(cvar))
    if abs(cvar - cvar_min) > AGREEMENT_TOL * scale:
        raise DrschedError(f"CVaR evaluations disagree: sorting {cvar!r} vs minimisation {cvar_min!r}")
    return CvarReport(var_beta=var, cvar_beta=cvar, beta=b, cvar_minimization=cvar_min)
