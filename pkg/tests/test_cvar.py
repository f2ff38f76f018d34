"""
Empirical CVaR and the piecewise loss h.

 Group 1: Agreement
   1.  Sorting and minimisation agree on random discrete distributions
   2.  Known closed-form values (uniform atoms, point mass)

 Group 2: h
   3.  h is the larger of alpha and the scaled excess loss
   4.  Input validation
"""

from __future__ import annotations

import numpy as np
import pytest

from drsched.core.dro.cvar import check_beta, cvar_by_minimization, cvar_by_sorting, empirical_cvar, h_value, h_values
from drsched.core.errors import ParameterError


# ═══ Group 1: Agreement ═══


def test_sorting_matches_minimisation_on_random_distributions() -> None:
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        losses = rng.normal(0.0, 10.0, n)
        probs = rng.dirichlet(np.ones(n))
        beta = float(rng.uniform(0.01, 0.99))
        _, by_sort = cvar_by_sorting(losses, probs, beta)
        _, by_min = cvar_by_minimization(losses, probs, beta)
        worst = max(worst, abs(by_sort - by_min) / max(1.0, abs(by_sort)))
    assert worst <= 1e-9, f"largest relative disagreement {worst:.3e}"


def test_uniform_atoms() -> None:
    report = empirical_cvar([1.0, 2.0, 3.0, 4.0], beta=0.5)
    assert report.var_beta == pytest.approx(2.0)
    assert report.cvar_beta == pytest.approx(3.5)
    assert report.to_dict() == {"beta": 0.5, "var": report.var_beta, "cvar": report.cvar_beta}


def test_fractional_tail_atom() -> None:
    # Tail mass 0.3 takes all of the 0.2 atom at 10 and 0.1 of the atom at 5.
    report = empirical_cvar([0.0, 5.0, 10.0], [0.4, 0.4, 0.2], beta=0.7)
    assert report.cvar_beta == pytest.approx((0.2 * 10.0 + 0.1 * 5.0) / 0.3)
    assert report.var_beta == pytest.approx(5.0)


def test_point_mass() -> None:
    report = empirical_cvar([7.0], beta=0.95)
    assert report.var_beta == 7.0
    assert report.cvar_beta == pytest.approx(7.0)


def test_cvar_dominates_mean_and_var() -> None:
    rng = np.random.default_rng(3)
    losses = rng.exponential(2.0, 200)
    report = empirical_cvar(losses, beta=0.9)
    assert report.cvar_beta >= report.var_beta
    assert report.cvar_beta >= losses.mean()


@pytest.mark.parametrize(
    "losses, probs, beta",
    [
        ([], None, 0.5),
        ([1.0, np.nan], None, 0.5),
        ([1.0, 2.0], [0.5], 0.5),
        ([1.0, 2.0], [0.7, 0.7], 0.5),
        ([1.0, 2.0], [1.5, -0.5], 0.5),
        ([1.0, 2.0], None, 1.0),
        ([1.0, 2.0], None, 0.0),
    ],
)
def test_invalid_inputs(losses: list, probs: list | None, beta: float) -> None:
    with pytest.raises(ParameterError):
        empirical_cvar(losses, probs, beta)


# ═══ Group 2: h ═══


def test_h_value_branches() -> None:
    P = np.array([10.0, 10.0])
    z = np.array([30.0, 30.0])
    beta = 0.8
    # Loss 60 - 10*(2+2) = 20 -> 20/0.2 - 0.8*5/0.2 = 80 > alpha.
    assert h_value(P, z, 5.0, [2.0, 2.0], beta) == pytest.approx(80.0)
    # Loss 60 - 10*(4+4) = -20 -> branch value is negative, alpha wins.
    assert h_value(P, z, 5.0, [4.0, 4.0], beta) == pytest.approx(5.0)


def test_h_values_vectorised() -> None:
    rng = np.random.default_rng(0)
    P, z = rng.uniform(0, 5, 6), rng.uniform(0, 10, 6)
    lams = rng.uniform(0, 4, (25, 6))
    many = h_values(P, z, 1.5, lams, 0.9)
    assert many.shape == (25,)
    assert many == pytest.approx([h_value(P, z, 1.5, lam, 0.9) for lam in lams])
    with pytest.raises(ParameterError):
        h_values(P, z, 1.5, lams[:, :5], 0.9)


def test_check_beta() -> None:
    assert check_beta(0.95) == 0.95
    for bad in (0.0, 1.0, -0.1, 1.2):
        with pytest.raises(ParameterError):
            check_beta(bad)
