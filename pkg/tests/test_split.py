"""
Vector-splitting upper approximation.

 Group 1: Whitening and block bookkeeping
   1.  The eigendecomposition reconstructs the covariance, eigenvalues descending
   2.  forward and inverse are mutual inverses
   3.  Block-wise products sum to the full product
   4.  The whitened support box contains every whitened box sample
   5.  Split plans are contiguous, balanced and covering

 Group 2: Objective ordering (6-bus, 4 periods)
   6.  One piece reproduces the exact objective
   7.  exact <= split(2) <= split(4)
   8.  Sampled whitened semi-infinite feasibility at the split optimum
"""

from __future__ import annotations

import numpy as np
import pytest

from conftest import slow
from drsched.core.conic.backend import CvxpyBackend
from drsched.core.dro.exact import sampled_feasibility, solve_exact
from drsched.core.dro.split import (
    block_identity_residual,
    build_split_sdp,
    eigen_whiten,
    make_split_plan,
    solve_split,
    whitened_box,
)
from drsched.core.errors import ParameterError
from drsched.core.network.models import NetworkCase
from drsched.core.pricing.ambiguity import AmbiguityParams
from drsched.core.pricing.moments import MomentEstimate, SupportBox, estimate_moments, support_box
from drsched.core.pricing.scenarios import ScenarioSet, generate_scenarios


SEGMENTS = 6
BETA = 0.9
GAMMAS = AmbiguityParams.from_gammas(0.1, 1.2)


def _random_moments(d: int, seed: int) -> MomentEstimate:
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(d, d))
    return MomentEstimate(rng.uniform(10, 20, d), a @ a.T + 0.1 * np.eye(d), 0.0, 50)


@pytest.fixture(scope="module")
def price_model(scenarios6_t4: ScenarioSet) -> tuple[MomentEstimate, SupportBox]:
    return estimate_moments(scenarios6_t4), support_box(scenarios6_t4)


# ═══ Group 1: Whitening and block bookkeeping ═══


def test_whitening_reconstructs_covariance() -> None:
    m = _random_moments(8, 1)
    tr = eigen_whiten(m)
    assert np.all(np.diff(tr.eigenvalues) <= 0.0), "eigenvalues must be descending"
    assert np.linalg.norm(tr.covariance() - m.sigma) <= 1e-8 * np.linalg.norm(m.sigma)
    assert np.allclose(tr.W @ tr.W.T, m.sigma)


def test_forward_inverse_identity() -> None:
    m = _random_moments(6, 2)
    tr = eigen_whiten(m)
    lams = np.random.default_rng(3).uniform(5, 25, (20, 6))
    assert np.allclose(tr.inverse(tr.forward(lams)), lams, rtol=1e-8, atol=1e-8)
    whitened = tr.forward(np.random.default_rng(4).multivariate_normal(m.mu, m.sigma, 20_000))
    assert np.allclose(np.cov(whitened, rowvar=False), np.eye(6), atol=0.05)


def test_non_pd_covariance_rejected() -> None:
    m = MomentEstimate(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), 0.0, 10)
    with pytest.raises(ParameterError, match="not positive definite"):
        eigen_whiten(m)


@pytest.mark.parametrize("pieces", [1, 2, 3, 7])
def test_block_identity(pieces: int) -> None:
    m = _random_moments(7, 5)
    tr = eigen_whiten(m)
    plan = make_split_plan(7, pieces)
    lam_c = np.random.default_rng(pieces).normal(size=7)
    assert block_identity_residual(tr, plan, lam_c) <= 1e-10


def test_whitened_box_contains_whitened_samples(price_model: tuple[MomentEstimate, SupportBox]) -> None:
    moments, box = price_model
    tr = eigen_whiten(moments)
    A_w, B_w = whitened_box(box, moments, tr)
    assert A_w.shape == (2 * moments.dim, moments.dim)
    xi = tr.forward(box.sample(500, np.random.default_rng(9)))
    assert np.all(xi @ A_w.T <= B_w + 1e-7)


def test_split_plan_shapes() -> None:
    plan = make_split_plan(10, 3)
    assert plan.sizes == (4, 3, 3)
    assert plan.ranges == ((0, 4), (4, 7), (7, 10))
    assert plan.dim == 10
    assert plan.to_dict() == {"pieces": 3, "sizes": [4, 3, 3]}
    with pytest.raises(ParameterError):
        make_split_plan(4, 5)
    with pytest.raises(ParameterError):
        make_split_plan(4, 0)


# ═══ Group 2: Objective ordering ═══


def test_one_piece_matches_exact(case6_t4: NetworkCase, price_model: tuple[MomentEstimate, SupportBox]) -> None:
    moments, box = price_model
    exact = solve_exact(case6_t4, moments, box, GAMMAS, BETA, segments=SEGMENTS)
    split = solve_split(case6_t4, moments, box, GAMMAS, BETA, pieces=1, segments=SEGMENTS)
    assert exact.ok and split.ok
    assert abs(split.objective - exact.objective) <= 1e-4 * abs(exact.objective)


def _ordering(case: NetworkCase, moments: MomentEstimate, box: SupportBox) -> None:
    exact = solve_exact(case, moments, box, GAMMAS, BETA, segments=SEGMENTS)
    two = solve_split(case, moments, box, GAMMAS, BETA, pieces=2, segments=SEGMENTS)
    four = solve_split(case, moments, box, GAMMAS, BETA, pieces=4, segments=SEGMENTS)
    assert exact.ok and two.ok and four.ok
    tol = 1e-5 * abs(exact.objective)
    assert exact.objective <= two.objective + tol
    assert two.objective <= four.objective + tol
    assert two.model == "split"
    assert two.diagnostics["plan"]["pieces"] == 2


def test_upper_approximation_ordering(case6_t4: NetworkCase, price_model: tuple[MomentEstimate, SupportBox]) -> None:
    moments, box = price_model
    _ordering(case6_t4, moments, box)


@slow
def test_upper_approximation_ordering_full_day(case6: NetworkCase) -> None:
    scenarios = generate_scenarios(case6, 400, sigma=0.15, seed=7, segments=SEGMENTS)
    _ordering(case6, estimate_moments(scenarios), support_box(scenarios))


def test_split_sampled_feasibility(case6_t4: NetworkCase, price_model: tuple[MomentEstimate, SupportBox]) -> None:
    moments, box = price_model
    handle = build_split_sdp(case6_t4, SEGMENTS, moments, box, GAMMAS, BETA, make_split_plan(case6_t4.price_dim, 2))
    solution = CvxpyBackend().solve(handle.program)
    assert solution.ok
    worst = sampled_feasibility(handle, solution, count=10_000, seed=2)
    assert worst <= 1e-5 * max(1.0, abs(handle.objective_value(solution.x)))


def test_plan_dimension_mismatch(case6_t4: NetworkCase, price_model: tuple[MomentEstimate, SupportBox]) -> None:
    moments, box = price_model
    with pytest.raises(ParameterError, match="split plan covers"):
        build_split_sdp(case6_t4, SEGMENTS, moments, box, GAMMAS, BETA, make_split_plan(5, 2))
