import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_summax
from wassdro.conic import SolveStatus
from wassdro.model import FirstStageSet, MetricConfig, RecourseData, SupportPolytope, TwoStageProblem
from wassdro.newsvendor import NewsvendorConfig, newsvendor_costs, newsvendor_problem
from wassdro.oracles import (ENUMERATION_LIMIT, SumMaxRecourse, decision_rule_bound, empirical_cvar,
                             exact_wce_summax, grid_wce, recourse_dual_value, recourse_primal, recourse_value,
                             saa_cvar)


def _identity_recourse_problem(eps, sample=0.0):
    """Z(xi) = xi on [0, 1] as a recourse LP: min y s.t. y >= xi."""
    rec = RecourseData(Q=[[0.0]], q=[1.0], W=[[1.0]], T0=[[1.0]], h0=[0.0])
    return TwoStageProblem(c=np.zeros(0), X=FirstStageSet.free(0), recourse=rec,
                           support=SupportPolytope.box([0.0], [1.0]), samples=[[sample]],
                           metric=MetricConfig.euclidean(eps))


# -- recourse LPs ----------------------------------------------------------


def test_newsvendor_recourse_two_piece():
    p = newsvendor_problem(NewsvendorConfig(K=1), [[1.0]], 0.1)
    assert recourse_value(p, [2.0], [1.0]) == pytest.approx(1.0)


def test_example_recourse_is_infeasible_off_support(gap_instance):
    assert recourse_value(gap_instance, np.zeros(0), [2.0]) == math.inf


def test_newsvendor_recourse_at_origin():
    p = newsvendor_problem(NewsvendorConfig(K=1), [[1.0]], 0.1)
    assert recourse_value(p, [0.0], [0.0]) == pytest.approx(0.0, abs=1e-12)


def test_unbounded_recourse():
    rec = RecourseData(Q=[[0.0]], q=[-1.0], W=[[1.0]], T0=[[0.0]], h0=[0.0])
    assert recourse_value(rec, np.zeros(0), [0.5]) == -math.inf


@given(st.floats(0, 20), st.floats(0, 20))
def test_recourse_primal_dual_agreement(x, xi):
    rec = newsvendor_problem(NewsvendorConfig(K=1), [[1.0]], 0.1).recourse
    primal = recourse_primal(rec, [x], [xi])
    assert primal == pytest.approx(recourse_dual_value(rec, [x], [xi]), abs=1e-7, rel=1e-7)
    assert primal == pytest.approx(newsvendor_costs([x], [[xi]], [1.0], [10.0])[0], abs=1e-7)


# -- exact SOCP ------------------------------------------------------------


def test_socp_recourse_vanishes_on_box():
    r = SumMaxRecourse.classic([[1.0]], [2.0])
    assert exact_wce_summax(r, [[0.3], [0.9]], 1.0).value == pytest.approx(0.0, abs=1e-7)


def test_socp_single_term_value():
    r = SumMaxRecourse.classic([[1.0]], [0.0])
    sol = exact_wce_summax(r, [[0.0]], 1.0)
    assert sol.status is SolveStatus.OPTIMAL
    assert sol.value == pytest.approx(1.0, abs=1e-6)


def test_socp_small_radius_matches_sample():
    r = SumMaxRecourse.classic([[1.0]], [0.0])
    assert abs(exact_wce_summax(r, [[1.0]], 1e-3).value - 1.0) <= 1e-2


def test_socp_enumeration_guard():
    r = SumMaxRecourse.classic(np.ones((15, 1)), np.zeros(15))
    assert r.combinations() > ENUMERATION_LIMIT
    with pytest.raises(ValueError, match="enumeration"):
        exact_wce_summax(r, [[0.5]], 1.0)


def test_socp_rejects_samples_outside_box():
    with pytest.raises(ValueError):
        exact_wce_summax(SumMaxRecourse.classic([[1.0]], [0.0]), [[1.5]], 1.0)


def test_socp_monotone_in_radius_and_converges(rng):
    r, xs = random_summax(rng, K=2, N2=2, I=4)
    vals = [exact_wce_summax(r, xs, e).value for e in (1e-3, 1e-2, 1e-1, 0.5)]
    assert all(b >= a - 1e-7 for a, b in zip(vals, vals[1:]))
    saa = float(np.mean(r(xs)))
    assert abs(vals[0] - saa) <= 1e-2 * max(1.0, saa)


def test_socp_newsvendor_pieces_match_copositive_free_evaluation():
    # at a fixed order the newsvendor cost is a sum of two-piece maxima
    r = SumMaxRecourse.newsvendor([1.0], [1.0], [10.0], [3.0])
    xs = np.array([[0.5], [2.0]])
    np.testing.assert_allclose(r(xs), newsvendor_costs([1.0], xs, [1.0], [10.0]))
    assert exact_wce_summax(r, xs, 1e-4).value == pytest.approx(np.mean(r(xs)), abs=1e-2)


# -- grid evaluation -------------------------------------------------------


def test_grid_identity_cost():
    res = grid_wce(_identity_recourse_problem(0.5), grid_per_dim=1001)
    assert res.value == pytest.approx(0.5, abs=1e-6)
    assert res.lam == pytest.approx(1.0, abs=1e-3)


def test_grid_zero_cost():
    p = _identity_recourse_problem(0.7)
    assert grid_wce(p, cost=lambda pts: np.zeros(len(pts))).value == pytest.approx(0.0, abs=1e-12)


def test_grid_large_radius_is_robust_value():
    p = _identity_recourse_problem(10.0, sample=0.2)
    assert grid_wce(p, grid_per_dim=101).value == pytest.approx(1.0, abs=1e-6)


def test_grid_reports_infinite_cost(gap_instance):
    rec = RecourseData(Q=[[0.0]], q=[1.0], W=[[0.0]], T0=[[1.0]], h0=[-0.5])
    p = TwoStageProblem(c=np.zeros(0), X=FirstStageSet.free(0), recourse=rec,
                        support=SupportPolytope.box([0.0], [1.0]), samples=[[0.0]],
                        metric=MetricConfig.euclidean(1.0))
    assert grid_wce(p, grid_per_dim=11).value == math.inf


def test_grid_needs_small_dimension():
    r = SumMaxRecourse.classic(np.ones((1, 4)), [1.0])
    with pytest.raises(ValueError):
        grid_wce(r.to_problem(np.zeros((1, 4)), 0.5))


# -- empirical CVaR --------------------------------------------------------


def test_cvar_top_half():
    costs = np.arange(1.0, 11.0)
    assert saa_cvar(costs, 0.5).value == pytest.approx(8.0)
    assert empirical_cvar(costs, 0.5) == pytest.approx(8.0)


def test_cvar_full_level_is_mean():
    costs = np.arange(1.0, 11.0)
    assert saa_cvar(costs, 1.0).value == pytest.approx(5.5)
    assert empirical_cvar(costs, 1.0) == 5.5


@given(st.floats(-100, 100), st.floats(0.01, 1.0), st.integers(1, 30))
def test_cvar_of_constant(c, rho, n):
    assert empirical_cvar(np.full(n, c), rho) == pytest.approx(c, abs=1e-9)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40), st.floats(0.02, 1.0))
def test_cvar_closed_form_matches_lp(costs, rho):
    assert empirical_cvar(costs, rho) == pytest.approx(saa_cvar(costs, rho).value, abs=1e-7, rel=1e-7)


def test_cvar_rejects_zero_level():
    with pytest.raises(ValueError):
        saa_cvar([1.0], 0.0)


def test_cvar_joint_over_first_stage():
    cfg = NewsvendorConfig(K=1, budget=5.0)
    xs = np.array([[1.0], [2.0], [3.0]])
    p = newsvendor_problem(cfg, xs, 0.1)
    res = saa_cvar(None, 1.0, problem=p, optimize_x=True)
    assert res.status == "Optimal"
    fixed = saa_cvar(None, 1.0, problem=p, x=res.x)
    assert fixed.value == pytest.approx(res.value, abs=1e-8)
    grid = min(np.mean(newsvendor_costs([x], xs, [1.0], [10.0])) for x in np.linspace(0, 5, 5001))
    assert res.value == pytest.approx(grid, abs=1e-3)


# -- decision rules --------------------------------------------------------


def test_affine_rule_is_tight_for_affine_recourse():
    r = SumMaxRecourse.classic([[0.6, 0.3]], [-5.0])
    xs = np.array([[0.2, 0.4], [0.9, 0.1]])
    exact = exact_wce_summax(r, xs, 0.3).value
    assert decision_rule_bound(r, xs, 0.3, degree="affine").value == pytest.approx(exact, abs=1e-4)


def test_quadratic_rule_is_no_worse_than_affine(rng):
    for _ in range(20):
        r, xs = random_summax(rng, K=2, N2=2, I=3)
        aff = decision_rule_bound(r, xs, 0.4, degree="affine").value
        quad = decision_rule_bound(r, xs, 0.4, degree="quadratic").value
        assert quad <= aff + 1e-6


def test_unknown_rule_degree():
    with pytest.raises(ValueError):
        decision_rule_bound(SumMaxRecourse.classic([[1.0]], [0.0]), [[0.5]], 0.1, degree="cubic")


@settings(max_examples=10)
@given(st.integers(0, 2 ** 31), st.integers(1, 2), st.integers(1, 2), st.floats(0.1, 1.0))
def test_sandwich(seed, K, N2, eps):
    r, xs = random_summax(np.random.default_rng(seed), K=K, N2=N2, I=3)
    p = r.to_problem(xs, eps)
    grid = grid_wce(p, grid_per_dim=41 if K == 2 else 401, cost=r).value
    exact = exact_wce_summax(r, xs, eps).value
    rule = decision_rule_bound(r, xs, eps).value
    assert grid <= exact + 1e-6
    assert exact <= rule + 1e-6
