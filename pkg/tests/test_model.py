import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wassdro.model import (FirstStageSet, MetricConfig, RecourseData, SupportPolytope, TwoStageProblem,
                           check_complete_recourse, check_sufficiently_expensive, extend, validate)
from wassdro.newsvendor import NewsvendorConfig, newsvendor_problem


def _problem(rec, support, samples, radius=1.0):
    return TwoStageProblem(c=np.zeros(0), X=FirstStageSet.free(0), recourse=rec, support=support,
                           samples=samples, metric=MetricConfig.euclidean(radius))


# -- complete recourse ------------------------------------------------------


def test_complete_recourse_single_column():
    flag, y = check_complete_recourse([[1.0], [1.0]])
    assert flag
    np.testing.assert_allclose(y, [1.0])


def test_complete_recourse_opposed_rows():
    assert check_complete_recourse([[1.0], [-1.0]]) == (False, None)


def test_complete_recourse_stacked_identity():
    W = np.vstack([np.eye(3), np.eye(3)])
    flag, y = check_complete_recourse(W)
    assert flag
    np.testing.assert_allclose(y, np.ones(3))
    assert np.min(W @ y) >= 1e-8


def test_complete_recourse_needs_rows():
    with pytest.raises(ValueError):
        check_complete_recourse(np.zeros((0, 2)))


@given(arrays(float, (3, 2), elements=st.floats(-2, 2).map(lambda v: round(v, 2))))
def test_complete_recourse_gives_positive_gram_on_simplex(W):
    flag, y = check_complete_recourse(W)
    if not flag:
        return
    assert np.all(W @ y >= 1e-8)
    G = W @ W.T
    grid = np.arange(0.0, 1.0 + 1e-9, 0.05)
    smallest = min(float(lam @ G @ lam) for a, b in itertools.product(grid, grid) if a + b <= 1 + 1e-12
                   for lam in [np.array([a, b, 1.0 - a - b])])
    assert smallest > 0


# -- sufficiently expensive recourse ---------------------------------------


def test_expensive_newsvendor_is_xi_independent():
    p = newsvendor_problem(NewsvendorConfig(), np.ones((2, 3)), 0.1)
    out = check_sufficiently_expensive(p, points=[[0, 0, 0], [5, 1, 2], [9, 9, 9]])
    assert out == [True, True, True]


def test_expensive_example_point(gap_instance):
    assert check_sufficiently_expensive(gap_instance, points=[[1.0]]) == [True]


def test_expensive_fails_for_negative_cost():
    rec = RecourseData(Q=[[0.0]], q=[-1.0], W=[[1.0]], T0=[[0.0]], h0=[0.0])
    p = _problem(rec, SupportPolytope.box([0.0], [1.0]), [[0.5]])
    assert check_sufficiently_expensive(p) == [False]


def test_expensive_needs_points_when_cost_varies():
    rec = RecourseData(Q=[[1.0]], q=[1.0], W=[[1.0]], T0=[[0.0]], h0=[0.0])
    p = _problem(rec, SupportPolytope.box([0.0], [1.0]), [[0.5]])
    with pytest.raises(ValueError):
        check_sufficiently_expensive(p, points=np.zeros((0, 1)))


def test_expensive_rejects_points_outside_support():
    rec = RecourseData(Q=[[1.0]], q=[1.0], W=[[1.0]], T0=[[0.0]], h0=[0.0])
    p = _problem(rec, SupportPolytope.box([0.0], [1.0]), [[0.5]])
    with pytest.raises(ValueError):
        check_sufficiently_expensive(p, points=[[2.0]])


def test_expensive_warns_on_unbounded_support_with_varying_cost():
    rec = RecourseData(Q=[[1.0]], q=[1.0], W=[[1.0]], T0=[[0.0]], h0=[0.0])
    p = _problem(rec, SupportPolytope.orthant(1), [[0.5]])
    with pytest.warns(UserWarning):
        assert check_sufficiently_expensive(p) == [True]


def test_expensive_box_vertices_are_added():
    rec = RecourseData(Q=[[-1.0]], q=[0.5], W=[[1.0]], T0=[[0.0]], h0=[0.0])
    p = _problem(rec, SupportPolytope.box([0.0], [1.0]), [[0.2]])
    assert check_sufficiently_expensive(p, include_vertices=True) == [True, True, False]


# -- extension -------------------------------------------------------------


def test_extend_example_blocks(gap_instance):
    ext = extend(gap_instance)
    np.testing.assert_array_equal(ext.Q, [[1.0], [1.0], [-1.0]])
    np.testing.assert_array_equal(ext.q, [-1.0, -1.0, 1.0])
    np.testing.assert_array_equal(ext.W, [[0.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    np.testing.assert_array_equal(ext.T0, [[1.0], [0.0], [0.0]])
    np.testing.assert_array_equal(ext.h0, [-1.0, 0.0, 0.0])


def test_extend_without_support_rows():
    p = newsvendor_problem(NewsvendorConfig(K=2), np.ones((1, 2)), 0.1)
    ext = extend(p)
    np.testing.assert_array_equal(ext.Q, p.recourse.Q)
    np.testing.assert_array_equal(ext.q, p.recourse.q)
    np.testing.assert_array_equal(ext.W, p.recourse.W)


def test_extend_blocks_slice_back(rng):
    rec = RecourseData(Q=rng.normal(size=(2, 2)), q=rng.normal(size=2), W=rng.normal(size=(3, 2)),
                       T0=rng.normal(size=(3, 2)), h0=rng.normal(size=3),
                       T_slopes=rng.normal(size=(1, 3, 2)), H=rng.normal(size=(3, 1)))
    sup = SupportPolytope(S=rng.uniform(size=(2, 2)), t=[5.0, 6.0])
    p = TwoStageProblem(c=[1.0], X=FirstStageSet.free(1), recourse=rec, support=sup, samples=[[0.1, 0.2]],
                        metric=MetricConfig.euclidean(1.0))
    ext = extend(p)
    M, N2, J = 3, 2, 2
    np.testing.assert_array_equal(ext.Q[:N2], rec.Q)
    np.testing.assert_array_equal(ext.Q[N2:], sup.S)
    np.testing.assert_array_equal(ext.q[:N2], rec.q)
    np.testing.assert_array_equal(ext.q[N2:], -sup.t)
    np.testing.assert_array_equal(ext.W[:M, :N2], rec.W)
    np.testing.assert_array_equal(ext.W[M:, N2:], -np.eye(J))
    assert not np.any(ext.W[:M, N2:]) and not np.any(ext.W[M:, :N2])
    x = np.array([0.7])
    np.testing.assert_array_equal(ext.T(x)[:M], rec.T(x))
    np.testing.assert_array_equal(ext.T(x)[M:], 0.0)
    np.testing.assert_array_equal(ext.h(x)[:M], rec.h(x))
    np.testing.assert_array_equal(ext.h(x)[M:], 0.0)


# -- validation ------------------------------------------------------------


def test_validate_newsvendor_is_clean():
    p = newsvendor_problem(NewsvendorConfig(), np.ones((4, 3)), 0.1)
    assert validate(p).ok


def test_validate_negative_sample():
    p = newsvendor_problem(NewsvendorConfig(K=1), [[-0.5]], 0.1)
    assert validate(p).codes() == ["sample_outside_support"]


def test_validate_empty_support():
    rec = RecourseData(Q=[[0.0]], q=[1.0], W=[[1.0]], T0=[[0.0]], h0=[0.0])
    p = _problem(rec, SupportPolytope(S=[[1.0]], t=[-1.0]), [[0.0]])
    assert "empty_support" in validate(p).codes()


def test_validate_empty_first_stage():
    p = newsvendor_problem(NewsvendorConfig(K=1), [[1.0]], 0.1)
    bad = TwoStageProblem(c=p.c, X=FirstStageSet([[1.0]], [-1.0], [0.0], [np.inf]), recourse=p.recourse,
                          support=p.support, samples=p.samples, metric=p.metric)
    assert validate(bad).codes() == ["empty_first_stage"]


def test_validate_metric_findings():
    p = newsvendor_problem(NewsvendorConfig(K=1), [[1.0]], 0.1)
    bad = p.with_radius(-1.0)
    assert validate(bad).codes() == ["metric"]


def test_validate_nonfinite():
    p = newsvendor_problem(NewsvendorConfig(K=1), [[np.nan]], 0.1)
    assert "nonfinite" in validate(p).codes()


def test_metric_weighted_distance_is_a_weighted_sum():
    m = MetricConfig.weighted_max(1.0, w_plus=2.0, w_minus=3.0)
    assert m.distance([1.0, -1.0], [0.0, 0.0]) == pytest.approx(2.0 + 3.0)


def test_support_box_bounding_box():
    sup = SupportPolytope.box([0.5, 0.0], [1.0, 2.0])
    lo, hi = sup.bounding_box()
    np.testing.assert_allclose(lo, [0.5, 0.0])
    np.testing.assert_allclose(hi, [1.0, 2.0])
    assert len(sup.box_vertices()) == 4


def test_instances_are_immutable():
    p = newsvendor_problem(NewsvendorConfig(K=1), [[1.0]], 0.1)
    with pytest.raises(ValueError):
        p.samples[0, 0] = 3.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert p.with_radius(0.5).epsilon == 0.5
