import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wassdro.model import (FirstStageSet, MetricConfig, RecourseData, SupportPolytope,
                           TwoStageProblem)
from wassdro.oracles import SumMaxRecourse

settings.register_profile("wassdro", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("wassdro")


def infinite_gap_instance() -> TwoStageProblem:
    """Z(xi) = min (xi - 1) y s.t. xi - 1 <= 0 * y on Xi = {1}, one sample at 1, radius 1.

    The recourse is feasible only at xi = 1, where it is zero, yet the
    copositive bound at delta = 0 is infeasible.
    """
    rec = RecourseData(Q=[[1.0]], q=[-1.0], W=[[0.0]], T0=[[1.0]], h0=[-1.0])
    support = SupportPolytope(S=[[1.0], [-1.0]], t=[1.0, -1.0])
    return TwoStageProblem(c=np.zeros(0), X=FirstStageSet.free(0), recourse=rec, support=support,
                           samples=[[1.0]], metric=MetricConfig.euclidean(1.0))


def random_summax(rng, K=2, N2=2, I=5):
    A = rng.uniform(0.0, 1.0, (N2, K))
    b = rng.uniform(0.0, A.sum(axis=1))
    return SumMaxRecourse.classic(A, b), rng.uniform(0.0, 1.0, (I, K))


@pytest.fixture
def gap_instance():
    return infinite_gap_instance()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_q0_instance(rng, K=2, N1=2, N2=2, M=3, I=4, eps=0.3, w_plus=1.0, w_minus=1.0,
                       t_scale=1.0) -> TwoStageProblem:
    """Random instance with xi-independent costs, complete and bounded recourse.

    W has positive entries and q = W' p0 for a positive p0, so the dual
    recourse set is a nonempty polytope.
    """
    W = rng.uniform(0.2, 1.0, (M, N2))
    q = W.T @ rng.uniform(0.5, 1.5, M)
    rec = RecourseData(Q=np.zeros((N2, K)), q=q, W=W, T0=t_scale * rng.normal(size=(M, K)),
                       h0=rng.normal(size=M), T_slopes=t_scale * rng.normal(size=(N1, M, K)),
                       H=rng.normal(size=(M, N1)))
    X = FirstStageSet(np.zeros((0, N1)), np.zeros(0), -np.ones(N1), np.ones(N1))
    return TwoStageProblem(c=rng.normal(size=N1), X=X, recourse=rec, support=SupportPolytope.free(K),
                           samples=rng.normal(size=(I, K)), metric=MetricConfig.weighted_max(eps, w_plus, w_minus))


def saa_lp_value(p: TwoStageProblem) -> float:
    """min c'x + (1/I) sum q'y_i s.t. W y_i >= T(x) xi_i + h(x), x in X (dense LP oracle)."""
    from scipy.optimize import linprog

    rec = p.recourse
    N1, N2, M, I = p.N1, rec.N2, rec.M, p.I
    nv = N1 + I * N2
    c = np.concatenate([p.c, np.tile(rec.q, I) / I])
    rows, rhs = [], []
    for i, xi in enumerate(p.samples):
        # T(x) xi + h(x) = T0 xi + h0 + sum_n x_n (T_n xi + H[:, n])
        slope = np.column_stack([rec.T_slopes[n] @ xi + rec.H[:, n] for n in range(N1)]) if N1 else np.zeros((M, 0))
        blk = np.zeros((M, nv))
        blk[:, :N1] = slope
        blk[:, N1 + i * N2:N1 + (i + 1) * N2] = -rec.W
        rows.append(blk)
        rhs.append(-(rec.T0 @ xi + rec.h0))
    if p.X.A.shape[0]:
        rows.append(np.hstack([p.X.A, np.zeros((p.X.A.shape[0], I * N2))]))
        rhs.append(p.X.b)
    bounds = p.X.bounds() + [(None, None)] * (I * N2)
    res = linprog(c, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs), bounds=bounds, method="highs")
    assert res.status == 0, res.message
    return float(res.fun)
