"""Exact linear programs for cost vectors that do not depend on xi (Q = 0).

Over type-1 balls with the weighted norm ||z|| = sum_k max{w+ z_k, -w- z_k}
and unrestricted support, the worst-case expected recourse equals the
sample average plus epsilon times the Lipschitz constant of Z(x, .), which
is the optimal lambda of an LP over the dual recourse polyhedron.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .conic import Affine, ConicProgram, ProgramBuilder, SolverSettings, SolveStatus, solve
from .model import (BackendError, FirstStageSet, MetricConfig, RecourseData, SupportPolytope,
                    TwoStageProblem)
from .oracles import recourse_value


LP_SETTINGS = SolverSettings(feas_tol=1e-10, gap_tol=1e-10, max_iter=500)


class NotSufficientlyExpensive(ValueError):
    pass


def dual_norm(z, w_plus: float = 1.0, w_minus: float = 1.0) -> float:
    """max_k max{z_k / w+, -z_k / w-}, clipped at zero."""
    if not (w_plus > 0 and w_minus > 0):
        raise ValueError("weights must be positive")
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size == 0:
        return 0.0
    return float(max(0.0, np.max(np.maximum(z / w_plus, -z / w_minus))))


def _check(p: TwoStageProblem) -> None:
    if np.any(p.recourse.Q):
        raise ValueError("Q must vanish: with xi-dependent costs the problem is NP-hard even over "
                         "simple supports; use the copositive builders instead")
    m = p.metric
    if m.order != 1 or m.norm != "weighted-max":
        raise ValueError("the exact LP needs the type-1 metric with the weighted norm; other "
                         "norms are rejected because the Lipschitz-constant subproblem becomes a "
                         "matrix norm maximisation")
    if not (m.w_plus > 0 and m.w_minus > 0):
        raise ValueError("weights must be positive")
    if p.support.J or p.support.nonnegative:
        warnings.warn("support constraints are ignored by the exact LP; the value is an upper "
                      "bound for the supported problem", stacklevel=3)


def build_lp(p: TwoStageProblem) -> ConicProgram:
    _check(p)
    rec = p.recourse
    N1, N2, M, K, I = p.N1, rec.N2, rec.M, rec.K, p.I
    eps, wp, wm = p.epsilon, p.metric.w_plus, p.metric.w_minus
    b = ProgramBuilder("exact-lp")
    x = b.variable("x", N1)
    X = p.X
    if N1:
        if X.A.shape[0]:
            b.add_nonneg(X.b - X.A @ x, tag="X:ineq")
        lo, hi = np.isfinite(X.lower), np.isfinite(X.upper)
        if np.any(lo):
            b.add_nonneg(x[np.flatnonzero(lo)] - X.lower[lo], tag="X:lower")
        if np.any(hi):
            b.add_nonneg(X.upper[hi] - x[np.flatnonzero(hi)], tag="X:upper")
    lam = b.variable("lambda")
    b.add_nonneg(lam, tag="lambda>=0")
    y = b.variable("y", I * N2)
    phi = b.variable("phi", K * N2)
    psi = b.variable("psi", K * N2)

    def affine_in_x(const: np.ndarray, slopes: np.ndarray) -> Affine:
        """const + slopes @ x, slopes of shape (M, N1)."""
        return (slopes @ x if N1 else Affine.zeros(const.size)) + const

    for i, xi in enumerate(p.samples):
        slopes = np.column_stack([rec.T_slopes[n] @ xi + rec.H[:, n] for n in range(N1)]) if N1 else None
        lhs = affine_in_x(rec.T0 @ xi + rec.h0, slopes)
        b.add_nonneg(rec.W @ y[i * N2:(i + 1) * N2] - lhs, tag=f"scenario[{i}]")
    for k in range(K):
        slopes = np.column_stack([rec.T_slopes[n][:, k] for n in range(N1)]) if N1 else None
        col = affine_in_x(rec.T0[:, k], slopes)
        ph = phi[k * N2:(k + 1) * N2]
        ps = psi[k * N2:(k + 1) * N2]
        b.add_nonneg(lam - ph.dot(rec.q), tag=f"phi[{k}]:cost")
        b.add_nonneg(lam - ps.dot(rec.q), tag=f"psi[{k}]:cost")
        b.add_nonneg(rec.W @ ph - col / wp, tag=f"phi[{k}]:cover")
        b.add_nonneg(rec.W @ ps + col / wm, tag=f"psi[{k}]:cover")
    obj = eps * lam + y.dot(np.tile(rec.q, I)) / I
    if N1:
        obj = obj + p.c.reshape(1, -1) @ x
    b.minimize(obj)
    return b.build()


@dataclass(frozen=True, eq=False)
class WassersteinLpSolution:
    x: np.ndarray
    lam: float
    y: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    value: float
    status: SolveStatus


def solve_lp(p: TwoStageProblem, settings: SolverSettings | None = None) -> WassersteinLpSolution:
    prog = build_lp(p)
    res = solve(prog, settings or LP_SETTINGS)
    N2 = p.N2
    return WassersteinLpSolution(
        x=res.value("x"), lam=float(res.value("lambda")[0]),
        y=res.value("y").reshape(p.I, N2), phi=res.value("phi").reshape(p.K, N2),
        psi=res.value("psi").reshape(p.K, N2),
        value=res.primal_objective if res.ok else (math.inf if res.status is SolveStatus.PRIMAL_INFEASIBLE
                                                   else math.nan),
        status=res.status)


def lipschitz_constant(p: TwoStageProblem, x) -> float:
    """max over k and sign of sup{(+-T(x) e_k)'p / w : p >= 0, W'p = q}."""
    rec = p.recourse
    T = rec.T(x)
    wp, wm = p.metric.w_plus, p.metric.w_minus
    best = 0.0
    for k in range(rec.K):
        for sign, w in ((1.0, wp), (-1.0, wm)):
            obj = sign * T[:, k] / w
            res = linprog(-obj, A_eq=rec.W.T, b_eq=rec.q, bounds=[(0, None)] * rec.M, method="highs")
            if res.status == 2:
                raise NotSufficientlyExpensive("recourse not sufficiently expensive: dual recourse set is empty")
            if res.status == 3:
                raise NotSufficientlyExpensive("recourse not sufficiently expensive: Lipschitz LP is unbounded")
            if res.status != 0:
                raise BackendError(res.message)
            best = max(best, -res.fun)
    return best


def evaluate_fixed_x(p: TwoStageProblem, x) -> float:
    """Worst-case expected recourse at x (without c'x)."""
    _check(p)
    x = np.asarray(x, dtype=float).reshape(-1)
    lam = lipschitz_constant(p, x)
    avg = float(np.mean([recourse_value(p, x, xi) for xi in p.samples]))
    return p.epsilon * lam + avg


# --------------------------------------------------------------------------
# regression


def encode_lad(features, responses, epsilon: float, w_plus: float = 1.0, w_minus: float = 1.0,
               X: FirstStageSet | None = None) -> TwoStageProblem:
    """Robust least absolute deviations with xi = (features, response).

    First-stage vector is (x, x0): slope then intercept.
    """
    F = np.atleast_2d(np.asarray(features, dtype=float))
    r = np.asarray(responses, dtype=float).reshape(-1)
    I, K = F.shape
    dim = K + 1
    T0 = np.zeros((2, dim))
    T0[0, K], T0[1, K] = -1.0, 1.0
    slopes = np.zeros((K + 1, 2, dim))
    for n in range(K):
        slopes[n, 0, n], slopes[n, 1, n] = 1.0, -1.0
    H = np.zeros((2, K + 1))
    H[0, K], H[1, K] = 1.0, -1.0
    rec = RecourseData(Q=np.zeros((1, dim)), q=[1.0], W=[[1.0], [1.0]], T0=T0, h0=np.zeros(2),
                       T_slopes=slopes, H=H)
    return TwoStageProblem(c=np.zeros(K + 1), X=X or FirstStageSet.free(K + 1), recourse=rec,
                           support=SupportPolytope.free(dim), samples=np.column_stack([F, r]),
                           metric=MetricConfig.weighted_max(epsilon, w_plus, w_minus), name="lad")


def encode_multitask(features, responses, epsilon: float, w_plus: float = 1.0, w_minus: float = 1.0,
                     X: FirstStageSet | None = None) -> TwoStageProblem:
    """Robust multi-task LAD; first stage is (vec_rowmajor(Xcoef), intercepts)."""
    F = np.atleast_2d(np.asarray(features, dtype=float))
    R = np.asarray(responses, dtype=float)
    R = R.reshape(F.shape[0], -1)
    I, K = F.shape
    L = R.shape[1]
    dim = K + L
    n1 = L * K + L
    T0 = np.zeros((2 * L, dim))
    T0[:L, K:] = -np.eye(L)
    T0[L:, K:] = np.eye(L)
    slopes = np.zeros((n1, 2 * L, dim))
    for l in range(L):
        for k in range(K):
            n = l * K + k
            slopes[n, l, k] = 1.0
            slopes[n, L + l, k] = -1.0
    H = np.zeros((2 * L, n1))
    H[:L, L * K:] = np.eye(L)
    H[L:, L * K:] = -np.eye(L)
    W = np.vstack([np.eye(L), np.eye(L)])
    rec = RecourseData(Q=np.zeros((L, dim)), q=np.ones(L), W=W, T0=T0, h0=np.zeros(2 * L),
                       T_slopes=slopes, H=H)
    return TwoStageProblem(c=np.zeros(n1), X=X or FirstStageSet.free(n1), recourse=rec,
                           support=SupportPolytope.free(dim), samples=np.column_stack([F, R]),
                           metric=MetricConfig.weighted_max(epsilon, w_plus, w_minus), name="multitask")


def regression_value(coeffs, features, responses, epsilon: float, w_plus: float = 1.0,
                     w_minus: float = 1.0, mode: str = "LAD", transport_response: bool = True) -> float:
    """Closed-form robust regression loss.

    ``LAD``: coeffs = (x, x0).  ``multitask``: coeffs = (Xcoef (L x K), x (L)).
    With ``transport_response`` the response coordinates may also be moved by
    the adversary, which adds the response's unit weight to the regulariser;
    this is what the LP encodings compute.  Without it only the feature
    coefficients enter the regulariser.
    """
    F = np.atleast_2d(np.asarray(features, dtype=float))
    if mode.lower() == "lad":
        x, x0 = coeffs
        x = np.asarray(x, dtype=float).reshape(-1)
        r = np.asarray(responses, dtype=float).reshape(-1)
        loss = float(np.mean(np.abs(F @ x + x0 - r)))
        z = np.concatenate([x, [-1.0]]) if transport_response else x
        reg = max(dual_norm(z, w_plus, w_minus), dual_norm(-z, w_plus, w_minus))
        return epsilon * reg + loss
    if mode.lower() == "multitask":
        Xc, x = coeffs
        Xc = np.atleast_2d(np.asarray(Xc, dtype=float))
        x = np.asarray(x, dtype=float).reshape(-1)
        R = np.asarray(responses, dtype=float).reshape(F.shape[0], -1)
        loss = float(np.mean(np.sum(np.abs(F @ Xc.T + x - R), axis=1)))
        col = float(np.max(np.sum(np.abs(Xc), axis=0))) if Xc.size else 0.0
        if transport_response:
            col = max(col, 1.0)
        return epsilon * col / min(w_plus, w_minus) + loss
    raise ValueError(f"unknown mode {mode!r}")


def load_regression_csv(path, K: int, header: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Rows of K feature columns followed by one or more response columns."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and header is None:
        try:
            [float(v) for v in rows[0]]
            header = False
        except ValueError:
            header = True
    if header:
        rows = rows[1:]
    data = np.array([[float(v) for v in row] for row in rows if row], dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("regression file has no data rows")
    if data.shape[1] <= K:
        raise ValueError(f"expected more than K={K} columns, found {data.shape[1]}")
    if not np.all(np.isfinite(data)):
        raise ValueError("regression data must be finite")
    return data[:, :K], data[:, K:]
