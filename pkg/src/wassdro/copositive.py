"""Copositive upper bounds for the worst-case expected recourse cost.

Every copositive constraint is replaced by its inner approximation
C0 = {P + N : P psd, N >= 0 entrywise}.  Because C0 is a subset of the
copositive cone, delta = 0 outputs are upper bounds; delta > 0 outputs are
only heuristic lower estimates once C0 replaces the copositive cone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .conic import Affine, ConicProgram, ProgramBuilder, SolverSettings, SolveStatus, solve
from .model import (ExtendedData, FirstStageSet, SupportPolytope, TwoStageProblem, extend,
                    require_valid)

DEFAULT_SCHEDULE = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 0.0)
PSD_SETTINGS = SolverSettings(feas_tol=1e-8, gap_tol=1e-8, max_iter=400)

UPPER_BOUND = "upper bound"
LOWER_ESTIMATE = "heuristic lower estimate"


def bound_kind(delta: float) -> str:
    return UPPER_BOUND if delta == 0 else LOWER_ESTIMATE


# --------------------------------------------------------------------------
# block assembly


def _vec_outer(a, b) -> np.ndarray:
    return np.outer(a, b).ravel(order="F")


def _placement(p: int, q: int, r0: int, c0: int, k: int, transpose: bool = False) -> sp.csr_matrix:
    """Maps column-major vec of a p x q block into vec of a k x k matrix."""
    a, b = np.meshgrid(np.arange(p), np.arange(q), indexing="ij")
    src = (a + b * p).ravel()
    if transpose:
        dst = ((c0 + b) + (r0 + a) * k).ravel()
    else:
        dst = ((r0 + a) + (c0 + b) * k).ravel()
    return sp.csr_matrix((np.ones(src.size), (dst, src)), shape=(k * k, p * q))


def _transpose_op(k: int) -> sp.csr_matrix:
    idx = np.arange(k * k)
    r, c = idx % k, idx // k
    return sp.csr_matrix((np.ones(k * k), (c + r * k, idx)), shape=(k * k, k * k))


class BlockAssembler:
    """Collects affine blocks of a symmetric k x k matrix expression.

    Off-diagonal blocks are mirrored automatically.
    """

    def __init__(self, k: int):
        self.k = k
        self.expr = Affine.zeros(k * k)

    def put(self, block: Affine, p: int, q: int, r0: int, c0: int) -> None:
        self.expr = self.expr + block.lmul(_placement(p, q, r0, c0, self.k))
        if (r0, c0) != (c0, r0) or p != q:
            self.expr = self.expr + block.lmul(_placement(p, q, r0, c0, self.k, transpose=True))

    def symmetric(self) -> Affine:
        return 0.5 * (self.expr + self.expr.lmul(_transpose_op(self.k)))


def add_c0_constraint(builder: ProgramBuilder, mat: Affine, k: int, tag: str) -> dict:
    """Constrain the symmetric matrix expression ``mat`` (vec, k*k) to C0.

    Indices whose diagonal entry is identically zero are handled exactly:
    any PSD part has a zero row there, so the remaining row entries must be
    nonnegative on their own and the index is dropped from the PSD block.
    Returns a summary of what was added.
    """
    sym = 0.5 * (mat + mat.lmul(_transpose_op(k)))
    zero_diag = []
    for a in range(k):
        entry = sym[a + a * k]
        if entry.is_constant() and entry.const[0] == 0.0:
            zero_diag.append(a)
    keep = [a for a in range(k) if a not in zero_diag]
    forced = []
    for a in zero_diag:
        for b in range(k):
            if b == a or (b in zero_diag and b < a):
                continue
            forced.append(a + b * k)
    if forced:
        builder.add_nonneg(sym[np.array(forced)], tag=f"{tag}:facial")
    kr = len(keep)
    if kr:
        keep_arr = np.array(keep)
        rows = (keep_arr[:, None] + keep_arr[None, :] * k).ravel(order="F")
        sub = sym[rows]
        n_var = builder.variable(f"{tag}:N", kr * (kr + 1) // 2)
        builder.add_nonneg(n_var, tag=f"{tag}:N>=0")
        src, dst = [], []
        pos = 0
        for c in range(kr):
            for r in range(c + 1):
                dst.append(r + c * kr)
                src.append(pos)
                if r != c:
                    dst.append(c + r * kr)
                    src.append(pos)
                pos += 1
        spread = sp.csr_matrix((np.ones(len(src)), (dst, src)), shape=(kr * kr, pos))
        builder.add_psd(sub - n_var.lmul(spread), kr, tag=f"{tag}:P")
    return {"psd_side": kr, "facial_rows": len(forced), "dropped": tuple(zero_diag)}


@dataclass(frozen=True)
class _Operators:
    """Constant matrices that turn variables into block entries."""

    K: int
    R: int
    L: int
    TL_phi: sp.csr_matrix
    TM_phi: sp.csr_matrix
    MM_phi: sp.csr_matrix
    T_const: np.ndarray
    T_slope: sp.csr_matrix
    h_const: np.ndarray
    h_slope: np.ndarray
    Qt: np.ndarray
    W: np.ndarray


def _operators(ext: ExtendedData) -> _Operators:
    K, R, L = ext.Q.shape[1], ext.R, ext.L
    TL = np.column_stack([_vec_outer(ext.Q[j], ext.Q[j]) for j in range(L)]) if L else np.zeros((K * K, 0))
    TM = np.column_stack([_vec_outer(ext.Q[j], ext.W[:, j]) for j in range(L)]) if L else np.zeros((K * R, 0))
    MM = np.column_stack([_vec_outer(ext.W[:, j], ext.W[:, j]) for j in range(L)]) if L else np.zeros((R * R, 0))
    N1 = ext.T_slopes.shape[0]
    # vec of T(x)^T in column-major order equals the row-major flattening of T(x)
    T_slope = np.column_stack([ext.T_slopes[n].ravel() for n in range(N1)]) if N1 else np.zeros((K * R, 0))
    return _Operators(K, R, L, sp.csr_matrix(TL), sp.csr_matrix(TM), sp.csr_matrix(MM),
                      ext.T0.ravel().copy(), sp.csr_matrix(T_slope), ext.h0.copy(), ext.H.copy(),
                      ext.Q.T.copy(), ext.W.copy())


def copositive_block(ops: _Operators, x: Affine, lam: Affine, corner: Affine, psi: Affine,
                     phi: Affine, xi_hat: np.ndarray, delta: float, alpha: float = 1.0) -> tuple[Affine, int]:
    """Vec of the (K + R + 1)-sided copositive block for one sample.

    ``corner`` is the bottom-right entry (s_i, or s_i + kappa_it).
    """
    K, R = ops.K, ops.R
    k = K + R + 1
    asm = BlockAssembler(k)
    eye_k = np.eye(K).ravel(order="F")[:, None]
    asm.put(eye_k @ lam + phi.lmul(ops.TL_phi), K, K, 0, 0)
    t_vec = (x.lmul(ops.T_slope) if x.size else Affine.zeros(K * R)) + ops.T_const
    asm.put(-0.5 * alpha * t_vec - phi.lmul(ops.TM_phi), K, R, 0, K)
    asm.put(-(np.asarray(xi_hat, dtype=float)[:, None] @ lam) - 0.5 * (ops.Qt @ psi), K, 1, 0, K + R)
    mm = phi.lmul(ops.MM_phi)
    if delta:
        mm = mm + delta * np.eye(R).ravel(order="F")
    asm.put(mm, R, R, K, K)
    h_vec = (ops.h_slope @ x if x.size else Affine.zeros(R)) + ops.h_const
    asm.put(0.5 * (ops.W @ psi) - 0.5 * alpha * h_vec, R, 1, K, K + R)
    asm.put(corner, 1, 1, K + R, K + R)
    return asm.expr, k


# --------------------------------------------------------------------------
# disutilities


@dataclass(frozen=True)
class DisutilitySpec:
    """U(y) = max_t alpha_t * y + beta_t with alpha >= 0, alpha != 0."""

    alpha: tuple
    beta: tuple

    def __post_init__(self):
        alpha = tuple(float(a) for a in np.atleast_1d(self.alpha))
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        if len(alpha) != len(beta) or not alpha:
            raise ValueError("alpha and beta need the same positive length")
        if min(alpha) < 0:
            raise ValueError("disutility slopes must be nonnegative")
        if not any(alpha):
            raise ValueError("disutility slopes must not all vanish")

    @classmethod
    def identity(cls) -> "DisutilitySpec":
        return cls((1.0,), (0.0,))

    @classmethod
    def cvar(cls, rho: float) -> "DisutilitySpec":
        """CVaR at level rho as an optimized certainty equivalent."""
        if not 0 < rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        return cls((0.0, 1.0 / rho), (0.0, 0.0))

    @property
    def T(self) -> int:
        return len(self.alpha)

    def shifted(self, beta0: float) -> "DisutilitySpec":
        return DisutilitySpec(self.alpha, tuple(b + beta0 for b in self.beta))

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.max(np.multiply.outer(y, self.alpha) + np.asarray(self.beta), axis=-1)


# --------------------------------------------------------------------------
# program assembly


def _check_preconditions(p: TwoStageProblem, delta: float, validate: bool = True) -> None:
    if p.metric.order != 2:
        raise ValueError("the copositive reformulation needs the type-2 Euclidean metric")
    if not p.epsilon > 0:
        raise ValueError("radius must be positive: strong duality of the worst-case expectation "
                         "requires epsilon > 0")
    if not p.support.nonnegative:
        raise ValueError("the copositive reformulation needs a support inside the nonnegative orthant")
    if delta < 0 or not math.isfinite(delta):
        raise ValueError("delta must be finite and nonnegative")
    if validate:
        require_valid(p)


def _first_stage(builder: ProgramBuilder, X: FirstStageSet) -> Affine:
    x = builder.variable("x", X.n)
    if X.n == 0:
        return x
    if X.A.shape[0]:
        builder.add_nonneg(X.b - X.A @ x, tag="X:ineq")
    lo = np.isfinite(X.lower)
    hi = np.isfinite(X.upper)
    if np.any(lo):
        builder.add_nonneg(x[np.flatnonzero(lo)] - X.lower[lo], tag="X:lower")
    if np.any(hi):
        builder.add_nonneg(X.upper[hi] - x[np.flatnonzero(hi)], tag="X:upper")
    return x


def _assemble(p: TwoStageProblem, delta: float, x_fixed=None, with_cost: bool = True,
              disutility: DisutilitySpec | None = None, name: str = "") -> ConicProgram:
    ext = extend(p)
    ops = _operators(ext)
    builder = ProgramBuilder(name)
    if x_fixed is not None:
        x = Affine.constant(np.asarray(x_fixed, dtype=float).reshape(-1)) if p.N1 else Affine.zeros(0)
        cost = float(p.c @ np.asarray(x_fixed, dtype=float).reshape(-1)) if p.N1 else 0.0
        obj = Affine.constant([cost]) if with_cost else Affine.zeros(1)
    else:
        x = _first_stage(builder, p.X)
        obj = p.c.reshape(1, -1) @ x if (with_cost and p.N1) else Affine.zeros(1)
    lam = builder.variable("lambda")
    builder.add_nonneg(lam, tag="lambda>=0")
    eps2 = p.epsilon ** 2
    inv_i = 1.0 / p.I
    q2 = ext.q ** 2
    obj = obj + eps2 * lam
    if disutility is None:
        for i, xi in enumerate(p.samples):
            s = builder.variable(f"s[{i}]")
            psi = builder.variable(f"psi[{i}]", ops.L)
            phi = builder.variable(f"phi[{i}]", ops.L)
            mat, k = copositive_block(ops, x, lam, s, psi, phi, xi, delta)
            add_c0_constraint(builder, mat, k, tag=f"block[i={i}]")
            obj = obj + inv_i * (s + psi.dot(ext.q) + phi.dot(q2) - float(xi @ xi) * lam)
    else:
        theta = builder.variable("theta")
        obj = obj + theta
        for i, xi in enumerate(p.samples):
            s = builder.variable(f"s[{i}]")
            obj = obj + inv_i * s
            for t, (a_t, b_t) in enumerate(zip(disutility.alpha, disutility.beta)):
                if a_t == 0.0:
                    # flat piece: sup of b_t - lambda*||xi - xi_hat||^2 over the support is b_t,
                    # attained at the sample itself, so no copositive block is needed
                    builder.add_nonneg(s - b_t, tag=f"flat[i={i},t={t}]")
                    continue
                psi = builder.variable(f"psi[{i},{t}]", ops.L)
                phi = builder.variable(f"phi[{i},{t}]", ops.L)
                kappa = builder.variable(f"kappa[{i},{t}]")
                link = a_t * theta - b_t - psi.dot(ext.q) + float(xi @ xi) * lam - phi.dot(q2)
                builder.add_zero(kappa - link, tag=f"kappa[i={i},t={t}]")
                mat, k = copositive_block(ops, x, lam, s + kappa, psi, phi, xi, delta, alpha=a_t)
                add_c0_constraint(builder, mat, k, tag=f"block[i={i},t={t}]")
    builder.minimize(obj)
    return builder.build()


def build_wce_upper(p: TwoStageProblem, x=None, delta: float = 0.0, validate: bool = True) -> ConicProgram:
    """Worst-case expected recourse cost at ``x`` (excluding c'x).

    With ``x=None`` the first stage stays symbolic over X, which for
    N1 = 0 is the pure evaluation problem.
    """
    _check_preconditions(p, delta, validate)
    return _assemble(p, delta, x_fixed=x, with_cost=False, name=f"wce[delta={delta:g}]")


def build_full_problem(p: TwoStageProblem, delta: float = 0.0, validate: bool = True) -> ConicProgram:
    _check_preconditions(p, delta, validate)
    return _assemble(p, delta, name=f"full[delta={delta:g}]")


def build_risk_averse(p: TwoStageProblem, U: DisutilitySpec, delta: float = 0.0,
                      validate: bool = True) -> ConicProgram:
    if not isinstance(U, DisutilitySpec):
        U = DisutilitySpec(*U)
    _check_preconditions(p, delta, validate)
    return _assemble(p, delta, disutility=U, name=f"oce[delta={delta:g},T={U.T}]")


# --------------------------------------------------------------------------
# solutions


@dataclass(frozen=True, eq=False)
class SampleRecord:
    s: float
    psi: np.ndarray
    phi: np.ndarray


@dataclass(frozen=True, eq=False)
class CopositiveSolution:
    x: np.ndarray
    lam: float
    samples: tuple
    delta: float
    value: float
    status: SolveStatus
    bound: str
    theta: float | None = None
    backend_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.OPTIMAL

    def objective_check(self, p: TwoStageProblem) -> float:
        """Recompute the risk-neutral objective from the stored pieces."""
        ext = extend(p)
        total = float(p.c @ self.x) + p.epsilon ** 2 * self.lam
        acc = 0.0
        for xi, rec in zip(p.samples, self.samples):
            acc += rec.s + ext.q @ rec.psi - self.lam * float(xi @ xi) + rec.phi @ ext.q ** 2
        return total + acc / p.I


def solve_copositive(p: TwoStageProblem, delta: float = 0.0, x=None, settings: SolverSettings | None = None,
                     disutility: DisutilitySpec | None = None) -> CopositiveSolution:
    """Build, solve and unpack one member of the delta family."""
    settings = settings or PSD_SETTINGS
    if disutility is not None:
        prog = build_risk_averse(p, disutility, delta)
    elif x is not None:
        prog = build_wce_upper(p, x, delta)
    else:
        prog = build_full_problem(p, delta)
    res = solve(prog, settings)
    value = res.primal_objective
    if x is not None:
        value += float(p.c @ np.asarray(x, dtype=float).reshape(-1)) if p.N1 else 0.0
    if not res.ok:
        value = math.inf if res.status is SolveStatus.PRIMAL_INFEASIBLE else math.nan
    xv = np.asarray(x, dtype=float).reshape(-1) if x is not None else res.value("x")
    records = []
    if disutility is None:
        for i in range(p.I):
            records.append(SampleRecord(float(res.value(f"s[{i}]")[0]), res.value(f"psi[{i}]"),
                                        res.value(f"phi[{i}]")))
    else:
        for i in range(p.I):
            records.append(SampleRecord(float(res.value(f"s[{i}]")[0]), np.empty(0), np.empty(0)))
    theta = float(res.value("theta")[0]) if disutility is not None else None
    return CopositiveSolution(x=xv, lam=float(res.value("lambda")[0]), samples=tuple(records),
                              delta=float(delta), value=float(value), status=res.status,
                              bound=bound_kind(delta), theta=theta, backend_status=res.backend_status)


# --------------------------------------------------------------------------
# delta refinement


@dataclass(frozen=True)
class RefinementStep:
    delta: float
    value: float
    status: SolveStatus
    x: np.ndarray | None
    bound: str


@dataclass(frozen=True)
class RefinementResult:
    steps: tuple
    candidate_x: np.ndarray | None
    candidate_value: float
    delta_zero_solved: bool | None
    monotone: bool
    outcome: str

    def values(self) -> list[float]:
        return [s.value for s in self.steps]


def delta_refinement(p: TwoStageProblem, schedule: Sequence[float] | None = None, stop_rtol: float = 1e-4,
                     settings: SolverSettings | None = None, slack: float = 1e-6) -> RefinementResult:
    """Solve the delta family along a decreasing schedule.

    Positive entries stop early once successive optimal values agree to
    ``stop_rtol``; a trailing zero entry is always attempted.
    """
    schedule = list(DEFAULT_SCHEDULE if schedule is None else schedule)
    positives = [d for d in schedule if d > 0]
    has_zero = bool(schedule) and schedule[-1] == 0
    if any(d < 0 for d in schedule) or (0 in schedule[:-1]):
        raise ValueError("schedule must be positive, optionally ending with 0")
    if any(b >= a for a, b in zip(positives, positives[1:])):
        raise ValueError("schedule must be strictly decreasing")

    steps: list[RefinementStep] = []
    last_val = None
    for d in positives:
        sol = solve_copositive(p, d, settings=settings)
        steps.append(RefinementStep(d, sol.value, sol.status, sol.x if sol.ok else None, sol.bound))
        if sol.ok:
            if last_val is not None and abs(sol.value - last_val) <= stop_rtol * max(1.0, abs(sol.value)):
                break
            last_val = sol.value
    zero_ok = None
    if has_zero:
        sol = solve_copositive(p, 0.0, settings=settings)
        steps.append(RefinementStep(0.0, sol.value, sol.status, sol.x if sol.ok else None, sol.bound))
        zero_ok = sol.ok

    feasible = [s for s in steps if s.status is SolveStatus.OPTIMAL]
    finite = [s.value for s in steps if s.status is SolveStatus.OPTIMAL]
    monotone = all(b >= a - slack * max(1.0, abs(a)) for a, b in zip(finite, finite[1:]))
    if not feasible:
        return RefinementResult(tuple(steps), None, math.nan, zero_ok, monotone, "no feasible candidate")
    best = feasible[-1]
    return RefinementResult(tuple(steps), best.x, best.value, zero_ok, monotone, "ok")


# --------------------------------------------------------------------------
# robust mode


def robust_mode(p: TwoStageProblem, min_radius: float = 1e-6) -> TwoStageProblem:
    """Single-sample instance whose ball covers the whole (bounded) support."""
    try:
        lo, hi = p.support.bounding_box()
    except ValueError as exc:
        raise ValueError(str(exc)) from None
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("support unbounded, robust mode unavailable")
    mid = 0.5 * (lo + hi)
    center = mid if p.support.contains(mid) else _project_inf(p.support, mid)
    radius = max(2.0 * float(np.linalg.norm(0.5 * (hi - lo))), min_radius)
    return replace(p, samples=center.reshape(1, -1), metric=replace(p.metric, radius=radius))


def _project_inf(support: SupportPolytope, point: np.ndarray) -> np.ndarray:
    """Closest point of the support in the max norm (fallback: any point)."""
    from scipy.optimize import linprog

    K, J = support.K, support.J
    c = np.zeros(K + 1)
    c[-1] = 1.0
    eye = np.eye(K)
    A = [np.hstack([eye, -np.ones((K, 1))]), np.hstack([-eye, -np.ones((K, 1))])]
    b = [point, -point]
    if J:
        A.append(np.hstack([support.S, np.zeros((J, 1))]))
        b.append(support.t)
    res = linprog(c, A_ub=np.vstack(A), b_ub=np.concatenate(b),
                  bounds=[(0, None)] * K + [(0, None)], method="highs")
    if res.status == 0:
        return res.x[:K]
    fallback = support.feasible_point()
    if fallback is None:
        raise ValueError("support set is empty")
    return fallback
