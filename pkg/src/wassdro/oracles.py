"""Independent evaluators used to certify the conic builders.

LPs here go through HiGHS (scipy) so they share no code path with the
conic backend.  The SOCP oracle and the decision-rule bound use the conic
layer because they need second-order and PSD cones.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .conic import Affine, ProgramBuilder, SolverSettings, SolveStatus, solve
from .model import (BackendError, FirstStageSet, MetricConfig, RecourseData, SupportPolytope,
                    TwoStageProblem)

ENUMERATION_LIMIT = 16384
AGREEMENT_TOL = 1e-7


@dataclass(frozen=True)
class Provenance:
    method: str
    settings: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# recourse LPs


def _recourse_lps(rec: RecourseData, x, xi):
    xi = np.asarray(xi, dtype=float).reshape(-1)
    rhs = rec.T(x) @ xi + rec.h(x)
    cost = rec.cost(xi)
    return rhs, cost


def recourse_primal(rec: RecourseData, x, xi) -> float:
    """min (Q xi + q)'y  s.t.  W y >= T(x) xi + h(x)."""
    rhs, cost = _recourse_lps(rec, x, xi)
    if rec.N2 == 0:
        return 0.0 if np.all(rhs <= 1e-12) else math.inf
    res = linprog(cost, A_ub=-rec.W, b_ub=-rhs, bounds=[(None, None)] * rec.N2, method="highs")
    if res.status == 0:
        return float(res.fun)
    if res.status == 2:
        return math.inf
    if res.status == 3:
        return -math.inf
    raise BackendError(f"recourse LP failed: {res.message}")


def recourse_dual_value(rec: RecourseData, x, xi) -> float:
    """max (T(x) xi + h(x))'p  s.t.  W'p = Q xi + q, p >= 0."""
    rhs, cost = _recourse_lps(rec, x, xi)
    if rec.N2 == 0:
        return 0.0 if np.all(rhs <= 1e-12) else math.inf
    res = linprog(-rhs, A_eq=rec.W.T, b_eq=cost, bounds=[(0, None)] * rec.M, method="highs")
    if res.status == 0:
        return float(-res.fun)
    if res.status == 2:
        return -math.inf
    if res.status == 3:
        return math.inf
    raise BackendError(f"dual recourse LP failed: {res.message}")


def recourse_value(p: TwoStageProblem | RecourseData, x, xi, check_dual: bool = True) -> float:
    """Second-stage cost Z(x, xi), with +inf for infeasible and -inf for unbounded."""
    rec = p.recourse if isinstance(p, TwoStageProblem) else p
    val = recourse_primal(rec, x, xi)
    if check_dual and math.isfinite(val):
        dual = recourse_dual_value(rec, x, xi)
        if not abs(val - dual) <= AGREEMENT_TOL * max(1.0, abs(val)):
            raise BackendError(f"primal {val} and dual {dual} recourse values disagree")
    return val


# --------------------------------------------------------------------------
# sums of piecewise-affine maxima


@dataclass(frozen=True, eq=False)
class SumMaxRecourse:
    """Z(xi) = sum_n max_p (a_np' xi - c_np) on a box [lower, upper].

    The classic form uses the two pieces (A_n, b_n) and (0, 0) for each term.
    """

    pieces: tuple
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape or np.any(lower > upper) or np.any(lower < 0):
            raise ValueError("box must satisfy 0 <= lower <= upper")
        terms = []
        for term in self.pieces:
            term = tuple((np.asarray(a, dtype=float).reshape(-1), float(c)) for a, c in term)
            if not term or any(a.size != lower.size for a, _ in term):
                raise ValueError("each term needs pieces of dimension K")
            terms.append(term)
        object.__setattr__(self, "pieces", tuple(terms))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def classic(cls, A, b, lower=None, upper=None) -> "SumMaxRecourse":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        K = A.shape[1]
        lower = np.zeros(K) if lower is None else lower
        upper = np.ones(K) if upper is None else upper
        pieces = [((A[n], b[n]), (np.zeros(K), 0.0)) for n in range(A.shape[0])]
        return cls(tuple(pieces), lower, upper)

    @classmethod
    def newsvendor(cls, x, hold, short, upper) -> "SumMaxRecourse":
        """sum_k max{hold_k (x_k - xi_k), short_k (xi_k - x_k)} at a fixed order x."""
        x = np.asarray(x, dtype=float)
        K = x.size
        eye = np.eye(K)
        pieces = [((-hold[k] * eye[k], -hold[k] * x[k]), (short[k] * eye[k], short[k] * x[k]))
                  for k in range(K)]
        return cls(tuple(pieces), np.zeros(K), upper)

    @property
    def K(self) -> int:
        return self.lower.size

    @property
    def N2(self) -> int:
        return len(self.pieces)

    def combinations(self) -> int:
        return int(np.prod([len(t) for t in self.pieces]))

    def __call__(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        total = np.zeros(xi.shape[0])
        for term in self.pieces:
            total += np.max(np.column_stack([xi @ a - c for a, c in term]), axis=1)
        return total

    def support(self) -> SupportPolytope:
        return SupportPolytope.box(self.lower, self.upper)

    def to_problem(self, samples, epsilon: float, metric: MetricConfig | None = None) -> TwoStageProblem:
        """Encode as a recourse LP: min sum_n y_n with y_n >= each piece."""
        rows_T, rows_h, rows_W = [], [], []
        for n, term in enumerate(self.pieces):
            for a, c in term:
                rows_T.append(a)
                rows_h.append(-c)
                w = np.zeros(self.N2)
                w[n] = 1.0
                rows_W.append(w)
        rec = RecourseData(Q=np.zeros((self.N2, self.K)), q=np.ones(self.N2), W=np.array(rows_W),
                           T0=np.array(rows_T), h0=np.array(rows_h))
        return TwoStageProblem(c=np.zeros(0), X=FirstStageSet.free(0), recourse=rec,
                               support=self.support(), samples=np.asarray(samples, dtype=float),
                               metric=metric or MetricConfig.euclidean(epsilon))


@dataclass(frozen=True, eq=False)
class SocpSolution:
    value: float
    lam: float
    s: np.ndarray
    status: SolveStatus
    combinations: int
    provenance: Provenance


def exact_wce_summax(r: SumMaxRecourse, samples, epsilon: float,
                     settings: SolverSettings | None = None) -> SocpSolution:
    """Exact worst-case expectation over the type-2 Euclidean ball.

    For every sample and every selection of one piece per term, the
    supremum of a'xi - c - lam ||xi - xi_hat||^2 over the box is dualised
    with multipliers theta (xi >= l) and eta (xi <= u), which gives one
    rotated second-order cone per pair.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n_comb = r.combinations()
    if n_comb > ENUMERATION_LIMIT:
        raise ValueError(f"{n_comb} piece combinations exceed the enumeration limit {ENUMERATION_LIMIT}")
    for xi in samples:
        if np.any(xi < r.lower - 1e-9) or np.any(xi > r.upper + 1e-9):
            raise ValueError("samples must lie in the box")
    K, I = r.K, samples.shape[0]
    finite_up = np.isfinite(r.upper)
    combos = list(itertools.product(*[range(len(t)) for t in r.pieces]))
    slopes = np.array([sum(r.pieces[n][j][0] for n, j in enumerate(cmb)) for cmb in combos])
    consts = np.array([sum(r.pieces[n][j][1] for n, j in enumerate(cmb)) for cmb in combos])

    b = ProgramBuilder("exact-socp")
    lam = b.variable("lambda")
    b.add_nonneg(lam)
    s = b.variable("s", I)
    nup = int(finite_up.sum())
    for i, xi in enumerate(samples):
        sq = float(xi @ xi)
        for ell in range(len(combos)):
            theta = b.variable(f"theta[{i},{ell}]", K)
            b.add_nonneg(theta)
            v = slopes[ell] + (2 * xi)[:, None] @ lam + theta
            w = s[i] + consts[ell] + sq * lam + theta.dot(r.lower)
            if nup:
                eta = b.variable(f"eta[{i},{ell}]", nup)
                b.add_nonneg(eta)
                sel = np.eye(K)[:, finite_up]
                v = v - sel @ eta
                w = w - eta.dot(r.upper[finite_up])
            b.add_soc(Affine.vstack([w + lam, v, w - lam]), tag=f"soc[i={i},l={ell}]")
    b.minimize(epsilon ** 2 * lam + s.sum() / I)
    prog = b.build()
    res = solve(prog, settings or SolverSettings())
    value = res.primal_objective if res.ok else math.nan
    return SocpSolution(value=value, lam=float(res.value("lambda")[0]), s=res.value("s"),
                        status=res.status, combinations=n_comb,
                        provenance=Provenance("exact-socp", {"combinations": n_comb,
                                                             "backend": res.backend_status}))


# --------------------------------------------------------------------------
# grid evaluation of the dual formula


@dataclass(frozen=True, eq=False)
class GridResult:
    value: float
    coarse_value: float
    estimate: float
    lam: float
    points: int
    provenance: Provenance


def _golden(f: Callable[[float], float], lo: float, hi: float, tol: float) -> tuple[float, float]:
    inv = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    cands = [(f(a), a), (fc, c), (fd, d), (f(b), b)]
    val, arg = min(cands)
    return arg, val


def _grid_points(p: TwoStageProblem, per_dim: int) -> np.ndarray:
    lo, hi = p.support.bounding_box()
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("grid evaluation needs a bounded support")
    axes = [np.linspace(l, h, per_dim) if h > l else np.array([l]) for l, h in zip(lo, hi)]
    grid = np.array(list(itertools.product(*axes))).reshape(-1, p.K)
    pts = np.vstack([grid, p.samples])
    keep = np.array([p.support.contains(pt) for pt in pts])
    return pts[keep]


def _grid_value(p: TwoStageProblem, x, per_dim: int, cost, tol: float):
    pts = _grid_points(p, per_dim)
    if cost is not None:
        z = np.asarray(cost(pts), dtype=float).reshape(-1)
    else:
        z = np.array([recourse_value(p, x, pt, check_dual=False) for pt in pts])
    if np.any(z == math.inf):
        return math.inf, math.nan, len(pts)
    r = p.metric.order
    eps_r = p.epsilon ** r
    dist = np.stack([p.metric.distance(pts, xi) ** r for xi in p.samples])  # I x P

    def f(lam: float) -> float:
        return eps_r * lam + float(np.mean(np.max(z[None, :] - lam * dist, axis=1)))

    if eps_r == 0:
        return f(1e12), math.nan, len(pts)
    lam_max = (z.max() - z.min()) / eps_r + 1.0
    lam, val = _golden(f, 0.0, lam_max, tol * (1.0 + lam_max))
    return val, lam, len(pts)


def grid_wce(p: TwoStageProblem, x=None, grid_per_dim: int = 101, cost: Callable | None = None,
             tol: float = 1e-12) -> GridResult:
    """Lower estimate of the worst-case expectation from a finite grid of Xi.

    ``cost`` may map an (n, K) array of scenarios to recourse costs; by
    default each grid point solves the recourse LP at ``x``.
    """
    if p.K > 3:
        raise ValueError("grid evaluation is limited to K <= 3")
    if p.metric.order not in (1, 2):
        raise ValueError("metric order must be 1 or 2")
    x = np.zeros(p.N1) if x is None else np.asarray(x, dtype=float)
    fine, lam, npts = _grid_value(p, x, grid_per_dim, cost, tol)
    coarse_n = max(2, (grid_per_dim + 1) // 2)
    coarse, _, _ = _grid_value(p, x, coarse_n, cost, tol)
    if math.isfinite(fine) and math.isfinite(coarse):
        # the grid error of a Lipschitz sup scales with the mesh width
        h_f = 1.0 / max(grid_per_dim - 1, 1)
        h_c = 1.0 / max(coarse_n - 1, 1)
        estimate = fine + (fine - coarse) * h_f / (h_c - h_f) if h_c > h_f else fine
    else:
        estimate = fine
    return GridResult(fine, coarse, estimate, lam, npts,
                      Provenance("grid", {"grid_per_dim": grid_per_dim, "tol": tol}))


# --------------------------------------------------------------------------
# empirical CVaR


def empirical_cvar(costs, rho: float) -> float:
    """min_theta theta + E[max(cost - theta, 0)] / rho, exact for finite samples."""
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    z = np.sort(np.asarray(costs, dtype=float).reshape(-1))
    n = z.size
    if n == 0:
        raise ValueError("need at least one cost")
    # the optimum is attained at an order statistic; evaluate all of them
    tail = np.concatenate([np.cumsum(z[::-1])[::-1], [0.0]])  # tail[j] = sum z[j:]
    j = np.arange(n)
    vals = z + (tail[j + 1] - z * (n - 1 - j)) / (rho * n)
    return float(np.min(vals))


@dataclass(frozen=True, eq=False)
class SaaResult:
    value: float
    theta: float
    x: np.ndarray | None
    status: str


def saa_cvar(samples_or_costs, rho: float, problem: TwoStageProblem | None = None, x=None,
             optimize_x: bool = False) -> SaaResult:
    """Empirical CVaR at level rho as an LP.

    Pass a cost vector alone, or a problem whose samples are scenarios.
    With ``optimize_x`` the first stage is chosen jointly (objective c'x + CVaR).
    """
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    if problem is None:
        costs = np.asarray(samples_or_costs, dtype=float).reshape(-1)
        if costs.size == 0:
            raise ValueError("need at least one sample")
        n = costs.size
        c = np.concatenate([[1.0], np.full(n, 1.0 / (rho * n))])
        A = np.hstack([-np.ones((n, 1)), -np.eye(n)])
        res = linprog(c, A_ub=A, b_ub=-costs, bounds=[(None, None)] + [(0, None)] * n, method="highs")
        if res.status != 0:
            raise BackendError(res.message)
        return SaaResult(float(res.fun), float(res.x[0]), None, "Optimal")

    p = problem
    samples = p.samples if samples_or_costs is None else np.atleast_2d(np.asarray(samples_or_costs, float))
    rec = p.recourse
    n, N1, N2, M = samples.shape[0], p.N1, rec.N2, rec.M
    if n == 0:
        raise ValueError("need at least one sample")
    if not optimize_x:
        xv = np.asarray(x, dtype=float)
        costs = [recourse_value(p, xv, xi) for xi in samples]
        out = saa_cvar(costs, rho)
        return SaaResult(out.value + float(p.c @ xv) if N1 else out.value, out.theta, xv, out.status)
    # variables: x (N1), theta, y_i (N2 each), u_i (n)
    nv = N1 + 1 + n * N2 + n
    yoff, uoff = N1 + 1, N1 + 1 + n * N2
    c = np.zeros(nv)
    c[:N1] = p.c
    c[N1] = 1.0
    c[uoff:] = 1.0 / (rho * n)
    A_rows, b_rows = [], []
    for i, xi in enumerate(samples):
        # T(x) xi + h(x) <= W y_i, affine in x
        row = np.zeros((M, nv))
        for k in range(N1):
            row[:, k] = rec.T_slopes[k] @ xi + rec.H[:, k]
        row[:, yoff + i * N2: yoff + (i + 1) * N2] = -rec.W
        A_rows.append(row)
        b_rows.append(-(rec.T0 @ xi + rec.h0))
        # cost_i' y_i - theta <= u_i
        row = np.zeros((1, nv))
        row[0, yoff + i * N2: yoff + (i + 1) * N2] = rec.cost(xi)
        row[0, N1] = -1.0
        row[0, uoff + i] = -1.0
        A_rows.append(row)
        b_rows.append(np.zeros(1))
    if p.X.A.shape[0]:
        A_rows.append(np.hstack([p.X.A, np.zeros((p.X.A.shape[0], nv - N1))]))
        b_rows.append(p.X.b)
    bounds = p.X.bounds() + [(None, None)] + [(None, None)] * (n * N2) + [(0, None)] * n
    res = linprog(c, A_ub=np.vstack(A_rows), b_ub=np.concatenate(b_rows), bounds=bounds, method="highs")
    if res.status != 0:
        return SaaResult(math.nan, math.nan, None, {2: "PrimalInfeasible", 3: "DualInfeasible"}.get(res.status, "NumericalTrouble"))
    return SaaResult(float(res.fun), float(res.x[N1]), res.x[:N1].copy(), "Optimal")


# --------------------------------------------------------------------------
# decision rules


def _lin_forms(support: SupportPolytope) -> list[np.ndarray]:
    """Coefficient vectors a_j with a_j'(1, xi) >= 0 describing the support."""
    K = support.K
    forms = [np.concatenate([[support.t[j]], -support.S[j]]) for j in range(support.J)]
    if support.nonnegative:
        forms += [np.concatenate([[0.0], np.eye(K)[k]]) for k in range(K)]
    return forms


def _sym_vec(mat: np.ndarray) -> np.ndarray:
    return (0.5 * (mat + mat.T)).ravel(order="F")


def _certify(b: ProgramBuilder, form: Affine, forms: list, quadratic: bool, tag: str) -> None:
    """Add a sufficient condition for zeta' F zeta >= 0 on the support, zeta = (1, xi).

    F - sum_j sigma_j sym(e0 a_j') - sum_{j<=j'} tau_jj' sym(a_j a_j'') must be PSD.
    """
    k1 = int(round(math.sqrt(form.size)))
    e0 = np.zeros(k1)
    e0[0] = 1.0
    lin = np.column_stack([_sym_vec(np.outer(e0, a)) for a in forms]) if forms else np.zeros((k1 * k1, 0))
    expr = form
    if forms:
        sigma = b.variable(f"{tag}:sigma", len(forms))
        b.add_nonneg(sigma)
        expr = expr - lin @ sigma
    if quadratic and forms:
        pairs = [(j, jj) for j in range(len(forms)) for jj in range(j, len(forms))]
        prod = np.column_stack([_sym_vec(np.outer(forms[j], forms[jj])) for j, jj in pairs])
        tau = b.variable(f"{tag}:tau", len(pairs))
        b.add_nonneg(tau)
        expr = expr - prod @ tau
    b.add_psd(expr, k1, tag=tag)


@dataclass(frozen=True, eq=False)
class DecisionRuleResult:
    value: float
    status: SolveStatus
    degree: str
    provenance: Provenance


def decision_rule_bound(r: SumMaxRecourse | TwoStageProblem, samples=None, epsilon: float | None = None,
                        degree: str = "quadratic", x=None,
                        settings: SolverSettings | None = None) -> DecisionRuleResult:
    """Upper bound from restricting the recourse to affine or quadratic rules in xi.

    Only cost vectors that do not depend on xi (Q = 0) are supported.
    """
    if degree not in ("affine", "quadratic"):
        raise ValueError("degree must be 'affine' or 'quadratic'")
    if isinstance(r, SumMaxRecourse):
        p = r.to_problem(samples, epsilon)
    else:
        p = r if samples is None else r.with_samples(samples)
        if epsilon is not None:
            p = p.with_radius(epsilon)
    if not p.epsilon > 0:
        raise ValueError("epsilon must be positive")
    if p.metric.order != 2:
        raise ValueError("decision-rule bounds use the type-2 Euclidean metric")
    rec = p.recourse
    if np.any(rec.Q):
        raise ValueError("decision-rule bounds need Q = 0")
    x = np.zeros(p.N1) if x is None else np.asarray(x, dtype=float)
    T, h = rec.T(x), rec.h(x)
    K, N2, M = p.K, rec.N2, rec.M
    k1 = K + 1
    forms = _lin_forms(p.support)
    quadratic = degree == "quadratic"

    b = ProgramBuilder(f"decision-rule[{degree}]")
    # y_n(xi) = zeta' Y_n zeta, stored as full k1 x k1 column-major vectors
    if quadratic:
        mask = np.ones((k1, k1))
    else:
        mask = np.zeros((k1, k1))
        mask[0, :] = mask[:, 0] = 1.0
    free = np.flatnonzero(np.triu(mask).ravel(order="F"))
    # map free upper-triangle entries to the symmetric full matrix
    rows, cols = [], []
    for col, idx in enumerate(free):
        rr, cc = idx % k1, idx // k1
        rows.append(rr + cc * k1)
        cols.append(col)
        if rr != cc:
            rows.append(cc + rr * k1)
            cols.append(col)
    spread = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(k1 * k1, free.size))
    Y = [b.variable(f"Y[{n}]", free.size).lmul(spread) for n in range(N2)]
    for m in range(M):
        form = Affine.zeros(k1 * k1)
        for n in range(N2):
            if rec.W[m, n]:
                form = form + rec.W[m, n] * Y[n]
        const = np.zeros((k1, k1))
        const[0, 0] = h[m]
        const[0, 1:] = const[1:, 0] = 0.5 * T[m]
        form = form - const.ravel(order="F")
        _certify(b, form, forms, quadratic, tag=f"row[{m}]")
    lam = b.variable("lambda")
    b.add_nonneg(lam)
    s = b.variable("s", p.I)
    for i, xi in enumerate(p.samples):
        dist = np.zeros((k1, k1))
        dist[0, 0] = xi @ xi
        dist[0, 1:] = dist[1:, 0] = -xi
        dist[1:, 1:] = np.eye(K)
        e00 = np.zeros(k1 * k1)
        e00[0] = 1.0
        form = e00[:, None] @ s[i] + dist.ravel(order="F")[:, None] @ lam
        for n in range(N2):
            if rec.q[n]:
                form = form - rec.q[n] * Y[n]
        _certify(b, form, forms, quadratic, tag=f"sample[{i}]")
    b.minimize(p.epsilon ** 2 * lam + s.sum() / p.I + (float(p.c @ x) if p.N1 else 0.0))
    res = solve(b.build(), settings or SolverSettings(feas_tol=1e-9, gap_tol=1e-9, max_iter=400))
    value = res.primal_objective if res.ok else math.nan
    return DecisionRuleResult(value, res.status, degree,
                              Provenance("decision-rule", {"degree": degree, "forms": len(forms),
                                                           "backend": res.backend_status}))
