"""Problem data, validation, recourse regularity checks and extended recourse data."""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

MEMBERSHIP_TOL = 1e-9
STRICT_MARGIN = 1e-8


class BackendError(RuntimeError):
    """An auxiliary LP failed for reasons other than infeasibility."""


def _frozen(arr, shape=None, name="array") -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    if shape is not None:
        out = out.reshape(shape)
    out.setflags(write=False)
    return out


def _as_matrix(arr, ncols: int | None = None) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1 and arr.size == 0 and ncols is not None:
        return np.zeros((0, ncols))
    return np.atleast_2d(arr) if arr.ndim < 2 else arr


def _lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status not in (0, 2, 3):
        raise BackendError(f"HiGHS status {res.status}: {res.message}")
    return res


@dataclass(frozen=True, eq=False)
class SupportPolytope:
    """Support set {xi : S xi <= t} intersected with xi >= 0 when ``nonnegative``.

    ``nonnegative=False`` declares the unrestricted orthant-free set used by the
    exact LP path, where the support rows must be empty.
    """

    S: np.ndarray
    t: np.ndarray
    nonnegative: bool = True

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        S = np.asarray(self.S, dtype=float)
        if S.size == 0:
            k = S.shape[1] if S.ndim == 2 else 0
            S = np.zeros((0, k))
        S = np.atleast_2d(S)
        object.__setattr__(self, "S", _frozen(S))
        object.__setattr__(self, "t", _frozen(t))

    @classmethod
    def orthant(cls, K: int) -> "SupportPolytope":
        return cls(np.zeros((0, K)), np.zeros(0))

    @classmethod
    def free(cls, K: int) -> "SupportPolytope":
        return cls(np.zeros((0, K)), np.zeros(0), nonnegative=False)

    @classmethod
    def box(cls, lower, upper) -> "SupportPolytope":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        K = lower.size
        rows, rhs = [], []
        for k in range(K):
            if np.isfinite(upper[k]):
                rows.append(np.eye(K)[k])
                rhs.append(upper[k])
            if lower[k] > 0:
                rows.append(-np.eye(K)[k])
                rhs.append(-lower[k])
        S = np.array(rows).reshape(-1, K)
        return cls(S, np.array(rhs))

    @property
    def K(self) -> int:
        return self.S.shape[1]

    @property
    def J(self) -> int:
        return self.S.shape[0]

    def contains(self, xi, tol: float = MEMBERSHIP_TOL) -> bool:
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.K,):
            return False
        if self.nonnegative and np.any(xi < -tol):
            return False
        return bool(np.all(self.S @ xi <= self.t + tol))

    def _bounds(self):
        return [(0, None) if self.nonnegative else (None, None)] * self.K

    def is_empty(self) -> bool:
        if self.J == 0:
            return False
        res = _lp(np.zeros(self.K), A_ub=self.S, b_ub=self.t, bounds=self._bounds())
        return res.status == 2

    def feasible_point(self) -> np.ndarray | None:
        if self.J == 0:
            return np.zeros(self.K)
        res = _lp(np.zeros(self.K), A_ub=self.S, b_ub=self.t, bounds=self._bounds())
        return res.x if res.status == 0 else None

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinatewise min and max over the set (inf entries when unbounded)."""
        lo, hi = np.empty(self.K), np.empty(self.K)
        for k in range(self.K):
            for sign, out in ((1.0, lo), (-1.0, hi)):
                c = np.zeros(self.K)
                c[k] = sign
                res = _lp(c, A_ub=self.S if self.J else None, b_ub=self.t if self.J else None,
                          bounds=self._bounds())
                if res.status == 2:
                    raise ValueError("support set is empty")
                out[k] = sign * res.fun if res.status == 0 else sign * -np.inf
        return lo, hi

    def box_vertices(self, limit: int = 2 ** 12) -> np.ndarray | None:
        """Vertices when the set is an axis-aligned box, else None."""
        if not self.nonnegative:
            return None
        if self.J and np.any(np.count_nonzero(self.S, axis=1) != 1):
            return None
        try:
            lo, hi = self.bounding_box()
        except ValueError:
            return None
        if not np.all(np.isfinite(hi)) or 2 ** self.K > limit:
            return None
        return np.array(list(itertools.product(*zip(lo, hi))), dtype=float)


@dataclass(frozen=True, eq=False)
class RecourseData:
    """Second-stage data: Z(x, xi) = min (Q xi + q)'y s.t. T(x) xi + h(x) <= W y.

    T(x) = T0 + sum_n x_n T_slopes[n] and h(x) = h0 + H x.
    """

    Q: np.ndarray
    q: np.ndarray
    W: np.ndarray
    T0: np.ndarray
    h0: np.ndarray
    T_slopes: np.ndarray | None = None
    H: np.ndarray | None = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        T0 = np.atleast_2d(np.asarray(self.T0, dtype=float))
        M, K = T0.shape
        N2 = q.size
        Q = np.asarray(self.Q, dtype=float).reshape(N2, K) if N2 else np.zeros((0, K))
        W = np.asarray(self.W, dtype=float).reshape(M, N2)
        h0 = np.asarray(self.h0, dtype=float).reshape(-1)
        Ts = None if self.T_slopes is None else np.asarray(self.T_slopes, dtype=float)
        H = None if self.H is None else np.asarray(self.H, dtype=float)
        if Ts is not None:
            N1 = Ts.size // (M * K) if M * K else 0
        elif H is not None:
            N1 = H.size // M if M else 0
        else:
            N1 = 0
        Ts = np.zeros((N1, M, K)) if Ts is None else Ts.reshape(N1, M, K)
        H = np.zeros((M, N1)) if H is None else H.reshape(M, N1)
        for name, val in (("Q", Q), ("q", q), ("W", W), ("T0", T0), ("h0", h0), ("T_slopes", Ts), ("H", H)):
            object.__setattr__(self, name, _frozen(val))

    @property
    def M(self) -> int:
        return self.T0.shape[0]

    @property
    def K(self) -> int:
        return self.T0.shape[1]

    @property
    def N2(self) -> int:
        return self.q.size

    @property
    def N1(self) -> int:
        return self.H.shape[1]

    def T(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.N1 == 0:
            return np.array(self.T0)
        return self.T0 + np.tensordot(x, self.T_slopes, axes=1)

    def h(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.N1 == 0:
            return np.array(self.h0)
        return self.h0 + self.H @ x

    def cost(self, xi) -> np.ndarray:
        return self.Q @ np.asarray(xi, dtype=float) + self.q


@dataclass(frozen=True, eq=False)
class FirstStageSet:
    """X = {x : A x <= b, lower <= x <= upper}."""

    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        n = lower.size
        A = np.asarray(self.A, dtype=float)
        A = np.zeros((0, n)) if A.size == 0 else A.reshape(-1, n)
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "b", _frozen(np.asarray(self.b, dtype=float).reshape(-1)))
        object.__setattr__(self, "lower", _frozen(lower))
        object.__setattr__(self, "upper", _frozen(np.asarray(self.upper, dtype=float).reshape(-1)))

    @classmethod
    def free(cls, n: int) -> "FirstStageSet":
        return cls(np.zeros((0, n)), np.zeros(0), np.full(n, -np.inf), np.full(n, np.inf))

    @classmethod
    def point(cls, x) -> "FirstStageSet":
        x = np.asarray(x, dtype=float).reshape(-1)
        return cls(np.zeros((0, x.size)), np.zeros(0), x, x)

    @property
    def n(self) -> int:
        return self.lower.size

    def bounds(self):
        return [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
                for lo, hi in zip(self.lower, self.upper)]

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.A @ x <= self.b + tol) and np.all(x >= self.lower - tol)
                    and np.all(x <= self.upper + tol))

    def is_empty(self) -> bool:
        if self.n == 0:
            return False
        if np.any(self.lower > self.upper):
            return True
        res = _lp(np.zeros(self.n), A_ub=self.A if self.A.shape[0] else None,
                  b_ub=self.b if self.A.shape[0] else None, bounds=self.bounds())
        return res.status == 2


@dataclass(frozen=True)
class MetricConfig:
    """Transport cost d(xi, xi')^r.

    r = 2 uses the Euclidean norm.  r = 1 uses the asymmetric weighted norm
    sum_k max{w_plus * z_k, -w_minus * z_k} with z = xi - xi', whose dual norm
    is a weighted maximum (hence the tag "weighted-max").
    """

    radius: float
    order: int = 2
    norm: str = "euclidean"
    w_plus: float = 1.0
    w_minus: float = 1.0

    @classmethod
    def euclidean(cls, radius: float) -> "MetricConfig":
        return cls(radius=float(radius))

    @classmethod
    def weighted_max(cls, radius: float, w_plus: float = 1.0, w_minus: float = 1.0) -> "MetricConfig":
        return cls(radius=float(radius), order=1, norm="weighted-max", w_plus=w_plus, w_minus=w_minus)

    def problems(self) -> list[str]:
        out = []
        if self.order not in (1, 2):
            out.append(f"order {self.order} is not 1 or 2")
        if self.order == 2 and self.norm != "euclidean":
            out.append("order 2 requires the euclidean norm")
        if self.order == 1 and self.norm != "weighted-max":
            out.append("order 1 requires the weighted-max norm")
        if not np.isfinite(self.radius) or self.radius < 0:
            out.append("radius must be finite and nonnegative")
        if self.order == 1 and not (self.w_plus > 0 and self.w_minus > 0):
            out.append("weighted-max norm needs positive weights")
        return out

    def distance(self, a, b) -> np.ndarray:
        """Distance between rows of ``a`` and the point ``b`` (broadcasts)."""
        diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        if self.order == 2:
            return np.linalg.norm(diff, axis=-1)
        return np.sum(np.maximum(diff * self.w_plus, -diff * self.w_minus), axis=-1)


@dataclass(frozen=True, eq=False)
class TwoStageProblem:
    c: np.ndarray
    X: FirstStageSet
    recourse: RecourseData
    support: SupportPolytope
    samples: np.ndarray
    metric: MetricConfig
    name: str = ""

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples.reshape(-1, self.recourse.K)
        object.__setattr__(self, "c", _frozen(c))
        object.__setattr__(self, "samples", _frozen(samples))

    N1 = property(lambda self: self.c.size)
    N2 = property(lambda self: self.recourse.N2)
    M = property(lambda self: self.recourse.M)
    K = property(lambda self: self.recourse.K)
    J = property(lambda self: self.support.J)
    I = property(lambda self: self.samples.shape[0])
    epsilon = property(lambda self: self.metric.radius)

    def with_radius(self, radius: float) -> "TwoStageProblem":
        return replace(self, metric=replace(self.metric, radius=float(radius)))

    def with_samples(self, samples) -> "TwoStageProblem":
        return replace(self, samples=np.asarray(samples, dtype=float))

    def fix_first_stage(self, x) -> "TwoStageProblem":
        return replace(self, X=FirstStageSet.point(x))


@dataclass(frozen=True, eq=False)
class ExtendedData:
    """Recourse data augmented by the support rows; see :func:`extend`."""

    Q: np.ndarray
    q: np.ndarray
    W: np.ndarray
    T0: np.ndarray
    T_slopes: np.ndarray
    h0: np.ndarray
    H: np.ndarray

    @property
    def L(self) -> int:
        return self.q.size

    @property
    def R(self) -> int:
        return self.W.shape[0]

    def T(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        return self.T0 + np.tensordot(x, self.T_slopes, axes=1) if x.size else np.array(self.T0)

    def h(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        return self.h0 + self.H @ x if x.size else np.array(self.h0)


def extend(p: TwoStageProblem) -> ExtendedData:
    """Fold the support rows S xi <= t into the recourse as J extra slack variables."""
    rec, sup = p.recourse, p.support
    J, K, M, N2, N1 = sup.J, rec.K, rec.M, rec.N2, rec.N1
    W = np.zeros((M + J, N2 + J))
    W[:M, :N2] = rec.W
    W[M:, N2:] = -np.eye(J)
    Ts = np.zeros((N1, M + J, K))
    Ts[:, :M, :] = rec.T_slopes
    return ExtendedData(
        Q=_frozen(np.vstack([rec.Q, sup.S])),
        q=_frozen(np.concatenate([rec.q, -sup.t])),
        W=_frozen(W),
        T0=_frozen(np.vstack([rec.T0, np.zeros((J, K))])),
        T_slopes=_frozen(Ts),
        h0=_frozen(np.concatenate([rec.h0, np.zeros(J)])),
        H=_frozen(np.vstack([rec.H, np.zeros((J, N1))])),
    )


def check_complete_recourse(W) -> tuple[bool, np.ndarray | None]:
    """Decide whether some y has W y > 0 componentwise.

    Solves max z s.t. W y >= z, z <= 1, -1 <= y <= 1 and rescales the
    certificate to unit infinity norm.
    """
    W = _as_matrix(W)
    M, N2 = W.shape
    if M < 1:
        raise ValueError("W needs at least one row")
    if N2 == 0:
        return False, None
    c = np.zeros(N2 + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-W, np.ones((M, 1))])
    res = _lp(c, A_ub=A_ub, b_ub=np.zeros(M), bounds=[(-1, 1)] * N2 + [(None, 1)])
    if res.status != 0:
        raise BackendError(f"complete-recourse LP ended with status {res.status}")
    y = res.x[:N2]
    if -res.fun <= STRICT_MARGIN or not np.any(y):
        return False, None
    y = y / np.max(np.abs(y))
    if np.min(W @ y) < STRICT_MARGIN:
        return False, None
    return True, y


def _dual_feasible(W: np.ndarray, rhs: np.ndarray) -> bool:
    M = W.shape[0]
    res = _lp(np.zeros(M), A_eq=W.T, b_eq=rhs, bounds=[(0, None)] * M)
    return res.status == 0


def check_sufficiently_expensive(p: TwoStageProblem, points: Sequence | None = None,
                                 include_vertices: bool = False) -> list[bool]:
    """Pointwise test that {p >= 0 : W'p = Q xi + q} is nonempty.

    ``points`` defaults to the samples.  With ``Q = 0`` the answer does not
    depend on xi and one LP decides every point.
    """
    rec = p.recourse
    pts = p.samples if points is None else np.asarray(points, dtype=float).reshape(-1, rec.K)
    if include_vertices:
        verts = p.support.box_vertices()
        if verts is not None:
            pts = np.vstack([pts, verts])
    if not np.any(rec.Q):
        flag = _dual_feasible(rec.W, rec.q)
        return [flag] * max(len(pts), 1)
    if len(pts) == 0:
        raise ValueError("test points are required when Q is nonzero")
    if p.support.box_vertices() is None:
        lo_hi = None
        try:
            lo_hi = p.support.bounding_box()
        except ValueError:
            pass
        if lo_hi is None or not np.all(np.isfinite(lo_hi[1])):
            warnings.warn("pointwise checks cannot certify sufficiently expensive recourse "
                          "on an unbounded support with Q != 0", stacklevel=2)
    for xi in pts:
        if not p.support.contains(xi):
            raise ValueError(f"test point {xi} lies outside the support")
    return [_dual_feasible(rec.W, rec.cost(xi)) for xi in pts]


@dataclass(frozen=True)
class Finding:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.findings

    def codes(self) -> list[str]:
        return [f.code for f in self.findings]

    def __len__(self) -> int:
        return len(self.findings)

    def __iter__(self):
        return iter(self.findings)


class InvalidInstance(ValueError):
    def __init__(self, report: ValidationReport):
        self.report = report
        super().__init__("; ".join(str(f) for f in report.findings))


def validate(p: TwoStageProblem) -> ValidationReport:
    out: list[Finding] = []
    rec, sup = p.recourse, p.support
    K, M, N2, N1 = rec.K, rec.M, rec.N2, p.N1

    def dim(msg):
        out.append(Finding("dimension", msg))

    if K < 1:
        dim("K must be at least 1")
    if sup.K != K:
        dim(f"support has {sup.K} columns, recourse has K={K}")
    if sup.t.size != sup.J:
        dim(f"support has {sup.J} rows but t has {sup.t.size} entries")
    if rec.N1 != N1:
        dim(f"recourse slopes expect N1={rec.N1}, cost vector has {N1}")
    if p.X.n != N1:
        dim(f"first-stage set has {p.X.n} variables, cost vector has {N1}")
    if p.X.A.shape[0] != p.X.b.size or p.X.upper.size != p.X.n:
        dim("first-stage inequality data are inconsistent")
    if rec.h0.size != M:
        dim(f"h0 has {rec.h0.size} entries, expected M={M}")
    if rec.Q.shape != (N2, K):
        dim("Q does not have shape N2 x K")
    if p.samples.ndim != 2 or p.samples.shape[1] != K:
        dim(f"samples must be an I x {K} array")
    if p.samples.shape[0] < 1:
        out.append(Finding("no_samples", "at least one sample is required"))

    arrays = [p.c, p.samples, rec.Q, rec.q, rec.W, rec.T0, rec.h0, rec.T_slopes, rec.H, sup.S, sup.t,
              p.X.A, p.X.b]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        out.append(Finding("nonfinite", "instance data contain NaN or infinite entries"))
    for msg in p.metric.problems():
        out.append(Finding("metric", msg))
    if out:
        return ValidationReport(tuple(out))

    if sup.is_empty():
        out.append(Finding("empty_support", "the support set has no feasible point"))
    else:
        for i, xi in enumerate(p.samples):
            if not sup.contains(xi):
                out.append(Finding("sample_outside_support", f"sample {i} lies outside the support"))
    if p.X.is_empty():
        out.append(Finding("empty_first_stage", "the first-stage feasible set is empty"))
    return ValidationReport(tuple(out))


def require_valid(p: TwoStageProblem) -> None:
    report = validate(p)
    if not report.ok:
        raise InvalidInstance(report)
