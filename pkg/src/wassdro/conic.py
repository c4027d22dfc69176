"""Solver-agnostic conic program representation and the Clarabel adapter.

Programs are stored in the standard form

    minimize    c^T z
    subject to  A z + s = b,   s in K_1 x ... x K_m

with cones drawn from {zero, nonneg, second order, PSD triangle}.  PSD
blocks are vectorised column by column over the upper triangle with
off-diagonal entries scaled by sqrt(2), which is also Clarabel's layout.
"""
from __future__ import annotations

import enum
import functools
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

ZERO = "zero"
NONNEG = "nonneg"
SOC = "soc"
PSD = "psd"
_KINDS = (ZERO, NONNEG, SOC, PSD)
SQRT2 = math.sqrt(2.0)
SYM_TOL = 1e-12


class SolveStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    ITER_LIMIT = "IterLimit"
    NUMERICAL_TROUBLE = "NumericalTrouble"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Cone:
    """One cone block.  ``dim`` is the side length for PSD blocks."""

    kind: str
    dim: int
    tag: str = ""

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("cone dimension must be positive")
        if self.kind == SOC and self.dim < 2:
            raise ValueError("second-order cones need at least two rows")

    @property
    def size(self) -> int:
        if self.kind == PSD:
            return self.dim * (self.dim + 1) // 2
        return self.dim


def tri_size(k: int) -> int:
    return k * (k + 1) // 2


def svec(mat: np.ndarray) -> np.ndarray:
    """Scaled upper-triangle vectorisation of a symmetric matrix."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("svec needs a square matrix")
    k = mat.shape[0]
    if k and np.max(np.abs(mat - mat.T)) > SYM_TOL * max(1.0, np.max(np.abs(mat))):
        raise ValueError("svec needs a symmetric matrix")
    sym = 0.5 * (mat + mat.T)
    out = np.empty(tri_size(k))
    pos = 0
    for col in range(k):
        out[pos:pos + col] = SQRT2 * sym[:col, col]
        out[pos + col] = sym[col, col]
        pos += col + 1
    return out


def smat(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    k = int(round((math.sqrt(8 * vec.size + 1) - 1) / 2))
    if tri_size(k) != vec.size:
        raise ValueError(f"length {vec.size} is not a triangular number")
    out = np.empty((k, k))
    pos = 0
    for col in range(k):
        out[:col, col] = vec[pos:pos + col] / SQRT2
        out[col, :col] = out[:col, col]
        out[col, col] = vec[pos + col]
        pos += col + 1
    return out


@functools.lru_cache(maxsize=64)
def svec_operator(k: int) -> sp.csr_matrix:
    """Sparse map from column-major vec(B) to svec((B + B^T) / 2)."""
    rows, cols, vals = [], [], []
    pos = 0
    for c in range(k):
        for r in range(c + 1):
            if r == c:
                rows.append(pos)
                cols.append(r + c * k)
                vals.append(1.0)
            else:
                rows += [pos, pos]
                cols += [r + c * k, c + r * k]
                vals += [SQRT2 / 2, SQRT2 / 2]
            pos += 1
    op = sp.csr_matrix((vals, (rows, cols)), shape=(tri_size(k), k * k))
    return op


class Affine:
    """A vector of affine expressions ``mat @ z + const`` in the decision vector z.

    The column count of ``mat`` may be smaller than the final number of
    variables; missing columns are treated as zeros.
    """

    __slots__ = ("mat", "const")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, mat, const):
        self.mat = sp.csr_matrix(mat)
        self.const = np.asarray(const, dtype=float).reshape(-1)
        if self.mat.shape[0] != self.const.size:
            raise ValueError("row count and constant length differ")

    @classmethod
    def constant(cls, values) -> "Affine":
        values = np.atleast_1d(np.asarray(values, dtype=float)).reshape(-1)
        return cls(sp.csr_matrix((values.size, 0)), values)

    @classmethod
    def zeros(cls, size: int) -> "Affine":
        return cls.constant(np.zeros(size))

    @property
    def size(self) -> int:
        return self.const.size

    def __len__(self) -> int:
        return self.size

    def _widen(self, ncols: int) -> sp.csr_matrix:
        m = self.mat
        if m.shape[1] < ncols:
            m = sp.hstack([m, sp.csr_matrix((m.shape[0], ncols - m.shape[1]))], format="csr")
        return m

    @staticmethod
    def _lift(other) -> "Affine":
        return other if isinstance(other, Affine) else Affine.constant(other)

    def _combine(self, other, sign: float) -> "Affine":
        other = self._lift(other)
        a, b = self, other
        if b.size == 1 and a.size > 1:
            b = Affine(sp.vstack([b.mat] * a.size), np.repeat(b.const, a.size))
        elif a.size == 1 and b.size > 1:
            a = Affine(sp.vstack([a.mat] * b.size), np.repeat(a.const, b.size))
        if a.size != b.size:
            raise ValueError(f"size mismatch {a.size} vs {b.size}")
        n = max(a.mat.shape[1], b.mat.shape[1])
        return Affine(a._widen(n) + sign * b._widen(n), a.const + sign * b.const)

    def __add__(self, other):
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return (-self)._combine(other, 1.0)

    def __neg__(self):
        return Affine(-self.mat, -self.const)

    def __mul__(self, scalar):
        if isinstance(scalar, Affine):
            raise TypeError("products of affine expressions are not affine")
        scalar = np.asarray(scalar, dtype=float)
        if scalar.ndim == 0:
            return Affine(self.mat * float(scalar), self.const * float(scalar))
        if scalar.shape != (self.size,):
            raise ValueError("elementwise scaling needs a matching vector")
        return Affine(sp.diags(scalar) @ self.mat, scalar * self.const)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def __rmatmul__(self, left):
        if sp.issparse(left):
            left = sp.csr_matrix(left)
            return Affine(left @ self.mat, left @ self.const)
        left = np.atleast_2d(np.asarray(left, dtype=float))
        return Affine(sp.csr_matrix(left) @ self.mat, left @ self.const)

    def lmul(self, left) -> "Affine":
        """``left @ self``; use this form when ``left`` is a scipy sparse matrix."""
        return self.__rmatmul__(left)

    def __getitem__(self, idx):
        rows = np.arange(self.size)[idx]
        rows = np.atleast_1d(rows)
        return Affine(self.mat[rows], self.const[rows])

    def sum(self) -> "Affine":
        return Affine(sp.csr_matrix(self.mat.sum(axis=0)), [self.const.sum()])

    def dot(self, weights) -> "Affine":
        weights = np.asarray(weights, dtype=float).reshape(1, -1)
        return weights @ self

    def is_constant(self) -> bool:
        m = self.mat.copy()
        m.eliminate_zeros()
        return m.nnz == 0

    def value(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self._widen(z.size) @ z + self.const

    @staticmethod
    def vstack(parts: Sequence) -> "Affine":
        parts = [Affine._lift(p) for p in parts]
        n = max(p.mat.shape[1] for p in parts)
        return Affine(sp.vstack([p._widen(n) for p in parts], format="csr"),
                      np.concatenate([p.const for p in parts]))

    def __repr__(self) -> str:
        return f"Affine(size={self.size}, nnz={self.mat.nnz})"


@dataclass(frozen=True)
class VarBlock:
    name: str
    start: int
    size: int

    @property
    def slice(self) -> slice:
        return slice(self.start, self.start + self.size)


@dataclass(frozen=True, eq=False)
class ConicProgram:
    """Immutable standard-form conic program with a name table."""

    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: tuple
    variables: tuple = ()
    name: str = ""
    objective_offset: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        A = sp.csc_matrix(self.A, dtype=float)
        if A.shape != (b.size, c.size):
            raise ValueError(f"A has shape {A.shape}, expected {(b.size, c.size)}")
        rows = sum(cone.size for cone in self.cones)
        if rows != b.size:
            raise ValueError(f"cones cover {rows} rows but b has {b.size}")
        for arr in (c, b, A.data):
            if not np.all(np.isfinite(arr)):
                raise ValueError("conic program data must be finite")
        for arr in (c, b):
            arr.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "cones", tuple(self.cones))
        object.__setattr__(self, "variables", tuple(self.variables))

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size

    def var(self, name: str) -> VarBlock:
        for block in self.variables:
            if block.name == name:
                return block
        raise KeyError(name)

    def value_of(self, z: np.ndarray, name: str) -> np.ndarray:
        return np.asarray(z)[self.var(name).slice]

    def cone_rows(self) -> list:
        """(cone, row slice) pairs in order."""
        out, pos = [], 0
        for cone in self.cones:
            out.append((cone, slice(pos, pos + cone.size)))
            pos += cone.size
        return out

    def cone_counts(self) -> dict:
        counts = {k: 0 for k in _KINDS}
        for cone in self.cones:
            counts[cone.kind] += 1
        return counts


class ProgramBuilder:
    """Incrementally assembles a :class:`ConicProgram` from affine expressions."""

    def __init__(self, name: str = ""):
        self.name = name
        self._n = 0
        self._vars: list[VarBlock] = []
        self._rows: list[tuple[Cone, Affine]] = []
        self._objective = Affine.zeros(1)

    @property
    def num_vars(self) -> int:
        return self._n

    def variable(self, name: str, size: int = 1) -> Affine:
        if any(v.name == name for v in self._vars):
            raise ValueError(f"duplicate variable name {name!r}")
        start = self._n
        self._n += size
        self._vars.append(VarBlock(name, start, size))
        mat = sp.csr_matrix((np.ones(size), (np.arange(size), np.arange(start, start + size))),
                            shape=(size, self._n))
        return Affine(mat, np.zeros(size))

    def add_zero(self, expr: Affine, tag: str = "") -> None:
        """expr == 0"""
        expr = Affine._lift(expr)
        if expr.size:
            self._rows.append((Cone(ZERO, expr.size, tag), expr))

    def add_nonneg(self, expr: Affine, tag: str = "") -> None:
        """expr >= 0"""
        expr = Affine._lift(expr)
        if expr.size:
            self._rows.append((Cone(NONNEG, expr.size, tag), expr))

    def add_soc(self, expr: Affine, tag: str = "") -> None:
        """expr[0] >= ||expr[1:]||_2"""
        self._rows.append((Cone(SOC, expr.size, tag), expr))

    def add_psd(self, vec_expr: Affine, k: int, tag: str = "") -> None:
        """Column-major vec of a k x k matrix expression, symmetrised, is PSD."""
        if vec_expr.size != k * k:
            raise ValueError("PSD expression must have k*k entries")
        self._rows.append((Cone(PSD, k, tag), vec_expr.lmul(svec_operator(k))))

    def minimize(self, expr: Affine) -> None:
        expr = Affine._lift(expr)
        if expr.size != 1:
            raise ValueError("objective must be scalar")
        self._objective = expr

    def build(self) -> ConicProgram:
        n = self._n
        cones = [cone for cone, _ in self._rows]
        if self._rows:
            stacked = Affine.vstack([expr for _, expr in self._rows])
            A = -stacked._widen(n)
            b = stacked.const
        else:
            A = sp.csr_matrix((0, n))
            b = np.zeros(0)
        c = self._objective._widen(n).toarray().reshape(-1)
        return ConicProgram(c=c, A=A, b=b, cones=tuple(cones), variables=tuple(self._vars),
                            name=self.name, objective_offset=float(self._objective.const[0]))


@dataclass(frozen=True)
class SolverSettings:
    """Tolerances handed to the backend."""

    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    time_limit: float = math.inf
    verbose: bool = False
    accept_reduced: bool = True


@dataclass(frozen=True, eq=False)
class SolveResult:
    status: SolveStatus
    primal_objective: float
    dual_objective: float
    z: np.ndarray
    s: np.ndarray
    y: np.ndarray
    iterations: int
    solve_time: float
    primal_residual: float
    dual_residual: float
    backend_status: str
    reduced_accuracy: bool = False
    program: ConicProgram | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.OPTIMAL

    @property
    def gap(self) -> float:
        return abs(self.primal_objective - self.dual_objective)

    def value(self, name: str) -> np.ndarray:
        if self.program is None:
            raise ValueError("result is not linked to a program")
        return self.program.value_of(self.z, name)


def _clarabel_cones(cones: Iterable[Cone]):
    import clarabel

    out = []
    for cone in cones:
        if cone.kind == ZERO:
            out.append(clarabel.ZeroConeT(cone.size))
        elif cone.kind == NONNEG:
            out.append(clarabel.NonnegativeConeT(cone.size))
        elif cone.kind == SOC:
            out.append(clarabel.SecondOrderConeT(cone.size))
        else:
            out.append(clarabel.PSDTriangleConeT(cone.dim))
    return out


def _trivial_infeasibility(prog: ConicProgram, tol: float) -> bool:
    """A constant row that violates its cone is its own Farkas certificate."""
    A = prog.A.tocsr()
    empty = np.diff(A.indptr) == 0
    for cone, rows in prog.cone_rows():
        if cone.kind not in (ZERO, NONNEG):
            continue
        idx = np.arange(rows.start, rows.stop)[empty[rows]]
        vals = prog.b[idx]
        if cone.kind == ZERO and np.any(np.abs(vals) > tol):
            return True
        if cone.kind == NONNEG and np.any(vals < -tol):
            return True
    return False


def solve(prog: ConicProgram, settings: SolverSettings | None = None) -> SolveResult:
    """Solve with Clarabel and map its status onto :class:`SolveStatus`."""
    import clarabel

    settings = settings or SolverSettings()
    nan = float("nan")
    if _trivial_infeasibility(prog, settings.feas_tol):
        return SolveResult(SolveStatus.PRIMAL_INFEASIBLE, nan, nan, np.full(prog.n, nan),
                           np.full(prog.m, nan), np.full(prog.m, nan), 0, 0.0, nan, nan,
                           "ConstantRowInfeasible", program=prog)

    opts = clarabel.DefaultSettings()
    opts.verbose = settings.verbose
    opts.max_iter = settings.max_iter
    opts.tol_feas = settings.feas_tol
    opts.tol_gap_abs = settings.gap_tol
    opts.tol_gap_rel = settings.gap_tol
    if math.isfinite(settings.time_limit):
        opts.time_limit = settings.time_limit
    P = sp.csc_matrix((prog.n, prog.n))
    start = time.perf_counter()
    solver = clarabel.DefaultSolver(P, prog.c, prog.A, prog.b, _clarabel_cones(prog.cones), opts)
    sol = solver.solve()
    elapsed = time.perf_counter() - start

    backend = str(sol.status).split(".")[-1]
    reduced = backend.startswith("Almost")
    mapping = {
        "Solved": SolveStatus.OPTIMAL,
        "PrimalInfeasible": SolveStatus.PRIMAL_INFEASIBLE,
        "DualInfeasible": SolveStatus.DUAL_INFEASIBLE,
        "MaxIterations": SolveStatus.ITER_LIMIT,
        "MaxTime": SolveStatus.ITER_LIMIT,
    }
    if settings.accept_reduced:
        mapping.update({
            "AlmostSolved": SolveStatus.OPTIMAL,
            "AlmostPrimalInfeasible": SolveStatus.PRIMAL_INFEASIBLE,
            "AlmostDualInfeasible": SolveStatus.DUAL_INFEASIBLE,
        })
    status = mapping.get(backend, SolveStatus.NUMERICAL_TROUBLE)
    off = prog.objective_offset
    return SolveResult(
        status=status,
        primal_objective=float(sol.obj_val) + off,
        dual_objective=float(sol.obj_val_dual) + off,
        z=np.asarray(sol.x, dtype=float),
        s=np.asarray(sol.s, dtype=float),
        y=np.asarray(sol.z, dtype=float),
        iterations=int(sol.iterations),
        solve_time=elapsed,
        primal_residual=float(sol.r_prim),
        dual_residual=float(sol.r_dual),
        backend_status=backend,
        reduced_accuracy=reduced,
        program=prog,
    )
