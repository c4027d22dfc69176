"""Multi-item CVaR newsvendor: policies, instance generation and the study.

Three policies are compared out of sample.  The Wasserstein policy solves
the type-2 ball program with C0 in place of the copositive cone, the
Chebyshev policy uses a mean/covariance ambiguity set, and SAA uses the
empirical distribution only.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.stats import random_correlation

from .conic import Affine, ConicProgram, ProgramBuilder, SolveStatus, solve
from .copositive import PSD_SETTINGS, BlockAssembler, _operators, add_c0_constraint, copositive_block
from .model import (BackendError, FirstStageSet, MetricConfig, RecourseData, SupportPolytope,
                    TwoStageProblem, extend)
from .oracles import empirical_cvar

SIGMA = 0.25
RIDGE = 1e-8
JITTER = 1e-10


def default_eps_grid(I: int) -> tuple:
    grid = set(np.logspace(-3, 1, 9).tolist())
    grid.add(1.0 / math.sqrt(I))
    return tuple(sorted(grid))


@dataclass(frozen=True)
class NewsvendorConfig:
    K: int = 3
    hold: tuple = ()
    short: tuple = ()
    budget: float = 30.0
    rho: float = 0.1
    I: int = 10
    trials: int = 20
    test_samples: int = 20000
    reference_samples: int = 20000
    cv_folds: int = 5
    eps_grid: tuple = ()
    gamma1_grid: tuple = (0.0, 0.5, 2.0)
    gamma2_grid: tuple = (0.0, 0.5, 2.0)
    seed: int = 0

    def __post_init__(self):
        hold = np.ones(self.K) if len(self.hold) == 0 else np.asarray(self.hold, dtype=float)
        short = 10.0 * np.ones(self.K) if len(self.short) == 0 else np.asarray(self.short, dtype=float)
        object.__setattr__(self, "hold", tuple(float(v) for v in hold))
        object.__setattr__(self, "short", tuple(float(v) for v in short))
        eps = default_eps_grid(self.I) if len(self.eps_grid) == 0 else self.eps_grid
        object.__setattr__(self, "eps_grid", tuple(float(e) for e in eps))
        object.__setattr__(self, "gamma1_grid", tuple(float(g) for g in self.gamma1_grid))
        object.__setattr__(self, "gamma2_grid", tuple(float(g) for g in self.gamma2_grid))
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if len(self.hold) != self.K or len(self.short) != self.K:
            raise ValueError("hold and short need K entries")
        if min(self.hold) <= 0 or min(self.short) <= 0:
            raise ValueError("holding and stock-out costs must be positive")
        if not self.budget > 0:
            raise ValueError("budget must be positive")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if self.cv_folds < 2 or self.I < self.cv_folds:
            raise ValueError("need at least two folds and one sample per fold")
        if min(self.trials, self.test_samples, self.reference_samples) < 1:
            raise ValueError("trials and sample counts must be positive")
        if min(self.eps_grid) <= 0:
            raise ValueError("Wasserstein radii must be positive")
        if min(self.gamma1_grid + self.gamma2_grid) < 0:
            raise ValueError("Chebyshev confidence parameters must be nonnegative")

    @property
    def b(self) -> np.ndarray:
        return np.array(self.hold)

    @property
    def s(self) -> np.ndarray:
        return np.array(self.short)

    @classmethod
    def from_dict(cls, doc: dict) -> "NewsvendorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})

    @classmethod
    def from_json(cls, path) -> "NewsvendorConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


# --------------------------------------------------------------------------
# demand distribution


@dataclass(frozen=True, eq=False)
class LognormalSpec:
    """xi = exp(chi) where chi has mean nu and second-moment matrix Sigma."""

    nu: np.ndarray
    Sigma: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        return self.Sigma - np.outer(self.nu, self.nu)

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def corr(self) -> np.ndarray:
        sd = self.sigma
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.covariance / np.outer(sd, sd)
        out[~np.isfinite(out)] = 0.0
        np.fill_diagonal(out, 1.0)
        return out

    def digest(self) -> str:
        blob = np.concatenate([self.nu, self.Sigma.ravel()]).astype("<f8").tobytes()
        return hashlib.sha256(blob).hexdigest()[:16]


def random_instance(rng: np.random.Generator, K: int) -> LognormalSpec:
    if K < 1:
        raise ValueError("K must be at least 1")
    nu = rng.uniform(0.0, 2.0, K)
    if K == 1:
        C = np.ones((1, 1))
    else:
        u = rng.uniform(0.0, 1.0, K)
        C = random_correlation.rvs(K * u / u.sum(), random_state=rng)
        C = 0.5 * (C + C.T)
        np.fill_diagonal(C, 1.0)
    sig = np.full(K, SIGMA)
    return LognormalSpec(nu, np.diag(sig) @ C @ np.diag(sig) + np.outer(nu, nu))


def _psd_root(cov: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    if w.min() < -JITTER * max(1.0, abs(w).max()):
        raise ValueError("covariance is not positive semidefinite")
    return V * np.sqrt(np.clip(w, 0.0, None))


def sample_lognormal(spec: LognormalSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    root = _psd_root(spec.covariance)
    z = rng.standard_normal((n, spec.nu.size))
    return np.exp(spec.nu + z @ root.T)


# --------------------------------------------------------------------------
# costs


def newsvendor_costs(x, xi, b, s) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    diff = np.atleast_2d(xi) - x
    return np.sum(np.maximum(-np.asarray(b) * diff, np.asarray(s) * diff), axis=1)


def out_of_sample_cvar(x, test_samples, rho: float, b, s) -> float:
    costs = newsvendor_costs(x, test_samples, b, s)
    if costs.size == 0:
        raise ValueError("test set is empty")
    return empirical_cvar(costs, rho)


def newsvendor_problem(cfg: NewsvendorConfig, samples, eps: float) -> TwoStageProblem:
    """The newsvendor as a generic two-stage instance (Q = 0, q = 1)."""
    K = cfg.K
    b, s = cfg.b, cfg.s
    rec = RecourseData(Q=np.zeros((K, K)), q=np.ones(K), W=np.vstack([np.eye(K), np.eye(K)]),
                       T0=np.vstack([-np.diag(b), np.diag(s)]), h0=np.zeros(2 * K),
                       H=np.vstack([np.diag(b), -np.diag(s)]))
    X = FirstStageSet(np.ones((1, K)), np.array([cfg.budget]), np.zeros(K), np.full(K, np.inf))
    return TwoStageProblem(c=np.zeros(K), X=X, recourse=rec, support=SupportPolytope.orthant(K),
                           samples=np.asarray(samples, dtype=float), metric=MetricConfig.euclidean(eps),
                           name="newsvendor")


def _order_quantities(builder: ProgramBuilder, cfg: NewsvendorConfig) -> Affine:
    x = builder.variable("x", cfg.K)
    builder.add_nonneg(x, tag="x>=0")
    builder.add_nonneg(cfg.budget - x.sum(), tag="budget")
    return x


# --------------------------------------------------------------------------
# Wasserstein policy


def build_newsvendor_wasserstein(cfg: NewsvendorConfig, samples, eps: float,
                                 delta: float = 0.0) -> ConicProgram:
    """CVaR newsvendor over the type-2 ball; ``delta`` adds delta*I to the middle block."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    p = newsvendor_problem(cfg, samples, eps)
    ext = extend(p)
    ops = _operators(ext)
    builder = ProgramBuilder(f"newsvendor-wasserstein[eps={eps:g}]")
    x = _order_quantities(builder, cfg)
    lam = builder.variable("lambda")
    builder.add_nonneg(lam, tag="lambda>=0")
    theta = builder.variable("theta")
    total = Affine.zeros(1)
    for i, xi in enumerate(p.samples):
        s_i = builder.variable(f"s[{i}]")
        builder.add_nonneg(s_i, tag=f"s[{i}]>=0")
        psi = builder.variable(f"psi[{i}]", ops.L)
        phi = builder.variable(f"phi[{i}]", ops.L)
        corner = s_i + theta - psi.dot(ext.q) - phi.dot(ext.q ** 2) + float(xi @ xi) * lam
        mat, k = copositive_block(ops, x, lam, corner, psi, phi, xi, delta)
        add_c0_constraint(builder, mat, k, tag=f"block[i={i}]")
        total = total + s_i
    builder.minimize(theta + (1.0 / cfg.rho) * (eps ** 2 * lam + total / p.I))
    return builder.build()


# --------------------------------------------------------------------------
# Chebyshev policy


@dataclass(frozen=True, eq=False)
class ChebyshevParams:
    """Moment estimates and confidence levels.

    ``trace_scale`` selects the second-moment weight in the objective:
    "set" uses (1 + gamma2) Sigma, consistent with the covariance bound of
    the ambiguity set, and "display" uses gamma2 Sigma.
    """

    mu: np.ndarray
    Sigma: np.ndarray
    gamma1: float = 0.0
    gamma2: float = 0.0
    trace_scale: str = "set"

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        Sig = np.asarray(self.Sigma, dtype=float).reshape(mu.size, mu.size)
        Sig = 0.5 * (Sig + Sig.T)
        if np.linalg.eigvalsh(Sig).min() < RIDGE:
            Sig = Sig + RIDGE * np.eye(mu.size)
        if np.linalg.eigvalsh(Sig).min() <= 0:
            raise ValueError("sample covariance is singular beyond the ridge")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", Sig)
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gamma1 and gamma2 must be nonnegative")
        if self.trace_scale not in ("set", "display"):
            raise ValueError("trace_scale is 'set' or 'display'")

    @classmethod
    def from_samples(cls, samples, gamma1: float = 0.0, gamma2: float = 0.0, **kw) -> "ChebyshevParams":
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        mu = samples.mean(axis=0)
        centered = samples - mu
        return cls(mu, centered.T @ centered / samples.shape[0], gamma1, gamma2, **kw)

    @property
    def second_moment_weight(self) -> np.ndarray:
        scale = 1.0 + self.gamma2 if self.trace_scale == "set" else self.gamma2
        return scale * self.Sigma + np.outer(self.mu, self.mu)


def _sym_matrix(builder: ProgramBuilder, name: str, k: int) -> Affine:
    """Column-major vec of a symmetric k x k matrix variable."""
    src, dst = [], []
    pos = 0
    for c in range(k):
        for r in range(c + 1):
            dst.append(r + c * k)
            src.append(pos)
            if r != c:
                dst.append(c + r * k)
                src.append(pos)
            pos += 1
    var = builder.variable(name, pos)
    return var.lmul(sp.csr_matrix((np.ones(len(src)), (dst, src)), shape=(k * k, pos)))


def build_newsvendor_chebyshev(cfg: NewsvendorConfig, params: ChebyshevParams) -> ConicProgram:
    K = cfg.K
    if params.mu.size != K:
        raise ValueError("moment estimates do not match K")
    p = newsvendor_problem(cfg, params.mu.reshape(1, -1), 1.0)
    ext = extend(p)
    ops = _operators(ext)
    builder = ProgramBuilder(f"newsvendor-chebyshev[g1={params.gamma1:g},g2={params.gamma2:g}]")
    x = _order_quantities(builder, cfg)
    theta = builder.variable("theta")
    s = builder.variable("s")
    m = builder.variable("m", K)
    M = _sym_matrix(builder, "M", K)
    builder.add_psd(M, K, tag="M psd")
    psi = builder.variable("psi", ops.L)
    phi = builder.variable("phi", ops.L)

    R = ops.R
    k = K + R + 1
    asm = BlockAssembler(k)
    asm.put(M, K, K, 0, 0)
    asm.put(-0.5 * (x.lmul(ops.T_slope) + ops.T_const) if x.size else Affine.constant(-0.5 * ops.T_const),
            K, R, 0, K)
    asm.put(0.5 * m, K, 1, 0, K + R)
    asm.put(phi.lmul(ops.MM_phi), R, R, K, K)
    asm.put(0.5 * (ops.W @ psi) - 0.5 * (ops.h_slope @ x + ops.h_const), R, 1, K, K + R)
    asm.put(s + theta - psi.sum() - phi.sum(), 1, 1, K + R, K + R)
    add_c0_constraint(builder, asm.expr, k, tag="block:recourse")

    small = BlockAssembler(K + 1)
    small.put(M, K, K, 0, 0)
    small.put(0.5 * m, K, 1, 0, K)
    small.put(s, 1, 1, K, K)
    add_c0_constraint(builder, small.expr, K + 1, tag="block:floor")

    mu = params.mu
    obj = s + params.second_moment_weight.ravel(order="F").reshape(1, -1) @ M + m.dot(mu)
    if params.gamma1 > 0:
        w, V = np.linalg.eigh(params.Sigma)
        root = (V * np.sqrt(w)) @ V.T
        # M mu = (mu' kron I) vec(M)
        m_mu = M.lmul(sp.csr_matrix(np.kron(mu.reshape(1, -1), np.eye(K))))
        t = builder.variable("t")
        builder.add_soc(Affine.vstack([t, root @ (m + 2.0 * m_mu)]), tag="mean ellipsoid")
        obj = obj + math.sqrt(params.gamma1) * t
    builder.minimize(theta + (1.0 / cfg.rho) * obj)
    return builder.build()


# --------------------------------------------------------------------------
# SAA


def solve_saa(cfg: NewsvendorConfig, samples) -> tuple[np.ndarray, float]:
    """Empirical CVaR minimizer over the budget set (sparse LP).

    Variables: x (K), theta, y (n*K), u (n).
    """
    xi = np.atleast_2d(np.asarray(samples, dtype=float))
    n, K = xi.shape
    b, s = cfg.b, cfg.s
    nv = K + 1 + n * K + n
    yoff, uoff = K + 1, K + 1 + n * K
    c = np.zeros(nv)
    c[K] = 1.0
    c[uoff:] = 1.0 / (cfg.rho * n)
    rows = np.arange(n * K)
    item = np.tile(np.arange(K), n)
    # b_k x_k - y_ik <= b_k xi_ik  and  -s_k x_k - y_ik <= -s_k xi_ik
    hold = sp.csr_matrix((np.concatenate([b[item], -np.ones(n * K)]),
                          (np.concatenate([rows, rows]), np.concatenate([item, yoff + rows]))), shape=(n * K, nv))
    short = sp.csr_matrix((np.concatenate([-s[item], -np.ones(n * K)]),
                           (np.concatenate([rows, rows]), np.concatenate([item, yoff + rows]))), shape=(n * K, nv))
    # sum_k y_ik - theta - u_i <= 0
    smp = np.repeat(np.arange(n), K)
    link = sp.csr_matrix((np.concatenate([np.ones(n * K), -np.ones(n), -np.ones(n)]),
                          (np.concatenate([smp, np.arange(n), np.arange(n)]),
                           np.concatenate([yoff + rows, np.full(n, K), uoff + np.arange(n)]))), shape=(n, nv))
    budget = sp.csr_matrix((np.ones(K), (np.zeros(K, int), np.arange(K))), shape=(1, nv))
    A = sp.vstack([hold, short, link, budget]).tocsr()
    rhs = np.concatenate([b[item] * xi.ravel(), -s[item] * xi.ravel(), np.zeros(n), [cfg.budget]])
    bounds = [(0, None)] * K + [(None, None)] + [(None, None)] * (n * K) + [(0, None)] * n
    res = linprog(c, A_ub=A, b_ub=rhs, bounds=bounds, method="highs")
    if res.status != 0:
        raise BackendError(f"SAA LP failed: {res.message}")
    return res.x[:K].copy(), float(res.fun)


# --------------------------------------------------------------------------
# fitting and cross-validation


@dataclass(frozen=True, eq=False)
class PolicyFit:
    x: np.ndarray
    value: float
    status: str


def fit_wasserstein(cfg: NewsvendorConfig, samples, eps: float) -> PolicyFit:
    res = solve(build_newsvendor_wasserstein(cfg, samples, eps), PSD_SETTINGS)
    if not res.ok:
        return PolicyFit(np.full(cfg.K, np.nan), math.nan, str(res.status))
    return PolicyFit(np.clip(res.value("x"), 0.0, None), res.primal_objective, str(res.status))


def fit_chebyshev(cfg: NewsvendorConfig, samples, gamma1: float, gamma2: float) -> PolicyFit:
    params = ChebyshevParams.from_samples(samples, gamma1, gamma2)
    res = solve(build_newsvendor_chebyshev(cfg, params), PSD_SETTINGS)
    if not res.ok:
        return PolicyFit(np.full(cfg.K, np.nan), math.nan, str(res.status))
    return PolicyFit(np.clip(res.value("x"), 0.0, None), res.primal_objective, str(res.status))


def _folds(I: int, n_folds: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(I)
    folds = np.array_split(order, n_folds)
    if any(f.size < 1 for f in folds):
        raise ValueError("a fold would be empty")
    return folds


def cross_validate(cfg: NewsvendorConfig, samples, candidates: Sequence, fit: Callable,
                   rng: np.random.Generator):
    """Candidate with the smallest mean out-of-fold CVaR; ties go to the earliest."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(candidates) == 0:
        raise ValueError("candidate grid is empty")
    if len(candidates) == 1:
        return candidates[0]
    folds = _folds(samples.shape[0], cfg.cv_folds, rng)
    best, best_score = None, math.inf
    for cand in candidates:
        scores = []
        for j, test in enumerate(folds):
            train = np.concatenate([f for jj, f in enumerate(folds) if jj != j])
            pol = fit(samples[np.sort(train)], cand)
            if not np.all(np.isfinite(pol.x)):
                scores.append(math.inf)
                break
            scores.append(out_of_sample_cvar(pol.x, samples[test], cfg.rho, cfg.b, cfg.s))
        score = float(np.mean(scores))
        if best is None or score < best_score:
            best, best_score = cand, score
    return best if best is not None else candidates[0]


def cross_validate_epsilon(cfg: NewsvendorConfig, samples, eps_grid: Sequence[float] | None = None,
                           rng: np.random.Generator | None = None) -> float:
    grid = sorted(cfg.eps_grid if eps_grid is None else eps_grid)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    return float(cross_validate(cfg, samples, grid, lambda tr, e: fit_wasserstein(cfg, tr, e), rng))


def cross_validate_gamma(cfg: NewsvendorConfig, samples, rng: np.random.Generator | None = None) -> tuple:
    grid = [(g1, g2) for g1 in sorted(cfg.gamma1_grid) for g2 in sorted(cfg.gamma2_grid)]
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    return cross_validate(cfg, samples, grid, lambda tr, g: fit_chebyshev(cfg, tr, *g), rng)


# --------------------------------------------------------------------------
# study


POLICIES = ("wasserstein", "chebyshev", "saa")


@dataclass(frozen=True)
class StudyResult:
    trial: int
    seed: int
    digest: str
    status: str
    eps: float
    gamma1: float
    gamma2: float
    in_sample: dict
    out_of_sample: dict
    improvement: dict
    optimality_gap: dict
    times: dict = field(compare=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, trial]))


def run_trial(cfg: NewsvendorConfig, trial: int) -> StudyResult:
    rng = _trial_rng(cfg.seed, trial)
    spec = random_instance(rng, cfg.K)
    train = sample_lognormal(spec, cfg.I, rng)
    test = sample_lognormal(spec, cfg.test_samples, rng)
    reference = sample_lognormal(spec, cfg.reference_samples, rng)
    cv_rng = np.random.default_rng(rng.integers(2 ** 63))
    times, xs, ins = {}, {}, {}
    eps = g1 = g2 = math.nan
    status = "ok"
    try:
        t0 = time.perf_counter()
        eps = cross_validate_epsilon(cfg, train, rng=np.random.default_rng(cv_rng.integers(2 ** 63)))
        fit = fit_wasserstein(cfg, train, eps)
        times["wasserstein"] = time.perf_counter() - t0
        xs["wasserstein"], ins["wasserstein"] = fit.x, fit.value
        if not np.isfinite(fit.value):
            status = f"wasserstein:{fit.status}"

        t0 = time.perf_counter()
        g1, g2 = cross_validate_gamma(cfg, train, rng=np.random.default_rng(cv_rng.integers(2 ** 63)))
        fit = fit_chebyshev(cfg, train, g1, g2)
        times["chebyshev"] = time.perf_counter() - t0
        xs["chebyshev"], ins["chebyshev"] = fit.x, fit.value
        if not np.isfinite(fit.value) and status == "ok":
            status = f"chebyshev:{fit.status}"

        t0 = time.perf_counter()
        xs["saa"], ins["saa"] = solve_saa(cfg, train)
        times["saa"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        x_ref, _ = solve_saa(cfg, reference)
        times["reference"] = time.perf_counter() - t0
    except (BackendError, ValueError, np.linalg.LinAlgError) as exc:
        status = f"error:{type(exc).__name__}"
        x_ref = None
    oos, imp, gap = {}, {}, {}
    if status == "ok":
        ref = out_of_sample_cvar(x_ref, test, cfg.rho, cfg.b, cfg.s)
        for pol in POLICIES:
            oos[pol] = out_of_sample_cvar(xs[pol], test, cfg.rho, cfg.b, cfg.s)
        for pol in POLICIES:
            imp[pol] = (oos["saa"] - oos[pol]) / abs(oos["saa"])
            gap[pol] = (oos[pol] - ref) / abs(ref)
    return StudyResult(trial, cfg.seed, spec.digest(), status, float(eps), float(g1), float(g2),
                       ins, oos, imp, gap, times)


def _workers(cfg: NewsvendorConfig) -> int:
    raw = os.environ.get("WASSDRO_THREADS", "")
    cap = int(raw) if raw.strip() else 1
    return max(1, min(cap, cfg.trials))


def run_newsvendor_study(cfg: NewsvendorConfig, workers: int | None = None) -> tuple[list, dict]:
    workers = _workers(cfg) if workers is None else max(1, workers)
    if workers == 1:
        results = [run_trial(cfg, t) for t in range(cfg.trials)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_trial, [cfg] * cfg.trials, range(cfg.trials)))
    results.sort(key=lambda r: r.trial)
    return results, summarize(results)


def quantile_summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"mean": math.nan, "q20": math.nan, "q80": math.nan}
    return {"mean": float(v.mean()), "q20": float(np.quantile(v, 0.2)), "q80": float(np.quantile(v, 0.8))}


def summarize(results: Sequence[StudyResult]) -> dict:
    good = [r for r in results if r.ok]
    out = {"trials": len(results), "excluded": len(results) - len(good)}
    for pol in POLICIES:
        out[f"improvement:{pol}"] = quantile_summary([r.improvement[pol] for r in good])
        out[f"gap:{pol}"] = quantile_summary([r.optimality_gap[pol] for r in good])
    return out


CSV_COLUMNS = ("trial", "seed", "digest", "status", "eps", "gamma1", "gamma2") + tuple(
    f"{kind}_{pol}" for kind in ("in_sample", "oos_cvar", "improvement", "gap") for pol in POLICIES)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def results_csv(results: Sequence[StudyResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        row = [r.trial, r.seed, r.digest, r.status, r.eps, r.gamma1, r.gamma2]
        for d in (r.in_sample, r.out_of_sample, r.improvement, r.optimality_gap):
            row += [float(d.get(pol, math.nan)) for pol in POLICIES]
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def timings_csv(results: Sequence[StudyResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    keys = POLICIES + ("reference",)
    w.writerow(("trial",) + tuple(f"seconds_{k}" for k in keys))
    for r in results:
        w.writerow([r.trial] + [f"{r.times.get(k, math.nan):.6f}" for k in keys])
    return buf.getvalue()


def quantile_dat(summary: dict, kind: str) -> str:
    lines = [f"# {kind}: policy mean q20 q80 over {summary['trials'] - summary['excluded']} trials"]
    for idx, pol in enumerate(POLICIES):
        q = summary[f"{kind}:{pol}"]
        lines.append(f"{idx} {pol} {q['mean']!r} {q['q20']!r} {q['q80']!r}")
    return "\n".join(lines) + "\n"


def write_study(results: Sequence[StudyResult], summary: dict, outdir) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": outdir / "newsvendor.csv",
        "timings": outdir / "newsvendor_timings.csv",
        "improvement": outdir / "newsvendor_improvement.dat",
        "gap": outdir / "newsvendor_gap.dat",
    }
    paths["csv"].write_text(results_csv(results), newline="")
    paths["timings"].write_text(timings_csv(results), newline="")
    paths["improvement"].write_text(quantile_dat(summary, "improvement"))
    paths["gap"].write_text(quantile_dat(summary, "gap"))
    return paths
