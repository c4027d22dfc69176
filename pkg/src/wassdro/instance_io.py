"""JSON instance files.

Matrices are dense and row-major; infinite first-stage bounds are written
as ``null``.  NaN and Infinity literals are rejected.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .model import FirstStageSet, MetricConfig, RecourseData, SupportPolytope, TwoStageProblem


class InstanceFormatError(ValueError):
    pass


def schema() -> dict:
    text = resources.files("wassdro").joinpath("data/instance.schema.json").read_text()
    return json.loads(text)


def _reject_constant(token: str):
    raise InstanceFormatError(f"non-finite literal {token} is not allowed")


def _matrix(rows, nrows: int, ncols: int, what: str) -> np.ndarray:
    arr = np.array(rows, dtype=float) if len(rows) else np.zeros((0, ncols))
    if arr.size == 0:
        arr = arr.reshape(0, ncols) if nrows == 0 else arr
    if arr.shape != (nrows, ncols):
        raise InstanceFormatError(f"{what} has shape {arr.shape}, expected {(nrows, ncols)}")
    return arr


def _vector(vals, n: int, what: str) -> np.ndarray:
    arr = np.array(vals, dtype=float).reshape(-1)
    if arr.size != n:
        raise InstanceFormatError(f"{what} has length {arr.size}, expected {n}")
    return arr


def _bounds(vals, n: int, default: float, what: str) -> np.ndarray:
    if vals is None:
        return np.full(n, default)
    if len(vals) != n:
        raise InstanceFormatError(f"{what} has length {len(vals)}, expected {n}")
    return np.array([default if v is None else float(v) for v in vals])


def problem_from_dict(doc: dict) -> TwoStageProblem:
    jsonschema.validate(doc, schema())
    d = doc["dimensions"]
    N1, N2, M, K, J, I = (d[k] for k in ("N1", "N2", "M", "K", "J", "I"))
    rec = doc["recourse"]
    slopes = rec.get("T_slopes")
    T_slopes = np.zeros((N1, M, K)) if not slopes else np.array(slopes, dtype=float)
    if T_slopes.shape != (N1, M, K):
        raise InstanceFormatError(f"T_slopes has shape {T_slopes.shape}, expected {(N1, M, K)}")
    recourse = RecourseData(
        Q=_matrix(rec["Q"], N2, K, "Q"), q=_vector(rec["q"], N2, "q"),
        W=_matrix(rec["W"], M, N2, "W"), T0=_matrix(rec["T0"], M, K, "T0"),
        h0=_vector(rec["h0"], M, "h0"), T_slopes=T_slopes,
        H=_matrix(rec.get("H", []), M, N1, "H") if N1 else np.zeros((M, 0)))
    fs = doc.get("first_stage", {})
    A = fs.get("A", [])
    X = FirstStageSet(A=_matrix(A, len(A), N1, "first_stage.A") if A else np.zeros((0, N1)),
                      b=_vector(fs.get("b", []), len(A), "first_stage.b"),
                      lower=_bounds(fs.get("lower"), N1, -np.inf, "first_stage.lower"),
                      upper=_bounds(fs.get("upper"), N1, np.inf, "first_stage.upper"))
    sup = doc["support"]
    support = SupportPolytope(S=_matrix(sup["S"], J, K, "S"), t=_vector(sup["t"], J, "t"),
                              nonnegative=sup.get("nonnegative", True))
    m = doc["metric"]
    order = m.get("order", 2)
    metric = MetricConfig(radius=float(m["radius"]), order=order,
                          norm=m.get("norm", "euclidean" if order == 2 else "weighted-max"),
                          w_plus=float(m.get("w_plus", 1.0)), w_minus=float(m.get("w_minus", 1.0)))
    return TwoStageProblem(c=_vector(doc["c"], N1, "c"), X=X, recourse=recourse, support=support,
                           samples=_matrix(doc["samples"], I, K, "samples"), metric=metric,
                           name=doc.get("name", ""))


def loads(text: str) -> TwoStageProblem:
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(str(exc)) from None
    return problem_from_dict(doc)


def load(path) -> TwoStageProblem:
    return loads(Path(path).read_text())


def _finite_or_none(arr) -> list:
    return [float(v) if np.isfinite(v) else None for v in arr]


def problem_to_dict(p: TwoStageProblem) -> dict:
    rec, sup, X = p.recourse, p.support, p.X
    doc = {
        "name": p.name,
        "dimensions": {"N1": p.N1, "N2": p.N2, "M": p.M, "K": p.K, "J": p.J, "I": p.I},
        "c": p.c.tolist(),
        "first_stage": {"A": X.A.tolist(), "b": X.b.tolist(), "lower": _finite_or_none(X.lower),
                        "upper": _finite_or_none(X.upper)},
        "recourse": {"Q": rec.Q.tolist(), "q": rec.q.tolist(), "W": rec.W.tolist(), "T0": rec.T0.tolist(),
                     "T_slopes": rec.T_slopes.tolist(), "h0": rec.h0.tolist(), "H": rec.H.tolist()},
        "support": {"S": sup.S.tolist(), "t": sup.t.tolist(), "nonnegative": bool(sup.nonnegative)},
        "samples": p.samples.tolist(),
        "metric": {"order": p.metric.order, "norm": p.metric.norm, "radius": p.metric.radius,
                   "w_plus": p.metric.w_plus, "w_minus": p.metric.w_minus},
    }
    return doc


def dumps(p: TwoStageProblem) -> str:
    return json.dumps(problem_to_dict(p), indent=1, allow_nan=False) + "\n"


def dump(p: TwoStageProblem, path) -> None:
    Path(path).write_text(dumps(p))
