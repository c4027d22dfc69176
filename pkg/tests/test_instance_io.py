import json

import numpy as np
import pytest

from wassdro import instance_io
from wassdro.instance_io import InstanceFormatError, dumps, loads


def _assert_same(p, q):
    for a, b in [(p.c, q.c), (p.samples, q.samples), (p.recourse.Q, q.recourse.Q), (p.recourse.q, q.recourse.q),
                 (p.recourse.W, q.recourse.W), (p.recourse.T0, q.recourse.T0), (p.recourse.h0, q.recourse.h0),
                 (p.support.S, q.support.S), (p.support.t, q.support.t)]:
        np.testing.assert_array_equal(a, b)
    assert p.epsilon == q.epsilon


def test_round_trip(gap_instance):
    _assert_same(gap_instance, loads(dumps(gap_instance)))


def test_round_trip_through_file(tmp_path, gap_instance):
    path = tmp_path / "inst.json"
    instance_io.dump(gap_instance, path)
    _assert_same(gap_instance, instance_io.load(path))


def test_examples_load_and_round_trip():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "examples"
    files = sorted(root.rglob("*.json")) if root.exists() else []
    for f in files:
        try:
            p = instance_io.load(f)
        except Exception:
            continue
        _assert_same(p, loads(dumps(p)))


def test_nan_literal_is_rejected(gap_instance):
    text = dumps(gap_instance)
    doc = json.loads(text)
    doc["samples"][0][0] = "__NAN__"
    bad = json.dumps(doc).replace('"__NAN__"', "NaN")
    with pytest.raises((InstanceFormatError, ValueError)):
        loads(bad)


def test_shape_mismatch_is_rejected(gap_instance):
    doc = json.loads(dumps(gap_instance))
    doc["samples"] = [[1.0, 2.0]]
    with pytest.raises(Exception):
        loads(json.dumps(doc))
