import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wassdro.conic import solve
from wassdro.copositive import PSD_SETTINGS
from wassdro.newsvendor import (SIGMA, ChebyshevParams, LognormalSpec, NewsvendorConfig,
                                build_newsvendor_chebyshev, build_newsvendor_wasserstein, cross_validate_epsilon,
                                default_eps_grid, fit_chebyshev, fit_wasserstein, newsvendor_costs,
                                out_of_sample_cvar, random_instance, results_csv, run_newsvendor_study,
                                run_trial, sample_lognormal, solve_saa, summarize, write_study)
from wassdro.oracles import empirical_cvar, saa_cvar

TINY = dict(K=1, I=5, trials=1, test_samples=300, reference_samples=300, eps_grid=(0.01, 0.3),
            gamma1_grid=(0.0,), gamma2_grid=(0.0, 1.0))


def _train(K, I, seed):
    rng = np.random.default_rng(seed)
    return sample_lognormal(random_instance(rng, K), I, rng)


# -- configuration ---------------------------------------------------------


def test_config_defaults():
    cfg = NewsvendorConfig()
    np.testing.assert_array_equal(cfg.b, np.ones(3))
    np.testing.assert_array_equal(cfg.s, 10 * np.ones(3))
    assert (cfg.budget, cfg.rho, cfg.K, cfg.test_samples, cfg.cv_folds) == (30.0, 0.1, 3, 20000, 5)
    assert 1 / np.sqrt(10) in cfg.eps_grid


def test_config_round_trip(tmp_path):
    cfg = NewsvendorConfig(K=2, hold=(1.0, 2.0), seed=9)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert NewsvendorConfig.from_json(path) == cfg


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        NewsvendorConfig.from_dict({"K": 2, "colour": 1})
    with pytest.raises(ValueError):
        NewsvendorConfig(rho=0.0)
    with pytest.raises(ValueError):
        NewsvendorConfig(K=2, short=(1.0, -1.0))
    with pytest.raises(ValueError):
        NewsvendorConfig(I=3, cv_folds=5)


def test_default_grid_contains_radius_rule():
    grid = default_eps_grid(20)
    assert grid[0] == pytest.approx(1e-3) and grid[-1] == pytest.approx(10.0)
    assert 1 / np.sqrt(20) in grid and len(grid) == 10


# -- demand model ----------------------------------------------------------


def test_random_instance_scalar():
    spec = random_instance(np.random.default_rng(1), 1)
    np.testing.assert_array_equal(spec.corr, [[1.0]])
    assert spec.Sigma[0, 0] == pytest.approx(0.0625 + spec.nu[0] ** 2)
    assert 0 <= spec.nu[0] <= 2


@given(st.integers(1, 6), st.integers(0, 2 ** 31))
def test_random_instance_structure(K, seed):
    spec = random_instance(np.random.default_rng(seed), K)
    C = (spec.Sigma - np.outer(spec.nu, spec.nu)) / SIGMA ** 2
    np.testing.assert_allclose(np.diag(C), 1.0, atol=1e-12)
    assert np.linalg.eigvalsh(C).min() >= -1e-10
    np.testing.assert_allclose(spec.sigma, 0.25, atol=1e-12)
    assert np.all((spec.nu >= 0) & (spec.nu <= 2))


def test_lognormal_median():
    nu = np.array([0.3, 1.2])
    spec = LognormalSpec(nu, np.diag([0.0625, 0.0625]) + np.outer(nu, nu))
    xs = sample_lognormal(spec, 40000, np.random.default_rng(2))
    np.testing.assert_allclose(np.median(xs, axis=0), np.exp(nu), rtol=0.05)
    assert np.all(xs > 0)


def test_lognormal_zero_variance():
    nu = np.array([0.5, 1.0])
    xs = sample_lognormal(LognormalSpec(nu, np.outer(nu, nu)), 50, np.random.default_rng(0))
    np.testing.assert_allclose(xs, np.tile(np.exp(nu), (50, 1)), rtol=1e-12)


def test_lognormal_is_deterministic():
    spec = random_instance(np.random.default_rng(4), 3)
    a = sample_lognormal(spec, 100, np.random.default_rng(11))
    b = sample_lognormal(spec, 100, np.random.default_rng(11))
    assert a.tobytes() == b.tobytes()


def test_lognormal_rejects_indefinite_covariance():
    nu = np.zeros(2)
    with pytest.raises(ValueError):
        sample_lognormal(LognormalSpec(nu, np.array([[1.0, 2.0], [2.0, 1.0]])), 5, np.random.default_rng(0))


# -- costs -----------------------------------------------------------------


def test_out_of_sample_cvar_top_half():
    xs = np.arange(1.0, 11.0).reshape(-1, 1)
    assert out_of_sample_cvar([0.0], xs, 0.5, [1.0], [1.0]) == pytest.approx(8.0)
    assert out_of_sample_cvar([0.0], xs, 1.0, [1.0], [1.0]) == pytest.approx(5.5)


def test_out_of_sample_cvar_constant_costs():
    assert out_of_sample_cvar([1.0], np.full((7, 1), 3.0), 0.2, [1.0], [10.0]) == pytest.approx(20.0)


def test_out_of_sample_cvar_empty():
    with pytest.raises(ValueError):
        out_of_sample_cvar([1.0], np.zeros((0, 1)), 0.5, [1.0], [1.0])


@given(st.lists(st.floats(0, 30), min_size=2, max_size=30), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_cvar_nonincreasing_in_level(demand, r1, r2):
    xs = np.array(demand).reshape(-1, 1)
    lo, hi = sorted((r1, r2))
    assert out_of_sample_cvar([5.0], xs, hi, [1.0], [10.0]) <= out_of_sample_cvar([5.0], xs, lo, [1.0], [10.0]) + 1e-9


def test_costs_two_piece():
    np.testing.assert_allclose(newsvendor_costs([2.0, 1.0], [[1.0, 3.0]], [1.0, 1.0], [10.0, 10.0]), [1.0 + 20.0])


# -- policies --------------------------------------------------------------


def test_saa_lp_matches_generic_cvar_lp():
    cfg = NewsvendorConfig(K=2, I=6)
    xs = _train(2, 6, 8)
    from wassdro.newsvendor import newsvendor_problem
    x, val = solve_saa(cfg, xs)
    ref = saa_cvar(None, cfg.rho, problem=newsvendor_problem(cfg, xs, 0.1), optimize_x=True)
    assert val == pytest.approx(ref.value, rel=1e-8)
    assert np.sum(x) <= cfg.budget + 1e-9


def test_wasserstein_small_radius_approaches_saa():
    cfg = NewsvendorConfig()
    xs = _train(3, 10, 0)
    _, saa = solve_saa(cfg, xs)
    res = solve(build_newsvendor_wasserstein(cfg, xs, 1e-4), PSD_SETTINGS)
    assert res.ok
    assert abs(res.primal_objective - saa) <= 0.01 * abs(saa)


def test_wasserstein_objective_dominates_empirical_cvar():
    cfg = NewsvendorConfig(K=2, I=6)
    xs = _train(2, 6, 3)
    fit = fit_wasserstein(cfg, xs, 0.2)
    assert out_of_sample_cvar(fit.x, xs, cfg.rho, cfg.b, cfg.s) <= fit.value + 1e-6


def test_symmetric_costs_order_within_sample_range():
    cfg = NewsvendorConfig(K=1, I=6, hold=(1.0,), short=(1.0,))
    xs = _train(1, 6, 12)
    fit = fit_wasserstein(cfg, xs, 1e-3)
    assert xs.min() - 1e-6 <= fit.x[0] <= xs.max() + 1e-6


def test_wasserstein_rejects_zero_radius():
    with pytest.raises(ValueError):
        build_newsvendor_wasserstein(NewsvendorConfig(K=1, I=5), np.ones((5, 1)), 0.0)


def test_chebyshev_value_grows_with_covariance_level():
    cfg = NewsvendorConfig(K=2, I=8)
    xs = _train(2, 8, 6)
    vals = [fit_chebyshev(cfg, xs, 0.5, g2).value for g2 in (0.0, 0.5, 2.0)]
    assert vals[0] <= vals[1] + 1e-6 <= vals[2] + 2e-6


def test_chebyshev_without_confidence_has_no_norm_row():
    cfg = NewsvendorConfig(K=2, I=8)
    xs = _train(2, 8, 6)
    prog = build_newsvendor_chebyshev(cfg, ChebyshevParams.from_samples(xs, 0.0, 0.0))
    assert prog.cone_counts()["soc"] == 0
    with_norm = build_newsvendor_chebyshev(cfg, ChebyshevParams.from_samples(xs, 1.0, 0.0))
    assert with_norm.cone_counts()["soc"] == 1


def test_chebyshev_dominates_empirical_member():
    # the empirical distribution has exactly the estimated moments, so it lies in the set
    cfg = NewsvendorConfig(K=2, I=5)
    xs = np.array([[1.0, 2.0], [3.0, 1.0]])
    fit = fit_chebyshev(cfg, xs, 0.0, 0.0)
    assert fit.status == "Optimal"
    assert out_of_sample_cvar(fit.x, xs, cfg.rho, cfg.b, cfg.s) <= fit.value + 1e-6


def test_chebyshev_ridge_and_validation():
    p = ChebyshevParams([1.0, 1.0], np.zeros((2, 2)))
    assert np.linalg.eigvalsh(p.Sigma).min() > 0
    with pytest.raises(ValueError):
        ChebyshevParams([1.0], [[1.0]], gamma1=-1.0)
    with pytest.raises(ValueError):
        ChebyshevParams([1.0], [[1.0]], trace_scale="other")
    disp = ChebyshevParams([1.0], [[2.0]], gamma2=0.5, trace_scale="display")
    assert disp.second_moment_weight[0, 0] == pytest.approx(0.5 * 2.0 + 1.0)


# -- cross-validation ------------------------------------------------------


def test_cv_singleton_grid():
    cfg = NewsvendorConfig(K=1, I=5)
    assert cross_validate_epsilon(cfg, _train(1, 5, 0), [0.1]) == 0.1


def test_cv_duplicate_grid():
    cfg = NewsvendorConfig(K=1, I=5)
    assert cross_validate_epsilon(cfg, _train(1, 5, 0), [0.1, 0.1], rng=np.random.default_rng(0)) == 0.1


@pytest.mark.slow
def test_cv_prefers_small_radius_on_rich_samples():
    cfg = NewsvendorConfig(K=1, I=100)
    picks = [cross_validate_epsilon(cfg, _train(1, 100, seed), [1e-3, 1e3], rng=np.random.default_rng(seed))
             for seed in range(10)]
    assert sum(p == 1e-3 for p in picks) > len(picks) / 2


def test_cv_rejects_empty_grid():
    with pytest.raises(ValueError):
        cross_validate_epsilon(NewsvendorConfig(K=1, I=5), _train(1, 5, 0), [])


# -- study -----------------------------------------------------------------


def test_single_trial_is_deterministic():
    cfg = NewsvendorConfig(**TINY, seed=3)
    a, b = run_trial(cfg, 0), run_trial(cfg, 0)
    assert a.ok
    assert a == b
    assert results_csv([a]) == results_csv([b])


def test_study_fields_and_summary(tmp_path):
    cfg = NewsvendorConfig(**{**TINY, "trials": 2}, seed=1)
    results, summary = run_newsvendor_study(cfg)
    assert [r.trial for r in results] == [0, 1]
    for r in results:
        assert r.ok
        assert all(np.isfinite(v) for d in (r.in_sample, r.out_of_sample, r.improvement) for v in d.values())
        assert r.improvement["saa"] == 0.0
        assert r.optimality_gap["saa"] >= -0.05
    assert summary["trials"] == 2 and summary["excluded"] == 0
    paths = write_study(results, summary, tmp_path)
    assert paths["csv"].read_bytes().count(b"\r\n") == 3
    assert paths["improvement"].read_text().splitlines()[1].startswith("0 wasserstein")


def test_summary_excludes_failed_trials():
    cfg = NewsvendorConfig(**TINY, seed=3)
    good = run_trial(cfg, 0)
    bad = type(good)(1, 3, "x", "error:ValueError", np.nan, np.nan, np.nan, {}, {}, {}, {}, {})
    summary = summarize([good, bad])
    assert summary["excluded"] == 1
    assert summary["improvement:wasserstein"]["mean"] == pytest.approx(good.improvement["wasserstein"])


def test_risk_neutral_small_radius_collapse():
    cfg = NewsvendorConfig(K=2, I=10, trials=3, rho=1.0, eps_grid=(1e-4,), gamma1_grid=(0.0,),
                           gamma2_grid=(0.0,), test_samples=2000, reference_samples=2000, seed=5)
    results, _ = run_newsvendor_study(cfg)
    for r in results:
        assert r.ok
        assert r.out_of_sample["wasserstein"] == pytest.approx(r.out_of_sample["saa"], rel=0.01)
        assert r.in_sample["wasserstein"] == pytest.approx(r.in_sample["saa"], rel=0.01)


def test_empirical_cvar_agrees_with_out_of_sample_helper(rng):
    xs = rng.uniform(0, 5, (50, 2))
    costs = newsvendor_costs([1.0, 2.0], xs, [1.0, 1.0], [10.0, 10.0])
    assert out_of_sample_cvar([1.0, 2.0], xs, 0.3, [1.0, 1.0], [10.0, 10.0]) == empirical_cvar(costs, 0.3)
