import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tractrisk.data import Standardization
from tractrisk.inference import (auc, auc_standard_error, autocorrelation, bayes_p,
                                 credible_interval, dic, ess_and_mcse, summarize_coefficients,
                                 waic)


def test_bayes_p_examples():
    assert bayes_p([1, 2, 3]) == 1.0
    assert bayes_p([-1, 1]) == 0.5
    assert bayes_p([-1, 2, 3, 4]) == 0.75
    assert bayes_p([0, 0, 0]) == 0.5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200))
def test_bayes_p_range(xs):
    assert 0.5 <= bayes_p(xs) <= 1.0


def test_credible_interval():
    assert credible_interval(np.arange(1, 101), 0.95) == pytest.approx((3.475, 97.525))
    assert credible_interval(np.full(10, 2.5)) == (2.5, 2.5)
    assert credible_interval([1, 2, 3, 4, 5], 0.0) == (3.0, 3.0)
    with pytest.raises(ValueError):
        credible_interval([1, 2], 1.0)


def test_ess_iid():
    x = np.random.default_rng(0).standard_normal(10_000)
    ess, mcse = ess_and_mcse(x)
    assert 8000 <= ess <= 12000
    assert mcse == pytest.approx(x.std(ddof=1) / math.sqrt(ess))


def test_ess_ar1():
    rng = np.random.default_rng(1)
    phi, S = 0.9, 20_000
    x = np.empty(S)
    x[0] = rng.standard_normal()
    e = rng.standard_normal(S) * math.sqrt(1 - phi ** 2)
    for t in range(1, S):
        x[t] = phi * x[t - 1] + e[t]
    ess, _ = ess_and_mcse(x)
    ref = S * (1 - phi) / (1 + phi)
    assert abs(ess - ref) < 0.3 * ref


def test_ess_constant_rejected():
    with pytest.raises(ValueError):
        ess_and_mcse(np.ones(100))


def test_autocorrelation_lag0():
    x = np.random.default_rng(2).standard_normal((2, 500))
    r = autocorrelation(x, 5)
    assert r[0] == 1.0 and r.shape == (6,)


def _one_obs_design():
    return SimpleNamespace(X=np.zeros((1, 0)), tract_index=np.array([0]))


def _draws(thetas):
    return {"alpha": np.array(thetas, dtype=float)[:, None], "beta": np.zeros((len(thetas), 0))}


def _ll(theta, y):
    p = 1 / (1 + math.exp(-theta))
    return math.log(p) if y else math.log(1 - p)


def test_dic_single_draw():
    d, pd = dic(_draws([0.3]), np.array([1.0]), _one_obs_design())
    assert pd == pytest.approx(0.0, abs=1e-12)
    assert d == pytest.approx(-2 * _ll(0.3, 1))


def test_dic_two_draws_by_hand():
    t1, t2 = -0.4, 1.1
    d, pd = dic(_draws([t1, t2]), np.array([1.0]), _one_obs_design())
    dbar = -2 * (_ll(t1, 1) + _ll(t2, 1)) / 2
    dhat = -2 * _ll((t1 + t2) / 2, 1)
    assert pd == pytest.approx(dbar - dhat, abs=1e-10)
    assert d == pytest.approx(2 * dbar - dhat, abs=1e-10)


def test_dic_perfect_fit_limit():
    d, _ = dic(_draws([-40.0, -41.0]), np.array([0.0]), _one_obs_design())
    assert d < 1e-15


def test_waic_single_and_two_draws():
    w, pw = waic(_draws([0.3]), np.array([1.0]), _one_obs_design())
    assert pw == 0.0 and w == pytest.approx(-2 * _ll(0.3, 1))
    t1, t2 = -0.4, 1.1
    w, pw = waic(_draws([t1, t2]), np.array([0.0]), _one_obs_design())
    l1, l2 = _ll(t1, 0), _ll(t2, 0)
    lppd = math.log((math.exp(l1) + math.exp(l2)) / 2)
    var = np.var([l1, l2], ddof=1)
    assert pw == pytest.approx(var, abs=1e-10)
    assert w == pytest.approx(-2 * lppd + 2 * var, abs=1e-10)


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.5] * 4, [0, 1, 0, 1]) == 0.5
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_matches_pair_count(pairs):
    s = np.array([p[0] for p in pairs], float)
    y = np.array([p[1] for p in pairs])
    if y.min() == y.max():
        return
    pos, neg = s[y == 1], s[y == 0]
    ref = np.mean([(a > b) + 0.5 * (a == b) for a in pos for b in neg])
    assert auc(s, y) == pytest.approx(ref, abs=1e-12)


def test_auc_se_positive():
    se = auc_standard_error(0.7, 50, 500)
    assert 0 < se < 0.1


def test_summary_values():
    s = {"beta": np.column_stack([np.zeros(50), np.full(50, math.log(2))])}

    class Draws(dict):
        beta_names = ("a", "b")

    out = summarize_coefficients(Draws(s))
    assert out[0].mean_or == 1.0 and out[0].bayes_p == 0.5
    assert out[1].mean_or == pytest.approx(2.0)
    std = Standardization(("a", "b"), np.zeros(2), np.array([2.0, 1.0]), np.array([True, False]))
    rng = np.random.default_rng(0)
    b = rng.normal(0.5, 0.2, (1000, 2))
    out = summarize_coefficients(Draws({"beta": b}), std)
    assert out[0].mean_log_or == pytest.approx(np.mean(b[:, 0] / 2))
    assert out[0].mean_or == pytest.approx(np.mean(np.exp(b[:, 0] / 2)))
    assert out[1].ci_low == pytest.approx(np.quantile(b[:, 1], 0.025))


def test_dic_and_waic_close_on_identified_fit():
    from tractrisk.data import assemble_design, simulate_cohort
    from tractrisk.graph import build_graph
    from tractrisk.polyagamma import RandomStream
    from tractrisk.sampler import McmcConfig, ModelSpec, fit

    g = build_graph([("A", "B"), ("B", "C")], ["A", "B", "C"])
    cohort, _ = simulate_cohort(g, {"alpha0": -0.5, "beta": {"age": 0.05}, "tau_alpha": 0.5,
                                    "rho": 0.5}, 300, RandomStream(4, 0))
    design = assemble_design(cohort, columns=["age"])
    s = fit(ModelSpec(), McmcConfig(600, 100, 1, 1, seed=4), cohort, design, g)
    assert abs(dic(s, cohort, design)[0] - waic(s, cohort, design)[0]) < 5
