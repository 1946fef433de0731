import numpy as np
import pandas as pd
import pytest

from tractrisk.data import COVARIATE_COLUMNS, PROPORTION_COLUMNS, Cohort
from tractrisk.geometry import TractGeometry, grid_feature_collection, grid_graph
from tractrisk.polyagamma import RandomStream
from tractrisk.rebalance import (SmoteConfig, WeightScheme, compute_weights, observation_weights,
                                 rebalanced_spec, smote_rebalance)
from tractrisk.sampler import ModelSpec


def _cohort(points, graph):
    """points: (x, y, age, outcome, black)"""
    geo = TractGeometry.from_geojson(grid_feature_collection(3, 3))
    rows = []
    for x, y, age, out, black in points:
        rows.append({"tract_id": geo.locate(x, y), "year": 2012, "outcome": out, "age": age,
                     "black": black, "hispanic": 0, "asian": 0, "multiple_birth": 0,
                     "longitude": x, "latitude": y})
    rng = np.random.default_rng(0)
    cov = pd.DataFrame([[t, 2012] + list(rng.random(len(PROPORTION_COLUMNS))) + [4.0] * 4
                        for t in graph.tract_ids], columns=COVARIATE_COLUMNS)
    return Cohort(pd.DataFrame(rows), cov, graph), geo


def test_weight_formulas():
    y = np.r_[np.ones(10), np.zeros(90)]
    w = compute_weights(y, "case_control")
    assert (w.w_case, w.w_control) == (1.0, pytest.approx(1 / 9))
    assert w.w_control * 90 == pytest.approx(w.w_case * 10)
    assert compute_weights(y, "unit").w_control == 1.0
    pop = compute_weights(y, "population", tau=0.1)
    assert (pop.w_case, pop.w_control) == (pytest.approx(1.0), pytest.approx(1.0))
    full_scale = compute_weights(np.r_[np.ones(385), np.zeros(45534)])
    assert full_scale.w_control == pytest.approx(0.008455, abs=5e-7)
    with pytest.raises(ValueError):
        compute_weights(np.ones(5))
    with pytest.raises(ValueError):
        compute_weights(y, "population")
    with pytest.raises(ValueError):
        WeightScheme("odd", 1, 1)


def test_rebalanced_spec():
    y = np.r_[np.ones(10), np.zeros(90)]
    base = ModelSpec()
    assert rebalanced_spec(base, compute_weights(y, "unit")) is base
    spec = rebalanced_spec(base, compute_weights(y), y)
    np.testing.assert_allclose(spec.weights[10:], 1 / 9)
    np.testing.assert_array_equal(observation_weights(y, compute_weights(y))[:10], 1.0)


def test_midpoint_rule():
    graph, _ = grid_graph(3, 3)
    pts = [(0.5, 0.5, 20.0, 1, 1), (2.5, 2.5, 22.0, 1, 1)] + [
        (0.5 + i % 3, 1.5, 30.0, 0, 0) for i in range(4)]
    cohort, geo = _cohort(pts, graph)
    out = smote_rebalance(cohort, geo, SmoteConfig(k_neighbors=1), RandomStream(0, 0))
    syn = out.deliveries[out.deliveries["synthetic"] == 1]
    assert len(syn) == 2
    assert np.allclose(syn[["longitude", "latitude"]], 1.5)
    assert np.allclose(syn["age"], 21.0)
    assert set(syn["tract_id"]) == {"T001001"} and set(syn["black"]) == {1}


def test_balanced_is_noop():
    graph, _ = grid_graph(3, 3)
    pts = [(0.5 + i, 0.5, 25.0 + i, i % 2, 0) for i in range(3)] + [
        (0.5 + i, 2.5, 25.0, (i + 1) % 2, 0) for i in range(3)]
    cohort, geo = _cohort(pts, graph)
    out = smote_rebalance(cohort, geo, SmoteConfig(), RandomStream(0, 0))
    assert out.N == cohort.N and out.deliveries["synthetic"].sum() == 0


def _audit(out):
    d = out.deliveries
    merged = d.merge(out.covariates, on=["tract_id", "year"], how="left")
    assert not merged[PROPORTION_COLUMNS].isna().any().any()


def test_toy_audit_and_determinism():
    graph, _ = grid_graph(3, 3)
    rng = np.random.default_rng(5)
    pts = [(rng.uniform(0.05, 2.95), rng.uniform(0.05, 2.95), rng.uniform(18, 40),
            int(i < 6), int(rng.random() < 0.5)) for i in range(20)]
    cohort, geo = _cohort(pts, graph)
    a = smote_rebalance(cohort, geo, SmoteConfig(k_neighbors=3), RandomStream(3, 0))
    b = smote_rebalance(cohort, geo, SmoteConfig(k_neighbors=3), RandomStream(3, 0))
    pd.testing.assert_frame_equal(a.deliveries, b.deliveries)
    y = a.deliveries["outcome"]
    assert abs(int(y.sum()) - int((y == 0).sum())) <= 1
    # covariate table is the input table, untouched
    assert a.covariates is cohort.covariates
    _audit(a)
    syn = a.deliveries[a.deliveries["synthetic"] == 1]
    mino = cohort.deliveries[cohort.deliveries["outcome"] == 1]
    for col in ("age", "longitude", "latitude"):
        assert syn[col].between(mino[col].min(), mino[col].max()).all()
    for t, x, yy in zip(syn["tract_id"], syn["longitude"], syn["latitude"]):
        assert geo.locate(x, yy) == t


def test_needs_two_minority():
    graph, _ = grid_graph(3, 3)
    cohort, geo = _cohort([(0.5, 0.5, 20.0, 1, 0), (1.5, 0.5, 20.0, 0, 0),
                           (2.5, 0.5, 20.0, 0, 0)], graph)
    with pytest.raises(ValueError):
        smote_rebalance(cohort, geo, SmoteConfig(), RandomStream(0, 0))
