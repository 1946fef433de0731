import numpy as np
import pandas as pd
import pytest

from tractrisk.data import (COVARIATE_COLUMNS, NEIGHBORHOOD_COLUMNS, PROPORTION_COLUMNS, Cohort,
                            DataError, Standardization, assemble_design,
                            destandardize_coefficients, intercept_shift, load_cohort,
                            read_deliveries_csv, simulate_cohort, split_train_validation, vif,
                            write_covariates_csv, write_deliveries_csv)
from tractrisk.geometry import grid_graph
from tractrisk.graph import build_graph
from tractrisk.polyagamma import RandomStream


def _covariates(tracts, years, value=0.3):
    rows = [[t, y] + [value] * len(PROPORTION_COLUMNS) + [4.0] * 4 for t in tracts for y in years]
    return pd.DataFrame(rows, columns=COVARIATE_COLUMNS)


def _deliveries(rows):
    cols = ["tract_id", "year", "outcome", "age", "black", "hispanic", "asian", "multiple_birth"]
    return pd.DataFrame(rows, columns=cols)


@pytest.fixture
def ab():
    return build_graph([("A", "B")], ["A", "B"])


def test_small_cohort(ab):
    d = _deliveries([["A", 2010, 0, 30, 1, 0, 0, 0], ["A", 2010, 1, 25, 0, 0, 0, 0],
                     ["B", 2011, 0, 20, 0, 1, 0, 0]])
    c = Cohort(d, _covariates("AB", [2010, 2011]), ab)
    assert (c.N, c.n) == (3, 2)
    assert list(c.m) == [2, 1]
    assert c.years == [2010, 2011]
    assert c.records[2].patient_covariates["hispanic"] == 1


def test_missing_covariate_year_named(ab):
    d = _deliveries([["A", 2012, 0, 30, 1, 0, 0, 0]])
    with pytest.raises(DataError, match=r"\(A, 2012\)"):
        Cohort(d, _covariates("AB", [2010]), ab)


def test_bad_values(ab):
    cov = _covariates("AB", [2010])
    with pytest.raises(DataError):
        Cohort(_deliveries([["A", 2010, 2, 30, 1, 0, 0, 0]]), cov, ab)
    with pytest.raises(DataError):
        Cohort(_deliveries([["C", 2010, 0, 30, 1, 0, 0, 0]]), cov, ab)
    bad = cov.copy()
    bad.loc[0, "poverty"] = 1.5
    with pytest.raises(DataError):
        Cohort(_deliveries([["A", 2010, 0, 30, 1, 0, 0, 0]]), bad, ab)


def test_empty_file(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("tract_id,year,outcome,age,black,hispanic,asian,multiple_birth\n")
    with pytest.raises(DataError, match="empty cohort"):
        read_deliveries_csv(p)
    p.write_text("")
    with pytest.raises(DataError):
        read_deliveries_csv(p)


def test_reader_reports_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("tract_id,year,outcome,age,black,hispanic,asian,multiple_birth\n"
                 "A,2010,0,30,1,0,0,0\nA,2010,0,thirty,1,0,0,0\n")
    with pytest.raises(DataError, match=":3:"):
        read_deliveries_csv(p)


def test_csv_roundtrip(tmp_path, toy):
    graph, _, cohort, _ = toy
    write_deliveries_csv(cohort, tmp_path / "d.csv")
    write_covariates_csv(cohort, tmp_path / "c.csv")
    back = load_cohort(tmp_path / "d.csv", tmp_path / "c.csv", graph)
    pd.testing.assert_frame_equal(back.deliveries, cohort.deliveries, check_dtype=False)
    write_deliveries_csv(back, tmp_path / "d2.csv")
    assert (tmp_path / "d.csv").read_bytes() == (tmp_path / "d2.csv").read_bytes()


def test_load_drops_pruned_tracts(tmp_path, toy):
    graph, _, cohort, _ = toy
    write_deliveries_csv(cohort, tmp_path / "d.csv")
    write_covariates_csv(cohort, tmp_path / "c.csv")
    keep = [t for t in graph.tract_ids if t != "T000000"]
    back = load_cohort(tmp_path / "d.csv", tmp_path / "c.csv", graph.subgraph(keep))
    assert "T000000" not in set(back.deliveries["tract_id"])
    assert back.N == cohort.N - int(cohort.m[0])


def test_standardization_formula(ab):
    d = _deliveries([["A", 2010, 0, 1, 0, 0, 0, 0], ["A", 2010, 1, 2, 1, 0, 0, 0],
                     ["B", 2010, 0, 3, 1, 0, 0, 0]])
    c = Cohort(d, _covariates("AB", [2010]), ab)
    des = assemble_design(c, columns=["age", "black"])
    np.testing.assert_allclose(des.X[:, 0], [-1, 0, 1])
    np.testing.assert_array_equal(des.X[:, 1], [0, 1, 1])
    with pytest.raises(DataError, match="zero-variance"):
        assemble_design(c, columns=["poverty"])


def test_design_reuses_training_scale(toy):
    _, _, cohort, _ = toy
    train, valid = split_train_validation(cohort, [2017])
    des = assemble_design(train)
    vdes = assemble_design(valid, standardization=des.standardization)
    assert vdes.columns == des.columns and vdes.p == 19
    assert not np.allclose(vdes.X[:, 0].mean(), 0, atol=1e-12)


def test_destandardize():
    std = Standardization(("a", "b"), np.array([5.0, 0.0]), np.array([2.0, 1.0]),
                          np.array([True, False]))
    np.testing.assert_allclose(destandardize_coefficients([1.0, 0.7], std), [0.5, 0.7])
    assert intercept_shift([1.0, 0.7], std) == pytest.approx(-2.5)
    std2 = Standardization(("a",), np.array([5.0]), np.array([1.0]), np.array([True]))
    assert destandardize_coefficients([0.3], std2)[0] == 0.3


def test_vif():
    rng = np.random.default_rng(0)
    x = np.array([[1.0, 1], [1, -1], [-1, 1], [-1, -1]])
    np.testing.assert_allclose(vif(x), [1.0, 1.0])
    a = rng.standard_normal(50)
    assert np.all(np.isinf(vif(np.column_stack([a, a]))))
    X = rng.standard_normal((100, 3))
    X[:, 2] += 0.5 * X[:, 0]
    ref = []
    for k in range(3):
        A = np.column_stack([np.ones(100), np.delete(X, k, 1)])
        coef = np.linalg.solve(A.T @ A, A.T @ X[:, k])
        r = X[:, k] - A @ coef
        ref.append(np.sum((X[:, k] - X[:, k].mean()) ** 2) / (r @ r))
    np.testing.assert_allclose(vif(X), ref, rtol=1e-8)


def test_split(toy):
    _, _, cohort, _ = toy
    train, valid = split_train_validation(cohort, [2017])
    assert train.years == list(range(2010, 2017)) and valid.years == [2017]
    assert train.N + valid.N == cohort.N
    with pytest.raises(DataError):
        split_train_validation(cohort, range(2010, 2018))
    same, empty = split_train_validation(cohort, [])
    assert same.N == cohort.N and empty.N == 0


def test_simulated_rates():
    g, _ = grid_graph(3, 3)
    c, _ = simulate_cohort(g, {"alpha0": 0.0, "tau_alpha": 0.0, "rho": 0.0}, 2000,
                           RandomStream(1, 0))
    y = c.outcome
    assert abs(y.mean() - 0.5) < 3 * np.sqrt(0.25 / y.size)
    c, _ = simulate_cohort(g, {"alpha0": -4.77, "tau_alpha": 0.0, "rho": 0.0}, 8000,
                           RandomStream(2, 0))
    p = 1 / (1 + np.exp(4.77))
    assert abs(c.outcome.mean() - p) < 3 * np.sqrt(p * (1 - p) / c.N)


def _neighbour_corr(graph, a):
    i, j = graph.edge_index
    return np.corrcoef(np.r_[a[i], a[j]], np.r_[a[j], a[i]])[0, 1]


def test_simulated_spatial_dependence():
    g, _ = grid_graph(6, 6)
    wins = 0
    for s in range(20):
        _, hi = simulate_cohort(g, {"alpha0": 0, "tau_alpha": 1, "rho": 0.9}, 1, RandomStream(s, 0))
        _, lo = simulate_cohort(g, {"alpha0": 0, "tau_alpha": 1, "rho": 0.0}, 1, RandomStream(s, 0))
        wins += _neighbour_corr(g, hi.alpha) > _neighbour_corr(g, lo.alpha)
    assert wins >= 18


def test_covariate_means(toy):
    _, _, cohort, _ = toy
    m = cohort.tract_covariate_means()
    assert list(m.columns) == NEIGHBORHOOD_COLUMNS and len(m) == cohort.n
