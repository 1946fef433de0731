import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tractrisk.graph import (DENSE_CUTOFF, GraphError, build_graph, car_precision,
                             edge_quad_forms, log_det_from_spectrum, prune_cohort_graph,
                             quad_form, read_edge_csv, write_edge_csv)

from conftest import random_connected_graph


def test_path_degrees(path3):
    assert path3.tract_ids == ("A", "B", "C")
    assert list(path3.degree) == [1, 2, 1]
    assert path3.neighbors("B") == ["A", "C"]


def test_self_loop_rejected():
    with pytest.raises(GraphError):
        build_graph([("A", "A")], ["A"])


def test_unknown_and_duplicate_ids():
    with pytest.raises(GraphError):
        build_graph([("A", "Z")], ["A", "B"])
    with pytest.raises(GraphError):
        build_graph([], ["A", "A"])


def test_symmetric_edges_deduplicated():
    g = build_graph([("A", "B"), ("B", "A")], ["A", "B"])
    assert len(g.edges) == 1
    assert list(g.degree) == [1, 1]


def test_prune_middle_of_path_empties_graph(path3):
    with pytest.raises(GraphError, match="every tract"):
        prune_cohort_graph(path3, {"A": [5], "B": [1], "C": [5]}, 2)


def test_prune_identity(path3):
    g, removed = prune_cohort_graph(path3, {"A": [5, 5], "B": [5, 5], "C": [5, 5]}, 2)
    assert g.tract_ids == path3.tract_ids and removed == []


def test_prune_star_leaf():
    star = build_graph([("H", x) for x in "abcd"], list("Habcd"))
    counts = {t: [10] for t in star.tract_ids}
    counts["c"] = [0]
    g, removed = prune_cohort_graph(star, counts, 1)
    assert removed == ["c"]
    assert g.is_connected() and g.n == 4


def test_prune_disconnected_error():
    g = build_graph([("A", "B"), ("B", "C"), ("C", "D"), ("D", "E")], list("ABCDE"))
    counts = {t: [9] for t in g.tract_ids}
    counts["C"] = [0]
    with pytest.raises(GraphError, match="disconnected"):
        prune_cohort_graph(g, counts, 1)


def test_precision_at_zero_is_identity(path3):
    q = car_precision(path3, 0.0)
    np.testing.assert_array_equal(q.dense(), np.eye(3))
    assert q.log_det == 0.0


def test_precision_path_values(path3):
    q = car_precision(path3, 0.5).dense()
    np.testing.assert_allclose(q, [[1, -0.5, 0], [-0.5, 1.5, -0.5], [0, -0.5, 1]], atol=1e-15)
    lam = np.linalg.eigvalsh(car_precision(path3, 0.9).dense())
    assert lam.min() == pytest.approx(0.1)


def test_quad_form_examples(path3):
    q = car_precision(path3, 0.5)
    assert quad_form(q, np.zeros(3)) == 0.0
    assert quad_form(q, np.ones(3)) == pytest.approx(0.5 * 3)
    assert quad_form(q, [1.0, 0, 0]) == pytest.approx(1.0)


def test_rho_out_of_range(path3):
    for bad in (-0.1, 1.0, float("nan")):
        with pytest.raises(ValueError):
            car_precision(path3, bad)


@pytest.mark.parametrize("n", [8, DENSE_CUTOFF + 20])
def test_log_det_against_dense(n):
    rng = np.random.default_rng(n)
    g = random_connected_graph(n, rng)
    for rho in (0.2, 0.7, 0.99):
        q = car_precision(g, rho)
        sign, ref = np.linalg.slogdet(q.dense())
        assert sign > 0
        assert q.log_det == pytest.approx(ref, rel=1e-8)
        assert log_det_from_spectrum(g.laplacian_eigenvalues, rho) == pytest.approx(ref, rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.floats(0.0, 0.99), st.integers(0, 10_000))
def test_quad_form_decomposition(n, rho, seed):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(n, rng)
    v = rng.standard_normal(n)
    e_lap, e_id = edge_quad_forms(g, v)
    q = car_precision(g, rho)
    assert quad_form(q, v) == pytest.approx(rho * e_lap + (1 - rho) * e_id, rel=1e-10, abs=1e-12)
    assert quad_form(q, v) >= (1 - rho) * (v @ v) - 1e-10
    # constant vectors sit in the smallest eigenspace
    np.testing.assert_allclose(q.matrix @ np.ones(n), (1 - rho) * np.ones(n), atol=1e-12)


def test_edge_csv_roundtrip(tmp_path, path3):
    p = tmp_path / "edges.csv"
    write_edge_csv(path3, p)
    g = read_edge_csv(p)
    assert g.edges == path3.edges and g.tract_ids == path3.tract_ids


def test_edge_csv_bad_header(tmp_path):
    p = tmp_path / "edges.csv"
    p.write_text("from,to\nA,B\n")
    with pytest.raises(GraphError):
        read_edge_csv(p)
    p.write_text("src,dst\nA,B,C\n")
    with pytest.raises(GraphError, match=":2:"):
        read_edge_csv(p)
