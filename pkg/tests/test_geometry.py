import pytest

from tractrisk.geometry import (TractGeometry, graph_from_geojson, grid_feature_collection,
                                grid_graph)


def test_grid_rook_and_queen_degrees():
    rook, _ = grid_graph(3, 3, rule="rook")
    queen, _ = grid_graph(3, 3, rule="queen")
    centre = rook.index["T001001"]
    assert rook.degree[centre] == 4
    assert queen.degree[queen.index["T001001"]] == 8
    assert len(rook.edges) == 12 and len(queen.edges) == 20


def test_geojson_contiguity_matches_grid():
    fc = grid_feature_collection(3, 4)
    for rule in ("rook", "queen"):
        g, _ = grid_graph(3, 4, rule=rule)
        assert graph_from_geojson(fc, rule=rule).edges == g.edges


def test_locate_polygon_and_centroid():
    fc = grid_feature_collection(2, 2)
    geo = TractGeometry.from_geojson(fc)
    assert geo.locate(0.5, 1.5) == "T001000"
    assert geo.locate(5.0, 5.0) is None
    _, cent = grid_graph(2, 2)
    nearest = TractGeometry(cent)
    assert nearest.locate(1.9, 0.1) == "T000001"


def test_bad_rule():
    with pytest.raises(ValueError):
        graph_from_geojson(grid_feature_collection(2, 2), rule="bishop")
