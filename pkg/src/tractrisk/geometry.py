"""Tract polygons: contiguity from GeoJSON, point-to-tract lookup, grids.

Queen contiguity links two tracts whose boundaries share at least one
point; rook contiguity requires a shared boundary segment of positive
length.
"""

from __future__ import annotations

import json
from typing import Mapping

import numpy as np
from scipy.spatial import cKDTree
from shapely import STRtree
from shapely.geometry import Point, box, mapping, shape

from .graph import GraphError, TractGraph, build_graph

__all__ = [
    "load_geojson",
    "graph_from_geojson",
    "TractGeometry",
    "grid_graph",
    "grid_feature_collection",
]

_ID_KEYS = ("tract_id", "GEOID", "geoid", "id")


def load_geojson(path) -> dict:
    with open(path) as fh:
        fc = json.load(fh)
    if fc.get("type") != "FeatureCollection":
        raise GraphError(f"{path}: not a GeoJSON FeatureCollection", fc.get("type"))
    return fc


def _feature_id(feat, id_property=None):
    props = feat.get("properties") or {}
    if id_property is not None:
        if id_property not in props:
            raise GraphError(f"feature lacks property {id_property!r}", props)
        return str(props[id_property])
    for k in _ID_KEYS:
        if k in props:
            return str(props[k])
    if "id" in feat:
        return str(feat["id"])
    raise GraphError("feature has no tract identifier", props)


def _polygons(fc, id_property=None):
    ids, geoms = [], []
    for feat in fc["features"]:
        ids.append(_feature_id(feat, id_property))
        geoms.append(shape(feat["geometry"]))
    return ids, geoms


def graph_from_geojson(fc: Mapping, rule: str = "queen", id_property=None,
                       tol: float = 1e-12) -> TractGraph:
    """Contiguity graph of the polygons in a FeatureCollection."""
    if rule not in ("queen", "rook"):
        raise ValueError(f"contiguity rule must be 'queen' or 'rook', got {rule!r}")
    ids, geoms = _polygons(fc, id_property)
    tree = STRtree(geoms)
    edges = []
    for i, g in enumerate(geoms):
        for j in tree.query(g, predicate="intersects"):
            j = int(j)
            if j <= i:
                continue
            shared = g.boundary.intersection(geoms[j].boundary)
            if shared.is_empty:
                continue
            if rule == "rook" and shared.length <= tol:
                continue
            edges.append((ids[i], ids[j]))
    return build_graph(edges, ids)


class TractGeometry:
    """Resolve coordinates to tract ids.

    With polygons, lookup is point-in-polygon; otherwise the nearest tract
    centroid wins.
    """

    def __init__(self, centroids: Mapping, polygons: Mapping | None = None):
        self.tract_ids = list(centroids)
        self.centroids = {t: tuple(map(float, centroids[t])) for t in self.tract_ids}
        self._kdtree = cKDTree(np.array([self.centroids[t] for t in self.tract_ids]))
        self.polygons = dict(polygons) if polygons else None
        if self.polygons:
            self._poly_ids = list(self.polygons)
            self._tree = STRtree([self.polygons[t] for t in self._poly_ids])

    @classmethod
    def from_geojson(cls, fc: Mapping, id_property=None) -> "TractGeometry":
        ids, geoms = _polygons(fc, id_property)
        cents = {t: (g.centroid.x, g.centroid.y) for t, g in zip(ids, geoms)}
        return cls(cents, dict(zip(ids, geoms)))

    def locate(self, x: float, y: float):
        """Tract id containing ``(x, y)``, or ``None`` outside all polygons."""
        if self.polygons:
            pt = Point(x, y)
            hits = self._tree.query(pt, predicate="intersects")
            if len(hits) == 0:
                return None
            return min(self._poly_ids[int(h)] for h in hits)
        _, k = self._kdtree.query([x, y])
        return self.tract_ids[int(k)]

    def centroid(self, tract_id):
        return self.centroids[tract_id]


def _grid_id(r, c):
    return f"T{r:03d}{c:03d}"


def grid_graph(n_rows: int, n_cols: int, rule: str = "rook"):
    """Regular lattice of unit-square tracts.

    Returns ``(graph, centroids)``; tract ``T<row><col>`` covers
    ``[col, col+1] x [row, row+1]``.
    """
    ids = [_grid_id(r, c) for r in range(n_rows) for c in range(n_cols)]
    edges = []
    for r in range(n_rows):
        for c in range(n_cols):
            if c + 1 < n_cols:
                edges.append((_grid_id(r, c), _grid_id(r, c + 1)))
            if r + 1 < n_rows:
                edges.append((_grid_id(r, c), _grid_id(r + 1, c)))
            if rule == "queen":
                if r + 1 < n_rows and c + 1 < n_cols:
                    edges.append((_grid_id(r, c), _grid_id(r + 1, c + 1)))
                if r + 1 < n_rows and c > 0:
                    edges.append((_grid_id(r, c), _grid_id(r + 1, c - 1)))
    cents = {_grid_id(r, c): (c + 0.5, r + 0.5) for r in range(n_rows) for c in range(n_cols)}
    return build_graph(edges, ids), cents


def grid_feature_collection(n_rows: int, n_cols: int) -> dict:
    feats = []
    for r in range(n_rows):
        for c in range(n_cols):
            feats.append({
                "type": "Feature",
                "properties": {"tract_id": _grid_id(r, c)},
                "geometry": mapping(box(c, r, c + 1, r + 1)),
            })
    return {"type": "FeatureCollection", "features": feats}
