"""Areal adjacency graphs and the Leroux CAR precision matrix.

The precision of the random effects is

    Q(rho) = rho * (D_W - W) + (1 - rho) * I,     0 <= rho < 1,

which is the identity at ``rho = 0`` (independent random effects) and
tends to the intrinsic CAR Laplacian as ``rho -> 1``.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

__all__ = [
    "GraphError",
    "TractGraph",
    "CarPrecision",
    "build_graph",
    "prune_cohort_graph",
    "car_precision",
    "quad_form",
    "read_edge_csv",
    "write_edge_csv",
    "DENSE_CUTOFF",
]

# below this many tracts log-determinants use a dense Cholesky
DENSE_CUTOFF = 64


class GraphError(ValueError):
    """Invalid adjacency input or a graph that cannot be used for CAR."""

    def __init__(self, message, record=None):
        super().__init__(message if record is None else f"{message}: {record!r}")
        self.record = record


@dataclass(frozen=True, eq=False)
class TractGraph:
    """Undirected, self-loop free adjacency between tracts.

    ``tract_ids`` is sorted lexicographically; every vector indexed by
    tract (random effects, counts, risks) follows this order.
    """

    tract_ids: tuple
    edges: frozenset
    degree: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.tract_ids)

    @cached_property
    def index(self) -> dict:
        return {t: i for i, t in enumerate(self.tract_ids)}

    @cached_property
    def edge_index(self) -> tuple:
        """Integer endpoints ``(i, j)`` with ``i < j``, sorted."""
        if not self.edges:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        pairs = sorted((self.index[a], self.index[b]) for a, b in self.edges)
        arr = np.array(pairs, dtype=np.int64)
        lo = np.minimum(arr[:, 0], arr[:, 1])
        hi = np.maximum(arr[:, 0], arr[:, 1])
        order = np.lexsort((hi, lo))
        return lo[order], hi[order]

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        i, j = self.edge_index
        data = np.ones(2 * len(i))
        w = sp.coo_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(self.n, self.n))
        return w.tocsr()

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        return (sp.diags(self.degree.astype(float)) - self.adjacency).tocsr()

    @cached_property
    def laplacian_eigenvalues(self) -> np.ndarray:
        """Spectrum of D_W - W; gives log|Q(rho)| in O(n) for any rho."""
        lam = np.linalg.eigvalsh(self.laplacian.toarray())
        lam[lam < 0] = 0.0
        return lam

    def neighbors(self, tract_id) -> list:
        i = self.index[tract_id]
        row = self.adjacency.getrow(i)
        return [self.tract_ids[j] for j in row.indices]

    def components(self) -> list:
        """Connected components as lists of tract ids."""
        adj = {t: set() for t in self.tract_ids}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        seen = set()
        comps = []
        for t in self.tract_ids:
            if t in seen:
                continue
            comp = []
            queue = deque([t])
            seen.add(t)
            while queue:
                u = queue.popleft()
                comp.append(u)
                for v in adj[u]:
                    if v not in seen:
                        seen.add(v)
                        queue.append(v)
            comps.append(sorted(comp))
        return comps

    def is_connected(self) -> bool:
        return self.n > 0 and len(self.components()) == 1

    def subgraph(self, keep: Iterable) -> "TractGraph":
        keep = set(keep)
        edges = [(a, b) for a, b in self.edges if a in keep and b in keep]
        return build_graph(edges, [t for t in self.tract_ids if t in keep])


def _canonical_id(x) -> str:
    return str(x).strip()


def build_graph(edge_list: Iterable[Sequence], tract_ids: Iterable) -> TractGraph:
    """Build a :class:`TractGraph` from id pairs and the list of tract ids.

    Duplicate and reversed edges collapse to one undirected edge.  Unknown
    ids, duplicate tract ids and self-loops raise :class:`GraphError`.
    """
    ids = [_canonical_id(t) for t in tract_ids]
    seen = set()
    for t in ids:
        if t in seen:
            raise GraphError("duplicate tract id", t)
        seen.add(t)
    ordered = tuple(sorted(ids))
    edges = set()
    for rec in edge_list:
        a, b = (_canonical_id(rec[0]), _canonical_id(rec[1]))
        if a == b:
            raise GraphError("self-loop", (a, b))
        for t in (a, b):
            if t not in seen:
                raise GraphError("edge references unknown tract", (a, b))
        edges.add((a, b) if a < b else (b, a))
    index = {t: i for i, t in enumerate(ordered)}
    degree = np.zeros(len(ordered), dtype=np.int64)
    for a, b in edges:
        degree[index[a]] += 1
        degree[index[b]] += 1
    degree.setflags(write=False)
    return TractGraph(tract_ids=ordered, edges=frozenset(edges), degree=degree)


def prune_cohort_graph(graph: TractGraph, counts: Mapping, min_count: int):
    """Drop sparsely observed tracts, then tracts left without neighbours.

    ``counts`` maps tract id to a sequence of per-period delivery counts.
    A tract is removed when any period falls below ``min_count``.  Tracts
    that end up with no remaining neighbour are removed repeatedly until
    none are left.  The remainder must be a single connected component.

    Returns ``(pruned_graph, removed_ids)`` with removals in the order they
    happened.
    """
    missing = [t for t in graph.tract_ids if t not in counts]
    if missing:
        raise GraphError("counts missing for tracts", missing)
    removed = []
    keep = []
    for t in graph.tract_ids:
        c = np.atleast_1d(np.asarray(counts[t]))
        if c.size == 0 or np.any(c < min_count):
            removed.append(t)
        else:
            keep.append(t)
    g = graph.subgraph(keep)
    while True:
        isolated = [t for t, d in zip(g.tract_ids, g.degree) if d == 0]
        if not isolated:
            break
        removed.extend(isolated)
        g = g.subgraph(set(g.tract_ids) - set(isolated))
    if g.n == 0:
        raise GraphError("pruning removed every tract", sorted(removed))
    comps = g.components()
    if len(comps) > 1:
        sizes = sorted((len(c) for c in comps), reverse=True)
        raise GraphError("pruned graph is disconnected; component sizes", sizes)
    if removed:
        logger.info("pruned %d tracts: %s", len(removed), removed)
    return g, removed


@dataclass(frozen=True, eq=False)
class CarPrecision:
    rho: float
    matrix: sp.csr_matrix = field(repr=False)
    log_det: float

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _log_det_spd(q: sp.csr_matrix) -> float:
    n = q.shape[0]
    if n < DENSE_CUTOFF:
        c = np.linalg.cholesky(q.toarray())
        return 2.0 * float(np.sum(np.log(np.diag(c))))
    # symmetric PD: LU without row pivoting is stable enough; U's diagonal
    # carries the determinant.
    lu = spla.splu(q.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options={"SymmetricMode": True})
    return float(np.sum(np.log(np.abs(lu.U.diagonal()))))


def car_precision(graph: TractGraph, rho: float) -> CarPrecision:
    rho = float(rho)
    if not (0.0 <= rho < 1.0) or math.isnan(rho):
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    if rho == 0.0:
        q = sp.identity(graph.n, format="csr")
        return CarPrecision(rho=0.0, matrix=q, log_det=0.0)
    q = (rho * graph.laplacian + (1.0 - rho) * sp.identity(graph.n)).tocsr()
    q.sum_duplicates()
    q.eliminate_zeros()
    return CarPrecision(rho=rho, matrix=q, log_det=_log_det_spd(q))


def quad_form(prec: CarPrecision, v) -> float:
    """``v' Q v``; bounded below by ``(1 - rho) * |v|^2``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (prec.n,):
        raise ValueError(f"vector of length {prec.n} expected, got shape {v.shape}")
    return float(v @ (prec.matrix @ v))


def edge_quad_forms(graph: TractGraph, v):
    """``(v' (D - W) v, v' v)``; ``v' Q(rho) v`` is then linear in rho."""
    i, j = graph.edge_index
    d = v[i] - v[j]
    return float(d @ d), float(v @ v)


def log_det_from_spectrum(eigenvalues, rho: float) -> float:
    return float(np.sum(np.log1p(rho * (eigenvalues - 1.0))))


def read_edge_csv(path, tract_ids=None) -> TractGraph:
    """Read a ``src,dst`` edge list.  Without ``tract_ids`` the tract set
    is the union of edge endpoints."""
    edges = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["src", "dst"]:
            raise GraphError(f"{path}: expected header 'src,dst'", header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise GraphError(f"{path}:{lineno}: malformed edge row", row)
            edges.append((row[0], row[1]))
    if tract_ids is None:
        tract_ids = sorted({_canonical_id(t) for e in edges for t in e})
    return build_graph(edges, tract_ids)


def write_edge_csv(graph: TractGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"])
        for a, b in sorted(graph.edges):
            w.writerow([a, b])
