"""Corrections for rare outcomes: geography-aware SMOTE and likelihood weights.

SMOTE here works only in the space of patient covariates, delivery year
and address coordinates.  A synthetic case takes the midpoint of a seed
case and one of its k nearest minority neighbours for the continuous
features, the majority vote of the neighbours for indicators, and is then
placed in whichever tract contains its coordinates, inheriting that
tract's real covariates.  Neighbourhood covariates are never synthesised.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .data import COORD_COLUMNS, INDICATOR_COLUMNS, Cohort
from .polyagamma import _generator

logger = logging.getLogger(__name__)

__all__ = [
    "SmoteConfig",
    "WeightScheme",
    "compute_weights",
    "observation_weights",
    "rebalanced_spec",
    "smote_rebalance",
]

_CONTINUOUS = ["age", "year", "longitude", "latitude"]
_MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    target_ratio: float = 1.0
    undersample_majority: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not 0 < self.target_ratio <= 1:
            raise ValueError("target_ratio must lie in (0, 1]")


@dataclass(frozen=True)
class WeightScheme:
    kind: str
    w_case: float
    w_control: float
    tau: float | None = None

    def __post_init__(self):
        if self.kind not in ("unit", "case_control", "population"):
            raise ValueError(f"unknown weight scheme {self.kind!r}")
        if not (self.w_case > 0 and self.w_control > 0):
            raise ValueError("weights must be positive")


def compute_weights(cohort, kind: str = "case_control", tau: float | None = None) -> WeightScheme:
    """Class weights for the reweighted likelihood.

    ``case_control``: (1, n1/n0); ``population``: (tau/ybar,
    (1-tau)/(1-ybar)) with ``tau`` the population case fraction;
    ``unit``: (1, 1).
    """
    y = cohort.outcome if hasattr(cohort, "outcome") else np.asarray(cohort, dtype=float)
    n1 = int(np.sum(y == 1))
    n0 = int(np.sum(y == 0))
    if n1 == 0 or n0 == 0:
        raise ValueError("weights need both cases and controls")
    if kind == "unit":
        return WeightScheme("unit", 1.0, 1.0)
    if kind == "case_control":
        return WeightScheme("case_control", 1.0, n1 / n0)
    if kind == "population":
        if tau is None or not 0 < tau < 1:
            raise ValueError("population weighting needs tau in (0, 1)")
        ybar = n1 / (n1 + n0)
        return WeightScheme("population", tau / ybar, (1.0 - tau) / (1.0 - ybar), tau)
    raise ValueError(f"unknown weight scheme {kind!r}")


def observation_weights(cohort, scheme: WeightScheme) -> np.ndarray:
    y = cohort.outcome if hasattr(cohort, "outcome") else np.asarray(cohort, dtype=float)
    return np.where(y == 1, scheme.w_case, scheme.w_control).astype(float)


def rebalanced_spec(base, weights: WeightScheme, cohort=None):
    """``base`` with per-observation weights set by class.  The unit scheme
    returns ``base`` itself."""
    if weights.kind == "unit" or (weights.w_case == 1.0 and weights.w_control == 1.0):
        return base
    if cohort is None:
        raise ValueError("a cohort is needed to expand class weights per observation")
    return replace(base, weights=observation_weights(cohort, weights))


def _record_coordinates(cohort, geometry):
    d = cohort.deliveries
    if all(c in d.columns for c in COORD_COLUMNS):
        return d[COORD_COLUMNS].to_numpy(float)
    # fall back to tract centroids
    return np.array([geometry.centroid(t) for t in d["tract_id"]], dtype=float)


def _vote(values, seed_value):
    vals, counts = np.unique(values, return_counts=True)
    top = vals[counts == counts.max()]
    if seed_value in top:
        return seed_value
    return top.min()


def smote_rebalance(cohort: Cohort, geometry, config: SmoteConfig = SmoteConfig(), rng=None):
    """Rebalance a (training) cohort with geography-aware SMOTE.

    Up to one synthetic case is generated per minority record (fewer if
    the target ratio is reached sooner); without undersampling, as many as
    needed.  The majority class is then randomly undersampled to
    ``target_ratio``.  The returned cohort carries a ``synthetic`` column
    and ``longitude``/``latitude`` columns.
    """
    gen = _generator(rng) if rng is not None else np.random.default_rng(config.seed)
    d = cohort.deliveries.reset_index(drop=True)
    y = d["outcome"].to_numpy()
    n1, n0 = int((y == 1).sum()), int((y == 0).sum())
    minority = 1 if n1 <= n0 else 0
    min_idx = np.flatnonzero(y == minority)
    maj_idx = np.flatnonzero(y != minority)
    n_min, n_maj = len(min_idx), len(maj_idx)
    if n_min < 2:
        raise ValueError("SMOTE needs at least two minority records")

    coords = _record_coordinates(cohort, geometry)
    base = d.copy()
    base["longitude"], base["latitude"] = coords[:, 0], coords[:, 1]
    if "synthetic" not in base.columns:
        base["synthetic"] = 0

    needed = max(0, math.ceil(config.target_ratio * n_maj - 1e-9) - n_min)
    n_syn = min(needed, n_min) if config.undersample_majority else needed
    if n_syn == 0 and n_min >= config.target_ratio * n_maj - 1e-9:
        return cohort.with_deliveries(base)

    feats = base.loc[min_idx, _CONTINUOUS].to_numpy(float)
    sd = feats.std(axis=0)
    sd[sd == 0] = 1.0
    scaled = (feats - feats.mean(axis=0)) / sd
    k = min(config.k_neighbors, n_min - 1)
    _, nbrs = cKDTree(scaled).query(scaled, k=k + 1)
    nbrs = np.atleast_2d(nbrs)[:, 1:]

    observed_years = np.array(sorted(set(int(v) for v in base["year"])))
    cov_keys = set(zip(cohort.covariates["tract_id"], cohort.covariates["year"]))
    graph_ids = set(cohort.graph.tract_ids)
    seeds = gen.permutation(n_min)
    seeds = np.resize(seeds, n_syn) if n_syn > n_min else seeds[:n_syn]

    rows = []
    skipped = 0
    for s in seeds:
        seed_row = base.loc[min_idx[s]]
        cand = nbrs[s]
        made = False
        for _ in range(_MAX_ATTEMPTS):
            j = cand[gen.integers(len(cand))]
            other = base.loc[min_idx[j]]
            mid = {c: 0.5 * (float(seed_row[c]) + float(other[c])) for c in _CONTINUOUS}
            year = int(observed_years[np.argmin(np.abs(observed_years - mid["year"]))])
            tract = geometry.locate(mid["longitude"], mid["latitude"])
            if tract is None or tract not in graph_ids or (tract, year) not in cov_keys:
                continue
            rec = {"tract_id": tract, "year": year, "outcome": minority, "age": mid["age"],
                   "longitude": mid["longitude"], "latitude": mid["latitude"], "synthetic": 1}
            neigh = base.loc[min_idx[cand]]
            for c in INDICATOR_COLUMNS:
                rec[c] = int(_vote(neigh[c].to_numpy(), int(seed_row[c])))
            rows.append(rec)
            made = True
            break
        if not made:
            skipped += 1
    if skipped:
        warnings.warn(f"SMOTE skipped {skipped} synthetic cases whose coordinates did not "
                      f"resolve to a usable tract", stacklevel=2)

    synth = pd.DataFrame(rows, columns=list(base.columns))
    n_min_new = n_min + len(synth)
    keep_maj = maj_idx
    if config.undersample_majority:
        target_maj = int(round(n_min_new / config.target_ratio))
        if target_maj < n_maj:
            keep_maj = np.sort(gen.choice(maj_idx, size=target_maj, replace=False))
    keep = np.sort(np.concatenate([min_idx, keep_maj]))
    out = pd.concat([base.loc[keep], synth], ignore_index=True)
    for c in ["year", "outcome", "synthetic"] + INDICATOR_COLUMNS:
        out[c] = out[c].astype(np.int64)
    logger.info("SMOTE: %d synthetic minority cases, majority %d -> %d", len(synth), n_maj,
                len(keep_maj))
    return cohort.with_deliveries(out)
