"""Second-stage analysis on posterior draws.

Patient risk ``p_ij = logistic(alpha_i + x_ij' beta)`` per draw; tract
risk ``p_i`` is the mean of ``p_ij`` over the tract's deliveries; tiers
come from 1-d k-means on the posterior means of ``p_i``; tier risk
``p_c`` is the mean of member ``p_i`` per draw.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import stats
from scipy.special import expit

from .inference import credible_interval

logger = logging.getLogger(__name__)

__all__ = [
    "TIERS",
    "PatientRisk",
    "NeighborhoodRisk",
    "ClusterRiskPosterior",
    "TierAssignment",
    "patient_risks",
    "patient_risk_matrix",
    "neighborhood_risks",
    "kmeans_stratify",
    "cluster_risk_posteriors",
    "cluster_covariate_analysis",
    "pairwise_comparison",
    "export_random_effect_map",
    "write_neighborhood_csv",
    "write_cluster_json",
    "annotate_geojson",
]

TIERS = ("lower", "moderate", "higher")


@dataclass(eq=False)
class PatientRisk:
    record: int
    tract_id: str
    theta_draws: np.ndarray = field(repr=False)

    @property
    def p_draws(self) -> np.ndarray:
        return expit(self.theta_draws)


@dataclass(eq=False)
class NeighborhoodRisk:
    tract_id: str
    m: int
    p_draws: np.ndarray = field(repr=False)
    p_mean: float
    ci_low: float
    ci_high: float


@dataclass(eq=False)
class ClusterRiskPosterior:
    tier: str
    members: list
    p_draws: np.ndarray = field(repr=False)
    p_mean: float
    ci_low: float
    ci_high: float

    @property
    def n_c(self) -> int:
        return len(self.members)


def patient_risk_matrix(samples, design, tract_ids=None) -> np.ndarray:
    """(S, N) matrix of log-odds draws for the rows of ``design``.

    ``design.tract_index`` must index the fitted random effects; pass
    ``tract_ids`` (the design's tract order) to re-map when the design
    was built on a different graph.
    """
    alpha = np.atleast_2d(samples["alpha"])
    beta = np.atleast_2d(samples["beta"])
    idx = np.asarray(design.tract_index)
    if tract_ids is not None:
        fitted = {t: k for k, t in enumerate(samples.tract_ids)}
        missing = sorted({tract_ids[i] for i in np.unique(idx)} - set(fitted))
        if missing:
            raise KeyError(f"no fitted random effect for tracts {missing[:10]}")
        remap = np.array([fitted.get(t, -1) for t in tract_ids])
        idx = remap[idx]
    elif idx.size and idx.max() >= alpha.shape[1]:
        raise KeyError("design references tracts without a fitted random effect")
    return alpha[:, idx] + beta @ np.asarray(design.X).T


def patient_risks(samples, design, tract_ids=None) -> list:
    theta = patient_risk_matrix(samples, design, tract_ids)
    ids = tract_ids if tract_ids is not None else samples.tract_ids
    idx = np.asarray(design.tract_index)
    return [PatientRisk(j, ids[idx[j]], theta[:, j]) for j in range(theta.shape[1])]


def neighborhood_risks(patient, cohort, level: float = 0.95):
    """Per-tract risk posteriors.

    ``patient`` is a list of :class:`PatientRisk` or an (S, N) log-odds
    matrix aligned with ``cohort.deliveries``.  Tracts without records are
    skipped and returned in the second element.
    """
    if isinstance(patient, np.ndarray):
        p = expit(patient)
    else:
        p = np.column_stack([r.p_draws for r in patient]) if patient else np.zeros((1, 0))
    idx = cohort.tract_index
    n = cohort.n
    m = np.bincount(idx, minlength=n)
    # per-draw sums by tract: p (S, N) @ one-hot (N, n)
    onehot = sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(n, idx.size))
    sums = np.asarray((onehot @ p.T).T)
    out, skipped = [], []
    for i, t in enumerate(cohort.graph.tract_ids):
        if m[i] == 0:
            skipped.append(t)
            continue
        draws = sums[:, i] / m[i]
        lo, hi = credible_interval(draws, level)
        out.append(NeighborhoodRisk(t, int(m[i]), draws, float(draws.mean()), lo, hi))
    if skipped:
        warnings.warn(f"{len(skipped)} tracts have no records and were skipped", stacklevel=2)
    return out, skipped


@dataclass(eq=False)
class TierAssignment:
    tract_ids: list
    labels: np.ndarray         # 0 = lower, 1 = moderate, 2 = higher (for k = 3)
    centers: np.ndarray
    wcss: float

    def tier_of(self, tract_id) -> str:
        k = self.labels[self.tract_ids.index(tract_id)]
        return tier_name(int(k), len(self.centers))

    def members(self, k: int) -> list:
        return [t for t, lab in zip(self.tract_ids, self.labels) if lab == k]


def tier_name(k: int, n_clusters: int) -> str:
    return TIERS[k] if n_clusters == 3 else f"tier{k}"


def _kmeans_once(x, k, gen, max_iter=300):
    # k-means++ seeding
    centers = [x[gen.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        tot = d2.sum()
        if tot == 0:
            centers.append(x[gen.integers(len(x))])
        else:
            centers.append(x[gen.choice(len(x), p=d2 / tot)])
    centers = np.array(centers, dtype=float)
    labels = None
    for _ in range(max_iter):
        new = np.argmin((x[:, None] - centers[None, :]) ** 2, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = x[labels == j]
            if members.size:
                centers[j] = members.mean()
    wcss = float(sum(((x[labels == j] - centers[j]) ** 2).sum() for j in range(k)))
    return labels, centers, wcss


def kmeans_stratify(p_hat, rng, k: int = 3, n_restarts: int = 50, tract_ids=None) -> TierAssignment:
    """1-d k-means (k-means++ seeding, best of ``n_restarts``) with labels
    ordered by ascending cluster mean."""
    from .polyagamma import _generator

    x = np.asarray(p_hat, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("risk values must be finite")
    if x.size < k:
        raise ValueError(f"need at least k = {k} values, got {x.size}")
    if np.unique(x).size < k:
        raise ValueError(f"fewer than k = {k} distinct values")
    gen = _generator(rng)
    best = None
    for _ in range(n_restarts):
        labels, centers, wcss = _kmeans_once(x, k, gen)
        if np.unique(labels).size < k:
            continue
        if best is None or wcss < best[2] - 1e-15 * max(1.0, abs(best[2])):
            best = (labels, centers, wcss)
    if best is None:
        raise ValueError("k-means failed to produce k non-empty clusters")
    labels, centers, wcss = best
    order = np.argsort(centers)
    relabel = np.empty(k, dtype=np.int64)
    relabel[order] = np.arange(k)
    ids = list(tract_ids) if tract_ids is not None else list(range(x.size))
    return TierAssignment(ids, relabel[labels], centers[order], wcss)


def cluster_risk_posteriors(neighborhoods, tiers: TierAssignment, level: float = 0.95) -> list:
    by_id = {r.tract_id: r for r in neighborhoods}
    out = []
    k = len(tiers.centers)
    for j in range(k):
        members = tiers.members(j)
        if not members:
            raise ValueError(f"tier {tier_name(j, k)!r} is empty")
        missing = [t for t in members if t not in by_id]
        if missing:
            raise KeyError(f"tier members without neighbourhood risk: {missing[:10]}")
        draws = np.mean([by_id[t].p_draws for t in members], axis=0)
        lo, hi = credible_interval(draws, level)
        out.append(ClusterRiskPosterior(tier_name(j, k), list(members), draws,
                                        float(draws.mean()), lo, hi))
    return out


def cluster_covariate_analysis(tract_covariates, tiers: TierAssignment, clusters,
                               alpha_level: float = 0.05) -> dict:
    """Tier-wise covariate contrasts.

    ``tract_covariates`` is a DataFrame indexed by tract id (e.g.
    :meth:`Cohort.tract_covariate_means`).  For each column: tier means, a
    one-way ANOVA across tiers, and the least-squares slope of the
    per-tract value on the tract's tier risk; ``direction`` is the slope
    sign when its p-value is below ``alpha_level``.
    """
    tier_risk = {c.tier: c.p_mean for c in clusters}
    k = len(tiers.centers)
    ids = [t for t in tiers.tract_ids if t in tract_covariates.index]
    labels = np.array([tiers.labels[tiers.tract_ids.index(t)] for t in ids])
    x = np.array([tier_risk[tier_name(int(lab), k)] for lab in labels])
    result = {}
    for col in tract_covariates.columns:
        v = tract_covariates.loc[ids, col].to_numpy(float)
        groups = [v[labels == j] for j in range(k) if np.any(labels == j)]
        entry = {"tier_means": {tier_name(j, k): float(v[labels == j].mean())
                                for j in range(k) if np.any(labels == j)}}
        if len(groups) < 2:
            raise ValueError("need at least two non-empty tiers")
        if np.ptp(v) == 0:
            entry.update(F=None, anova_p=None, slope=None, slope_p=None, direction=None,
                         applicable=False)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                f, fp = stats.f_oneway(*groups)
                lr = stats.linregress(x, v)
            direction = None
            if lr.pvalue < alpha_level and lr.slope != 0:
                direction = "+" if lr.slope > 0 else "-"
            entry.update(F=float(f), anova_p=float(fp), slope=float(lr.slope),
                         slope_p=float(lr.pvalue), direction=direction, applicable=True)
        result[col] = entry
    return result


def pairwise_comparison(tract_a, tract_b, neighborhoods) -> dict:
    """Posterior mean risks and odds ratios of two tracts, and the
    posterior mean of OR_b / OR_a (odds taken per draw from p_i)."""
    by_id = {r.tract_id: r for r in neighborhoods}
    for t in (tract_a, tract_b):
        if t not in by_id:
            raise KeyError(f"unknown tract {t!r}")
    pa, pb = by_id[tract_a].p_draws, by_id[tract_b].p_draws
    or_a = pa / (1.0 - pa)
    or_b = pb / (1.0 - pb)
    return {
        "tract_a": tract_a, "tract_b": tract_b,
        "p_a": float(pa.mean()), "p_b": float(pb.mean()),
        "or_a": float(or_a.mean()), "or_b": float(or_b.mean()),
        "or_ratio": float((or_b / or_a).mean()),
    }


def export_random_effect_map(samples, graph=None, path=None) -> dict:
    """Posterior mean random effect per tract; optionally written as CSV
    ``tract_id,alpha_mean``."""
    ids = graph.tract_ids if graph is not None else samples.tract_ids
    means = np.atleast_2d(samples["alpha"]).mean(axis=0)
    table = {t: float(v) for t, v in zip(ids, means)}
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tract_id", "alpha_mean"])
            for t, v in table.items():
                w.writerow([t, format(v, ".17g")])
    return table


def write_neighborhood_csv(neighborhoods, tiers: TierAssignment, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tract_id", "tier", "p_mean", "ci_low", "ci_high"])
        for r in neighborhoods:
            w.writerow([r.tract_id, tiers.tier_of(r.tract_id), format(r.p_mean, ".17g"),
                        format(r.ci_low, ".17g"), format(r.ci_high, ".17g")])


def write_cluster_json(clusters, tiers: TierAssignment, path, extra=None) -> None:
    doc = {
        "wcss": tiers.wcss,
        "centers": [float(c) for c in tiers.centers],
        "clusters": [{"tier": c.tier, "n_c": c.n_c, "members": c.members,
                      "p_mean": c.p_mean, "ci_low": c.ci_low, "ci_high": c.ci_high}
                     for c in clusters],
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def annotate_geojson(fc: dict, neighborhoods, tiers: TierAssignment, alpha_means: dict,
                     id_property=None) -> dict:
    """Copy of ``fc`` with ``p_mean``, ``tier`` and ``alpha_mean`` properties."""
    from .geometry import _feature_id

    by_id = {r.tract_id: r for r in neighborhoods}
    feats = []
    for feat in fc["features"]:
        t = _feature_id(feat, id_property)
        props = dict(feat.get("properties") or {})
        r = by_id.get(t)
        props["p_mean"] = None if r is None else r.p_mean
        props["tier"] = None if r is None else tiers.tier_of(t)
        props["alpha_mean"] = alpha_means.get(t)
        feats.append({**feat, "properties": props})
    return {**fc, "features": feats}
