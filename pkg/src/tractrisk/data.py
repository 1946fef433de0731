"""Delivery records, tract-year covariates and the standardized design.

File formats (CSV, header required):

* deliveries: ``tract_id,year,outcome,age,black,hispanic,asian,multiple_birth``
  with optional ``longitude,latitude`` (address coordinates) and
  ``synthetic`` (rebalancing flag) columns;
* tract covariates: ``tract_id,year`` followed by the fourteen
  neighbourhood columns in :data:`NEIGHBORHOOD_COLUMNS`.

Reals are written with 17 significant digits so files round-trip exactly.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .graph import TractGraph, car_precision

logger = logging.getLogger(__name__)

__all__ = [
    "PATIENT_COLUMNS",
    "INDICATOR_COLUMNS",
    "NEIGHBORHOOD_COLUMNS",
    "PROPORTION_COLUMNS",
    "LOG_COUNT_COLUMNS",
    "DELIVERY_COLUMNS",
    "COVARIATE_COLUMNS",
    "DataError",
    "DeliveryRecord",
    "Cohort",
    "Standardization",
    "DesignMatrix",
    "SimulationTruth",
    "read_deliveries_csv",
    "read_covariates_csv",
    "write_deliveries_csv",
    "write_covariates_csv",
    "load_cohort",
    "assemble_design",
    "destandardize_coefficients",
    "intercept_shift",
    "vif",
    "split_train_validation",
    "simulate_cohort",
    "SYNTHETIC_DEFAULTS",
]

PATIENT_COLUMNS = ["age", "black", "hispanic", "asian", "multiple_birth"]
INDICATOR_COLUMNS = ["black", "hispanic", "asian", "multiple_birth"]
PROPORTION_COLUMNS = [
    "proportion_asian",
    "proportion_hispanic",
    "proportion_black",
    "proportion_women",
    "poverty",
    "public_assistance",
    "labor_force",
    "recent_birth",
    "high_school_grad",
    "college_grad",
]
LOG_COUNT_COLUMNS = ["occupied_housing", "housing_violation", "violent_crime", "nonviolent_crime"]
NEIGHBORHOOD_COLUMNS = PROPORTION_COLUMNS + LOG_COUNT_COLUMNS
DELIVERY_COLUMNS = ["tract_id", "year", "outcome"] + PATIENT_COLUMNS
COVARIATE_COLUMNS = ["tract_id", "year"] + NEIGHBORHOOD_COLUMNS
COORD_COLUMNS = ["longitude", "latitude"]

_INT_COLUMNS = {"year", "outcome", "synthetic"} | set(INDICATOR_COLUMNS)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class DeliveryRecord:
    tract_id: str
    year: int
    outcome: int
    patient_covariates: Mapping[str, float]


def _fmt(value, column):
    if column == "tract_id":
        return str(value)
    if column in _INT_COLUMNS:
        return str(int(value))
    return format(float(value), ".17g")


def _read_csv(path, required, optional=()):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}: header missing columns {missing}")
        unknown = [c for c in header if c not in required and c not in optional]
        if unknown:
            raise DataError(f"{path}: unexpected columns {unknown}")
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not x.strip() for x in raw):
                continue
            if len(raw) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(raw)}")
            rec = {}
            for col, val in zip(header, raw):
                val = val.strip()
                try:
                    if col == "tract_id":
                        if not val:
                            raise ValueError("empty tract id")
                        rec[col] = val
                    elif col in _INT_COLUMNS:
                        f = float(val)
                        if f != int(f):
                            raise ValueError(f"non-integer {val!r}")
                        rec[col] = int(f)
                    else:
                        f = float(val)
                        if not math.isfinite(f):
                            raise ValueError(f"non-finite {val!r}")
                        rec[col] = f
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: bad value in column {col!r}: {exc}") from None
            rows.append(rec)
    cols = [c for c in header]
    return pd.DataFrame(rows, columns=cols)


def read_deliveries_csv(path) -> pd.DataFrame:
    df = _read_csv(path, DELIVERY_COLUMNS, COORD_COLUMNS + ["synthetic"])
    if df.empty:
        raise DataError(f"{path}: empty cohort (no delivery rows)")
    bad = ~df["outcome"].isin([0, 1])
    if bad.any():
        raise DataError(f"{path}:{int(np.flatnonzero(bad.values)[0]) + 2}: outcome must be 0 or 1")
    return _order_deliveries(df)


def read_covariates_csv(path) -> pd.DataFrame:
    df = _read_csv(path, COVARIATE_COLUMNS)
    if df.empty:
        raise DataError(f"{path}: no covariate rows")
    return df[COVARIATE_COLUMNS]


def _order_deliveries(df):
    cols = DELIVERY_COLUMNS + [c for c in COORD_COLUMNS + ["synthetic"] if c in df.columns]
    return df[cols]


def _write_frame(df, path, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in df[columns].itertuples(index=False, name=None):
            w.writerow([_fmt(v, c) for v, c in zip(row, columns)])


def write_deliveries_csv(cohort_or_frame, path) -> None:
    df = cohort_or_frame.deliveries if isinstance(cohort_or_frame, Cohort) else cohort_or_frame
    _write_frame(df, path, list(_order_deliveries(df).columns))


def write_covariates_csv(cohort_or_frame, path) -> None:
    df = cohort_or_frame.covariates if isinstance(cohort_or_frame, Cohort) else cohort_or_frame
    df = df.sort_values(["tract_id", "year"], kind="mergesort")
    _write_frame(df, path, COVARIATE_COLUMNS)


@dataclass(frozen=True, eq=False)
class Cohort:
    """Validated deliveries joined to tract-year covariates on a graph.

    ``deliveries`` and ``covariates`` are pandas frames with the CSV
    schemas; both are treated as read-only.
    """

    deliveries: pd.DataFrame
    covariates: pd.DataFrame
    graph: TractGraph

    def __post_init__(self):
        d = self.deliveries
        for col in DELIVERY_COLUMNS:
            if col not in d.columns:
                raise DataError(f"deliveries missing column {col!r}")
        if len(d):
            if not d["outcome"].isin([0, 1]).all():
                raise DataError("outcome must be 0 or 1")
            for col in INDICATOR_COLUMNS:
                if not d[col].isin([0, 1]).all():
                    raise DataError(f"indicator column {col!r} must be 0 or 1")
            unknown = sorted(set(d["tract_id"]) - set(self.graph.tract_ids))
            if unknown:
                raise DataError(f"deliveries reference tracts not in graph: {unknown[:10]}")
        cov = self.covariates
        if cov.duplicated(["tract_id", "year"]).any():
            dup = cov[cov.duplicated(["tract_id", "year"])].iloc[0]
            raise DataError(f"duplicate covariate row for ({dup['tract_id']}, {dup['year']})")
        for col in PROPORTION_COLUMNS:
            v = cov[col].to_numpy(float)
            if np.any((v < 0) | (v > 1)):
                raise DataError(f"proportion column {col!r} outside [0, 1]")
        if len(d):
            keys = set(zip(cov["tract_id"], cov["year"]))
            for t, y in zip(d["tract_id"], d["year"]):
                if (t, y) not in keys:
                    raise DataError(f"no covariates for observed (tract, year) = ({t}, {y})")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def N(self) -> int:
        return len(self.deliveries)

    @property
    def outcome(self) -> np.ndarray:
        return self.deliveries["outcome"].to_numpy(dtype=np.float64)

    @property
    def tract_index(self) -> np.ndarray:
        idx = self.graph.index
        return np.fromiter((idx[t] for t in self.deliveries["tract_id"]), dtype=np.int64,
                           count=self.N)

    @property
    def m(self) -> np.ndarray:
        """Deliveries per tract, in graph order."""
        return np.bincount(self.tract_index, minlength=self.n)

    @property
    def years(self) -> list:
        return sorted(set(int(y) for y in self.deliveries["year"]))

    @property
    def records(self) -> list:
        out = []
        pc = self.deliveries[PATIENT_COLUMNS].to_dict("records")
        for (t, y, o), cov in zip(self.deliveries[["tract_id", "year", "outcome"]].itertuples(
                index=False, name=None), pc):
            out.append(DeliveryRecord(t, int(y), int(o), cov))
        return out

    def counts_by_period(self) -> dict:
        """Per-tract delivery counts for every year present in the cohort."""
        years = self.years
        tab = pd.crosstab(self.deliveries["tract_id"], self.deliveries["year"])
        tab = tab.reindex(index=list(self.graph.tract_ids), columns=years, fill_value=0)
        return {t: tab.loc[t].to_numpy() for t in self.graph.tract_ids}

    def with_deliveries(self, deliveries: pd.DataFrame, graph=None) -> "Cohort":
        return Cohort(deliveries.reset_index(drop=True), self.covariates, graph or self.graph)

    def tract_covariate_means(self) -> pd.DataFrame:
        """Per-tract mean of each neighbourhood covariate over the years
        present in the deliveries."""
        keys = self.deliveries[["tract_id", "year"]].drop_duplicates()
        rows = self.covariates.merge(keys, on=["tract_id", "year"])
        return rows.groupby("tract_id")[NEIGHBORHOOD_COLUMNS].mean()


def load_cohort(deliveries_path, covariates_path, graph: TractGraph) -> Cohort:
    """Read and validate a cohort.

    Records whose tract has covariates but is absent from ``graph`` (a
    pruned tract) are dropped with a log message; tracts unknown to both
    are an error.
    """
    deliveries = read_deliveries_csv(deliveries_path)
    covariates = read_covariates_csv(covariates_path)
    in_graph = deliveries["tract_id"].isin(graph.tract_ids)
    if not in_graph.all():
        known = set(covariates["tract_id"])
        outside = deliveries.loc[~in_graph, "tract_id"]
        unknown = sorted(set(outside) - known)
        if unknown:
            raise DataError(f"{deliveries_path}: unknown tracts {unknown[:10]}")
        logger.warning("dropping %d records in %d pruned tracts", int((~in_graph).sum()),
                       outside.nunique())
        deliveries = deliveries.loc[in_graph].reset_index(drop=True)
    if deliveries.empty:
        raise DataError(f"{deliveries_path}: empty cohort after dropping pruned tracts")
    covariates = covariates[covariates["tract_id"].isin(graph.tract_ids)].reset_index(drop=True)
    return Cohort(deliveries, covariates, graph)


# ---------------------------------------------------------------------------
# design matrix


@dataclass(frozen=True)
class Standardization:
    columns: tuple
    mean: np.ndarray
    sd: np.ndarray
    is_continuous: np.ndarray

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "mean": [float(x) for x in self.mean],
            "sd": [float(x) for x in self.sd],
            "is_continuous": [bool(x) for x in self.is_continuous],
        }

    @classmethod
    def from_dict(cls, d) -> "Standardization":
        return cls(tuple(d["columns"]), np.asarray(d["mean"], float), np.asarray(d["sd"], float),
                   np.asarray(d["is_continuous"], bool))


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    X: np.ndarray
    tract_index: np.ndarray
    standardization: Standardization

    @property
    def columns(self) -> tuple:
        return self.standardization.columns

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _raw_design(cohort: Cohort, columns):
    d = cohort.deliveries
    pat = [c for c in columns if c in PATIENT_COLUMNS]
    nbh = [c for c in columns if c in NEIGHBORHOOD_COLUMNS]
    other = [c for c in columns if c not in PATIENT_COLUMNS and c not in NEIGHBORHOOD_COLUMNS]
    if other:
        raise DataError(f"unknown design columns {other}")
    X = np.empty((len(d), len(columns)))
    if nbh:
        joined = d[["tract_id", "year"]].merge(cohort.covariates, on=["tract_id", "year"],
                                               how="left", validate="many_to_one")
        if joined[nbh].isna().any().any():
            raise DataError("missing neighbourhood covariates for some (tract, year)")
    for k, c in enumerate(columns):
        X[:, k] = d[c].to_numpy(float) if c in PATIENT_COLUMNS else joined[c].to_numpy(float)
    return X


def assemble_design(cohort: Cohort, standardize: bool = True, standardization=None,
                    columns: Sequence[str] | None = None) -> DesignMatrix:
    """Join patient and neighbourhood covariates into the N x p design.

    Columns default to the patient covariates followed by the fourteen
    neighbourhood covariates.  Continuous columns are centred and scaled by
    the sample sd (divisor N - 1); indicators are left alone.  Passing a
    fitted ``standardization`` (e.g. from the training split) reuses it.
    """
    if standardization is not None:
        columns = list(standardization.columns)
    elif columns is None:
        columns = PATIENT_COLUMNS + NEIGHBORHOOD_COLUMNS
    else:
        order = PATIENT_COLUMNS + NEIGHBORHOOD_COLUMNS
        columns = sorted(columns, key=lambda c: order.index(c) if c in order else len(order))
    X = _raw_design(cohort, columns)
    is_cont = np.array([c not in INDICATOR_COLUMNS for c in columns], dtype=bool)
    if standardization is None:
        mean = np.zeros(len(columns))
        sd = np.ones(len(columns))
        if standardize:
            if X.shape[0] < 2:
                raise DataError("standardization needs at least two records")
            for k in np.flatnonzero(is_cont):
                mu = X[:, k].mean()
                s = X[:, k].std(ddof=1)
                if not s > 0:
                    raise DataError(f"zero-variance continuous column {columns[k]!r}")
                mean[k], sd[k] = mu, s
        standardization = Standardization(tuple(columns), mean, sd, is_cont)
    Xs = (X - standardization.mean) / standardization.sd
    Xs = np.ascontiguousarray(Xs)
    Xs.setflags(write=False)
    return DesignMatrix(Xs, cohort.tract_index, standardization)


def destandardize_coefficients(beta_samples, standardization: Standardization) -> np.ndarray:
    """Coefficients per unit of the original covariate: ``beta / sd``.

    The model has no global intercept; the location shift
    ``-sum(beta * mean / sd)`` is absorbed by the random effects (see
    :func:`intercept_shift`).
    """
    b = np.asarray(beta_samples, dtype=float)
    return b / standardization.sd


def intercept_shift(beta_samples, standardization: Standardization) -> np.ndarray:
    """Constant added to every alpha_i when moving to the original scale."""
    b = np.asarray(beta_samples, dtype=float)
    return -(b * (standardization.mean / standardization.sd)).sum(axis=-1)


def vif(design) -> np.ndarray:
    """Variance inflation factor of each column (``inf`` when collinear)."""
    X = design.X if isinstance(design, DesignMatrix) else np.asarray(design, dtype=float)
    N, p = X.shape
    if p < 2 or N <= p:
        raise DataError("VIF needs p >= 2 columns and N > p rows")
    out = np.empty(p)
    for k in range(p):
        y = X[:, k]
        A = np.column_stack([np.ones(N), np.delete(X, k, axis=1)])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        sst = np.sum((y - y.mean()) ** 2)
        if sst == 0:
            out[k] = np.inf
            continue
        one_minus_r2 = (resid @ resid) / sst
        out[k] = np.inf if one_minus_r2 < 1e-12 else 1.0 / one_minus_r2
    return out


def split_train_validation(cohort: Cohort, validation_years):
    vy = set(int(y) for y in validation_years)
    years = cohort.deliveries["year"]
    if vy:
        absent = sorted(vy - set(int(y) for y in years))
        if absent:
            raise DataError(f"validation years not present in cohort: {absent}")
    mask = years.isin(vy).to_numpy()
    if mask.all():
        raise DataError("validation split leaves the training set empty")
    train = cohort.with_deliveries(cohort.deliveries.loc[~mask])
    valid = cohort.with_deliveries(cohort.deliveries.loc[mask])
    return train, valid


# ---------------------------------------------------------------------------
# synthetic cohorts

SYNTHETIC_DEFAULTS = {
    "proportion_beta": (2.0, 5.0),
    "log_count_normal": (4.0, 1.0),
    "year_jitter_sd": 0.02,        # per-year noise on logit proportions / log counts
    "age_normal": (29.0, 6.0),
    "age_range": (15.0, 50.0),
    "race_probs": {"black": 0.45, "hispanic": 0.08, "asian": 0.07},  # remainder white
    "multiple_birth_rate": 0.03,
    "years": tuple(range(2010, 2018)),
}


@dataclass
class SimulationTruth:
    alpha0: float
    beta: Mapping[str, float]
    tau_alpha: float
    rho: float
    alpha: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "alpha0": float(self.alpha0),
            "beta": {k: float(v) for k, v in self.beta.items()},
            "tau_alpha": float(self.tau_alpha),
            "rho": float(self.rho),
            "alpha": None if self.alpha is None else [float(a) for a in self.alpha],
        }


def _sample_car_effects(graph, alpha0, tau_alpha, rho, rng):
    q = car_precision(graph, rho).dense()
    chol = np.linalg.cholesky(q)
    z = rng.standard_normal(graph.n)
    # x = L^{-T} z has covariance Q^{-1}
    x = np.linalg.solve(chol.T, z)
    return alpha0 + tau_alpha * x


def simulate_cohort(graph: TractGraph, truth, m_per_tract, rng, centroids=None,
                    cell_size: float = 1.0, years=None, config=None):
    """Draw a synthetic cohort from the CAR logistic model.

    ``truth`` is a :class:`SimulationTruth` or dict with ``alpha0``, ``beta``
    (mapping column -> coefficient on the raw covariate scale; missing
    columns get 0), ``tau_alpha`` and ``rho``.  Returns ``(cohort, truth)``
    with the sampled random effects stored in ``truth.alpha``.
    """
    from .polyagamma import _generator

    gen = _generator(rng)
    cfg = dict(SYNTHETIC_DEFAULTS)
    if config:
        cfg.update(config)
    if isinstance(truth, Mapping):
        truth = SimulationTruth(truth["alpha0"], dict(truth.get("beta", {})),
                                truth["tau_alpha"], truth["rho"])
    if not 0 <= truth.rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    if not truth.tau_alpha >= 0:
        raise ValueError("tau_alpha must be non-negative")
    unknown = set(truth.beta) - set(PATIENT_COLUMNS + NEIGHBORHOOD_COLUMNS)
    if unknown:
        raise ValueError(f"unknown coefficient names {sorted(unknown)}")
    years = tuple(years or cfg["years"])
    n = graph.n

    if truth.tau_alpha == 0:
        alpha = np.full(n, float(truth.alpha0))
    else:
        alpha = _sample_car_effects(graph, truth.alpha0, truth.tau_alpha, truth.rho, gen)

    # tract-year covariates
    a, b = cfg["proportion_beta"]
    mu, sd = cfg["log_count_normal"]
    jit = cfg["year_jitter_sd"]
    base_p = gen.beta(a, b, size=(n, len(PROPORTION_COLUMNS)))
    base_c = gen.normal(mu, sd, size=(n, len(LOG_COUNT_COLUMNS)))
    rows = []
    logit_base = np.log(base_p) - np.log1p(-base_p)
    for y in years:
        lp = logit_base + jit * gen.standard_normal(base_p.shape)
        props = 1.0 / (1.0 + np.exp(-lp))
        counts = base_c + jit * gen.standard_normal(base_c.shape)
        for i, t in enumerate(graph.tract_ids):
            rows.append([t, int(y)] + list(props[i]) + list(counts[i]))
    covariates = pd.DataFrame(rows, columns=COVARIATE_COLUMNS)

    m = np.broadcast_to(np.asarray(m_per_tract, dtype=np.int64), (n,))
    tract_idx = np.repeat(np.arange(n), m)
    N = tract_idx.size
    yrs = np.asarray(years)[gen.integers(0, len(years), size=N)]
    am, asd = cfg["age_normal"]
    lo, hi = cfg["age_range"]
    age = np.clip(gen.normal(am, asd, size=N), lo, hi)
    rp = cfg["race_probs"]
    cats = gen.choice(4, size=N, p=[rp["black"], rp["hispanic"], rp["asian"],
                                    1.0 - rp["black"] - rp["hispanic"] - rp["asian"]])
    deliveries = pd.DataFrame({
        "tract_id": np.asarray(graph.tract_ids, dtype=object)[tract_idx],
        "year": yrs.astype(np.int64),
        "outcome": np.zeros(N, dtype=np.int64),
        "age": age,
        "black": (cats == 0).astype(np.int64),
        "hispanic": (cats == 1).astype(np.int64),
        "asian": (cats == 2).astype(np.int64),
        "multiple_birth": (gen.random(N) < cfg["multiple_birth_rate"]).astype(np.int64),
    })
    if centroids is not None:
        cxy = np.array([centroids[t] for t in graph.tract_ids])[tract_idx]
        jitter = (gen.random((N, 2)) - 0.5) * cell_size * 0.98
        deliveries["longitude"] = cxy[:, 0] + jitter[:, 0]
        deliveries["latitude"] = cxy[:, 1] + jitter[:, 1]

    eta = alpha[tract_idx].copy()
    if truth.beta:
        joined = deliveries[["tract_id", "year"]].merge(covariates, on=["tract_id", "year"],
                                                        how="left")
        for name, coef in truth.beta.items():
            col = deliveries[name] if name in PATIENT_COLUMNS else joined[name]
            eta += float(coef) * col.to_numpy(float)
    prob = 1.0 / (1.0 + np.exp(-eta))
    deliveries["outcome"] = (gen.random(N) < prob).astype(np.int64)
    truth.alpha = alpha
    return Cohort(deliveries, covariates, graph), truth
