"""Posterior summaries, MCMC diagnostics, information criteria and AUC."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata

from .data import DesignMatrix, Standardization, destandardize_coefficients

__all__ = [
    "CoefficientSummary",
    "DiagnosticsReport",
    "bayes_p",
    "credible_interval",
    "autocorrelation",
    "ess_and_mcse",
    "log_likelihood_terms",
    "dic",
    "waic",
    "auc",
    "auc_standard_error",
    "summarize_coefficients",
    "diagnostics",
    "write_summary_json",
    "write_diagnostics_csv",
]


def _draws(draws) -> np.ndarray:
    d = np.asarray(draws, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("no draws")
    return d


def bayes_p(draws) -> float:
    """Probability of direction: max(P(b > 0), P(b < 0)).

    Exact zeros belong to neither side; they are dropped from the
    denominator so the value stays in [0.5, 1].
    """
    d = _draws(draws)
    pos = int(np.count_nonzero(d > 0))
    neg = int(np.count_nonzero(d < 0))
    if pos + neg == 0:
        return 0.5
    return max(pos, neg) / (pos + neg)


def credible_interval(draws, level: float = 0.95):
    """Equal-tailed interval from linearly interpolated order statistics."""
    d = _draws(draws)
    if not 0 <= level < 1:
        raise ValueError(f"level must lie in [0, 1), got {level}")
    lo, hi = np.quantile(d, [(1 - level) / 2, (1 + level) / 2], method="linear")
    return float(lo), float(hi)


def autocorrelation(x, max_lag=None) -> np.ndarray:
    """Sample autocorrelation via FFT.  ``x`` is (draws,) or (chains, draws);
    chains are averaged."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m, S = x.shape
    xc = x - x.mean(axis=1, keepdims=True)
    nfft = 1 << int(math.ceil(math.log2(2 * S)))
    f = np.fft.rfft(xc, n=nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=nfft, axis=1)[:, :S] / S
    acov = acov.mean(axis=0)
    if acov[0] == 0:
        raise ValueError("constant chain has no autocorrelation")
    rho = acov / acov[0]
    if max_lag is not None:
        rho = rho[: max_lag + 1]
    return rho


def ess_and_mcse(draws):
    """Effective sample size (Geyer initial positive sequence) and MCSE.

    ``draws`` is (S,) or (chains, S).  Returns ``(ess, mcse)`` with
    ``mcse = sd / sqrt(ess)``.
    """
    x = np.atleast_2d(np.asarray(draws, dtype=float))
    total = x.size
    if total < 10:
        raise ValueError("need at least 10 draws")
    if np.ptp(x) == 0:
        raise ValueError("constant chain: ESS undefined")
    rho = autocorrelation(x)
    S = x.shape[1]
    tau = -1.0
    for k in range(0, S - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    tau = max(tau, 1.0 / math.log10(max(total, 10)))
    ess = min(total / tau, float(total))
    sd = float(np.std(x, ddof=1))
    return ess, sd / math.sqrt(ess)


# ---------------------------------------------------------------------------
# likelihood based criteria


def _log_lik_block(theta, y):
    # log p(y | theta) for Bernoulli-logit: y*theta - log(1 + e^theta)
    return y * theta - np.logaddexp(0.0, theta)


def _linear_predictor(alpha, beta, X, tract_index):
    alpha = np.atleast_2d(alpha)
    beta = np.atleast_2d(beta)
    return alpha[:, tract_index] + beta @ X.T


def log_likelihood_terms(samples, y, design: DesignMatrix, chunk: int = 4096):
    """Yield ``(slice, (S, chunk) log-likelihood block)`` over observations."""
    alpha, beta = samples["alpha"], samples["beta"]
    X, idx = design.X, design.tract_index
    y = np.asarray(y, dtype=float)
    for start in range(0, len(y), chunk):
        sl = slice(start, min(start + chunk, len(y)))
        theta = _linear_predictor(alpha, beta, X[sl], idx[sl])
        yield sl, _log_lik_block(theta, y[sl])


def _outcome(cohort_or_y):
    return cohort_or_y.outcome if hasattr(cohort_or_y, "outcome") else np.asarray(cohort_or_y, float)


def dic(samples, cohort, design: DesignMatrix):
    """``(DIC, p_D)`` with DIC = 2 mean(D) - D(posterior mean of alpha, beta)."""
    y = _outcome(cohort)
    S = np.atleast_2d(samples["alpha"]).shape[0]
    if S == 0:
        raise ValueError("no posterior draws")
    dev_sum = np.zeros(S)
    for _, ll in log_likelihood_terms(samples, y, design):
        dev_sum += -2.0 * ll.sum(axis=1)
    d_bar = float(dev_sum.mean())
    mean = {"alpha": np.atleast_2d(samples["alpha"]).mean(axis=0),
            "beta": np.atleast_2d(samples["beta"]).mean(axis=0)}
    d_hat = 0.0
    for _, ll in log_likelihood_terms(mean, y, design):
        d_hat += -2.0 * float(ll.sum())
    p_d = d_bar - d_hat
    return 2.0 * d_bar - d_hat, p_d


def waic(samples, cohort, design: DesignMatrix):
    """``(WAIC, p_W)`` using pointwise log predictive densities."""
    y = _outcome(cohort)
    S = np.atleast_2d(samples["alpha"]).shape[0]
    if S == 0:
        raise ValueError("no posterior draws")
    lppd = 0.0
    p_w = 0.0
    for _, ll in log_likelihood_terms(samples, y, design):
        lppd += float(np.sum(logsumexp(ll, axis=0) - math.log(S)))
        if S > 1:
            p_w += float(np.sum(np.var(ll, axis=0, ddof=1)))
    return -2.0 * lppd + 2.0 * p_w, p_w


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores get half credit."""
    s = np.asarray(scores, dtype=float).ravel()
    lab = np.asarray(labels).ravel()
    if s.shape != lab.shape:
        raise ValueError("scores and labels differ in length")
    pos = lab == 1
    n1 = int(pos.sum())
    n0 = int((lab == 0).sum())
    if n1 + n0 != lab.size:
        raise ValueError("labels must be 0/1")
    if n1 == 0 or n0 == 0:
        raise ValueError("AUC needs both classes present")
    r = rankdata(s)
    return float((r[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def auc_standard_error(a: float, n_pos: int, n_neg: int) -> float:
    """Hanley-McNeil standard error of an AUC estimate."""
    q1 = a / (2.0 - a)
    q2 = 2.0 * a * a / (1.0 + a)
    var = (a * (1 - a) + (n_pos - 1) * (q1 - a * a) + (n_neg - 1) * (q2 - a * a)) / (n_pos * n_neg)
    return math.sqrt(max(var, 0.0))


# ---------------------------------------------------------------------------
# summaries


@dataclass
class CoefficientSummary:
    name: str
    mean_log_or: float
    mean_or: float
    level: float
    ci_low: float
    ci_high: float
    bayes_p: float


def summarize_coefficients(samples, standardization: Standardization | None = None,
                           level: float = 0.95) -> list:
    """One :class:`CoefficientSummary` per coefficient, on the original
    covariate scale when ``standardization`` is given."""
    beta = np.atleast_2d(samples["beta"])
    if standardization is not None:
        beta = destandardize_coefficients(beta, standardization)
        names = standardization.columns
    else:
        names = getattr(samples, "beta_names", None) or tuple(f"x{k}" for k in range(beta.shape[1]))
    out = []
    for k, name in enumerate(names):
        d = beta[:, k]
        lo, hi = credible_interval(d, level)
        out.append(CoefficientSummary(str(name), float(d.mean()), float(np.exp(d).mean()),
                                      level, lo, hi, bayes_p(d)))
    return out


@dataclass
class DiagnosticsReport:
    params: list
    ess: np.ndarray
    mean: np.ndarray
    mcse: np.ndarray
    acf: np.ndarray
    dic: float | None = None
    p_d: float | None = None
    waic: float | None = None
    p_w: float | None = None


def _scalar_series(samples):
    """(name, (chains, draws)) pairs for every scalar parameter."""
    out = []
    for k, name in enumerate(samples.beta_names):
        out.append((f"beta[{name}]", samples.by_chain("beta")[:, :, k]))
    for name in ("alpha0", "tau_alpha", "tau_beta", "rho"):
        out.append((name, samples.by_chain(name)))
    return out


def diagnostics(samples, max_lag: int = 40, cohort=None, design=None) -> DiagnosticsReport:
    names, ess, mean, mcse, acfs = [], [], [], [], []
    for name, series in _scalar_series(samples):
        names.append(name)
        mean.append(float(series.mean()))
        try:
            e, m = ess_and_mcse(series)
            a = autocorrelation(series, max_lag)
        except ValueError:
            e, m = float("nan"), float("nan")
            a = np.full(min(max_lag + 1, series.shape[1]), np.nan)
        ess.append(e)
        mcse.append(m)
        acfs.append(np.pad(a, (0, max_lag + 1 - len(a)), constant_values=np.nan))
    rep = DiagnosticsReport(names, np.array(ess), np.array(mean), np.array(mcse), np.array(acfs))
    if cohort is not None and design is not None:
        rep.dic, rep.p_d = dic(samples, cohort, design)
        rep.waic, rep.p_w = waic(samples, cohort, design)
    return rep


def write_summary_json(summaries, path, extra=None) -> None:
    doc = {"coefficients": [asdict(s) for s in summaries]}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_diagnostics_csv(report: DiagnosticsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "ess", "mean", "mcse"])
        for name, e, m, s in zip(report.params, report.ess, report.mean, report.mcse):
            w.writerow([name, format(e, ".17g"), format(m, ".17g"), format(s, ".17g")])
