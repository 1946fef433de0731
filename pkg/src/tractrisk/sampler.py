"""Polya-Gamma Gibbs sampler for the Leroux-CAR mixed-effects logistic model.

Model::

    y_ij ~ Bernoulli(logistic(alpha_i + x_ij' beta))          (optionally ^ w_ij)
    alpha | alpha0, tau_a, rho ~ N(alpha0 1, tau_a^2 Q(rho)^-1)
    beta | b0, tau_b ~ N(b0, tau_b^2 I),  b0 ~ N(0, 100 I),  alpha0 ~ N(0, 100)
    tau_a, tau_b ~ half-Cauchy(0, s),   rho ~ U(0, 1)

One sweep updates omega -> alpha -> beta -> alpha0 -> b0 -> tau_a -> tau_b
-> rho.  Everything except the scales and rho is conjugate given the
Polya-Gamma latents; the scales use an independence Metropolis step whose
proposal is the inverse-gamma part of the conditional, and rho uses a
Beta random-walk proposal centred at the current value.

The independent random effects model is the ``rho = 0`` member of the
family (``model_kind="indRE"``).
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg.lapack import dpotrf, dpotrs, dtrtrs

from .graph import TractGraph, edge_quad_forms, log_det_from_spectrum
from .polyagamma import RandomStream, sample_pg1_array, sample_pg_array

logger = logging.getLogger(__name__)

__all__ = [
    "SamplerError",
    "ModelSpec",
    "McmcConfig",
    "ChainState",
    "ModelData",
    "PosteriorSamples",
    "prepare_model",
    "initial_state",
    "update_omega",
    "update_alpha",
    "update_beta",
    "update_alpha0",
    "update_b0",
    "mh_update_tau",
    "mh_update_rho",
    "alpha_conditional",
    "beta_conditional",
    "tau_acceptance_ratio",
    "rho_log_target",
    "rho_log_acceptance",
    "gibbs_sweep",
    "run_chain",
    "collect",
    "fit",
]


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ModelSpec:
    model_kind: str = "CAR"
    alpha0_prior_var: float = 100.0
    b0_prior_var: float = 100.0
    s_alpha: float = 1.0
    s_beta: float = 1.0
    weights: np.ndarray | None = None
    # hold rho fixed instead of sampling it (CAR only)
    fixed_rho: float | None = None

    def __post_init__(self):
        if self.model_kind not in ("CAR", "indRE"):
            raise ValueError(f"model_kind must be 'CAR' or 'indRE', got {self.model_kind!r}")
        if not (self.s_alpha > 0 and self.s_beta > 0):
            raise ValueError("half-Cauchy scales must be positive")
        if not (self.alpha0_prior_var > 0 and self.b0_prior_var > 0):
            raise ValueError("prior variances must be positive")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or np.any(~(w > 0)) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be a 1-d array of positive finite reals")
        if self.fixed_rho is not None and not 0 <= self.fixed_rho < 1:
            raise ValueError("fixed_rho must lie in [0, 1)")

    @property
    def samples_rho(self) -> bool:
        return self.model_kind == "CAR" and self.fixed_rho is None


@dataclass(frozen=True)
class McmcConfig:
    n_iterations: int = 5500
    burn_in: int = 500
    thin: int = 10
    n_chains: int = 2
    xi: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError(f"burn_in ({self.burn_in}) must be < n_iterations "
                             f"({self.n_iterations})")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if not self.xi > 0:
            raise ValueError("xi must be positive")

    @property
    def draws_per_chain(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thin


@dataclass
class ChainState:
    alpha: np.ndarray
    beta: np.ndarray
    alpha0: float
    b0: np.ndarray
    tau_alpha: float
    tau_beta: float
    rho: float
    omega: np.ndarray
    # workspace: current X @ beta
    xb: np.ndarray = field(repr=False, default=None)

    def copy(self) -> "ChainState":
        return ChainState(self.alpha.copy(), self.beta.copy(), self.alpha0, self.b0.copy(),
                          self.tau_alpha, self.tau_beta, self.rho, self.omega.copy(),
                          None if self.xb is None else self.xb.copy())


@dataclass(frozen=True, eq=False)
class ModelData:
    """Arrays the sweep touches, prepared once per fit."""

    spec: ModelSpec
    X: np.ndarray
    y: np.ndarray
    tract_index: np.ndarray
    weights: np.ndarray
    kappa: np.ndarray
    unit_weights: bool
    graph: TractGraph
    laplacian: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def N(self) -> int:
        return self.X.shape[0]


def prepare_model(spec: ModelSpec, y, design, graph: TractGraph) -> ModelData:
    """Bundle outcomes, design and graph for the sampler.

    ``y`` may be a :class:`~tractrisk.data.Cohort` or an array of 0/1.
    ``design`` is a :class:`~tractrisk.data.DesignMatrix` or a tuple
    ``(X, tract_index)``.
    """
    if hasattr(y, "outcome"):
        y = y.outcome
    y = np.ascontiguousarray(y, dtype=np.float64)
    if hasattr(design, "X"):
        X, idx = design.X, design.tract_index
    else:
        X, idx = design
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("design must be 2-d")
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    N = X.shape[0]
    if y.shape != (N,) or idx.shape != (N,):
        raise ValueError("outcome, design rows and tract index must have equal length")
    if N and (idx.min() < 0 or idx.max() >= graph.n):
        raise ValueError("tract index out of range")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("outcomes must be 0 or 1")
    if spec.weights is None:
        w = np.ones(N)
    else:
        w = np.ascontiguousarray(spec.weights, dtype=np.float64)
        if w.shape != (N,):
            raise ValueError(f"weights have length {w.shape[0]}, expected {N}")
    unit = bool(np.all(w == 1.0))
    kappa = w * (y - 0.5)
    if spec.model_kind == "CAR":
        lap = graph.laplacian.toarray()
        eig = graph.laplacian_eigenvalues
    else:
        lap = np.zeros((graph.n, graph.n))
        eig = np.zeros(graph.n)
    return ModelData(spec, X, y, idx, w, kappa, unit, graph, lap, eig)


def initial_state(data: ModelData) -> ChainState:
    spec = data.spec
    if spec.model_kind == "indRE":
        rho = 0.0
    elif spec.fixed_rho is not None:
        rho = float(spec.fixed_rho)
    else:
        rho = 0.5
    p = data.p
    return ChainState(
        alpha=np.zeros(data.n), beta=np.zeros(p), alpha0=0.0, b0=np.zeros(p),
        tau_alpha=1.0, tau_beta=1.0, rho=rho, omega=np.full(data.N, 0.25),
        xb=np.zeros(data.N),
    )


# ---------------------------------------------------------------------------
# conditional updates


def _precision_dense(data: ModelData, rho: float) -> np.ndarray:
    if data.spec.model_kind == "indRE" or rho == 0.0:
        return np.eye(data.n)
    q = rho * data.laplacian
    q[np.diag_indices_from(q)] += 1.0 - rho
    return q


def update_omega(state: ChainState, data: ModelData, rng) -> np.ndarray:
    """omega_ij ~ PG(w_ij, alpha_i + x_ij' beta)."""
    xb = data.X @ state.beta if data.p else np.zeros(data.N)
    state.xb = xb
    psi = state.alpha[data.tract_index] + xb
    if data.unit_weights:
        sample_pg1_array(psi, rng, out=state.omega)
    else:
        sample_pg_array(data.weights, psi, rng, out=state.omega)
    return state.omega


def _cholesky(v, what):
    # LAPACK flags NaN or non-positive pivots through info
    c, info = dpotrf(v, lower=1, clean=1, overwrite_a=1)
    if info != 0 or not np.all(np.isfinite(c.diagonal())):
        raise SamplerError(f"Cholesky of the {what} precision failed (info {info}; "
                           f"NaN contamination?)")
    return c


def _solve_mean(chol, rhs):
    return dpotrs(chol, rhs, lower=1)[0]


def _draw_gaussian(chol, rhs, z):
    # mean + L^-T z where L L' is the precision and mean = (L L')^-1 rhs
    u = dtrtrs(chol, rhs, lower=1)[0]
    return dtrtrs(chol, u + z, lower=1, trans=1)[0]


def _alpha_system(state: ChainState, data: ModelData):
    n = data.n
    xb = state.xb if state.xb is not None else data.X @ state.beta
    s2 = 1.0 / state.tau_alpha ** 2
    prec = s2 * _precision_dense(data, state.rho)
    prec[np.diag_indices(n)] += np.bincount(data.tract_index, weights=state.omega, minlength=n)
    rhs = np.bincount(data.tract_index, weights=data.kappa - state.omega * xb,
                      minlength=n).astype(float)
    # Q 1 = (1 - rho) 1: the Laplacian annihilates constants
    rhs += s2 * (1.0 - state.rho) * state.alpha0
    return _cholesky(prec, "alpha"), rhs


def alpha_conditional(state: ChainState, data: ModelData):
    """``(mean, lower Cholesky factor of the precision, rhs)`` of alpha | rest."""
    chol, rhs = _alpha_system(state, data)
    return _solve_mean(chol, rhs), chol, rhs


def update_alpha(state: ChainState, data: ModelData, rng) -> np.ndarray:
    chol, rhs = _alpha_system(state, data)
    gen = rng.generator if isinstance(rng, RandomStream) else rng
    state.alpha = _draw_gaussian(chol, rhs, gen.standard_normal(data.n))
    return state.alpha


def _beta_system(state: ChainState, data: ModelData):
    p = data.p
    s2 = 1.0 / state.tau_beta ** 2
    X = data.X
    prec = X.T @ (X * state.omega[:, None])
    prec[np.diag_indices(p)] += s2
    resid = data.kappa - state.omega * state.alpha[data.tract_index]
    rhs = X.T @ resid + s2 * state.b0
    return _cholesky(prec, "beta"), rhs


def beta_conditional(state: ChainState, data: ModelData):
    chol, rhs = _beta_system(state, data)
    return _solve_mean(chol, rhs), chol, rhs


def update_beta(state: ChainState, data: ModelData, rng) -> np.ndarray:
    if data.p == 0:
        return state.beta
    chol, rhs = _beta_system(state, data)
    gen = rng.generator if isinstance(rng, RandomStream) else rng
    state.beta = _draw_gaussian(chol, rhs, gen.standard_normal(data.p))
    return state.beta


def update_alpha0(state: ChainState, data: ModelData, rng) -> float:
    """Conjugate normal update: precision 1'Q1/tau^2 + 1/100, mean
    (1'Q alpha / tau^2) / precision, with 1'Q = (1 - rho) 1'."""
    gen = rng.generator if isinstance(rng, RandomStream) else rng
    s2 = 1.0 / state.tau_alpha ** 2
    c = 1.0 - state.rho
    prec = c * data.n * s2 + 1.0 / data.spec.alpha0_prior_var
    mean = c * s2 * float(np.sum(state.alpha)) / prec
    state.alpha0 = mean + gen.standard_normal() / math.sqrt(prec)
    return state.alpha0


def update_b0(state: ChainState, data: ModelData, rng) -> np.ndarray:
    if data.p == 0:
        return state.b0
    gen = rng.generator if isinstance(rng, RandomStream) else rng
    s2 = 1.0 / state.tau_beta ** 2
    prec = s2 + 1.0 / data.spec.b0_prior_var
    mean = s2 * state.beta / prec
    state.b0 = mean + gen.standard_normal(data.p) / math.sqrt(prec)
    return state.b0


def tau_acceptance_ratio(x: float, x_new: float, s: float) -> float:
    """Acceptance ratio of the independence proposal x_new^2 ~ IG(a, b)
    for a target proportional to (x^2 + s^2)^-1 x^(-2a) exp(-b / x^2)."""
    return (x * x + s * s) / (x_new * x_new + s * s) * (x_new / x)


def _alpha_quad(state: ChainState, data: ModelData, rho=None) -> float:
    rho = state.rho if rho is None else rho
    d = state.alpha - state.alpha0
    if data.spec.model_kind == "indRE":
        return float(d @ d)
    e_lap, e_id = edge_quad_forms(data.graph, d)
    return rho * e_lap + (1.0 - rho) * e_id


def mh_update_tau(which: str, state: ChainState, data: ModelData, rng):
    """Independence MH step for tau_alpha or tau_beta.  Returns
    ``(new_value, accepted)``."""
    gen = rng.generator if isinstance(rng, RandomStream) else rng
    if which == "alpha":
        shape = data.n / 2.0
        rate = _alpha_quad(state, data) / 2.0
        x, s = state.tau_alpha, data.spec.s_alpha
    elif which == "beta":
        if data.p == 0:
            return state.tau_beta, False
        shape = data.p / 2.0
        diff = state.beta - state.b0
        rate = float(diff @ diff) / 2.0
        x, s = state.tau_beta, data.spec.s_beta
    else:
        raise ValueError(f"which must be 'alpha' or 'beta', got {which!r}")
    g = gen.standard_gamma(shape)
    u = gen.random()
    if not rate > 0 or not g > 0:
        return x, False
    x_new = math.sqrt(rate / g)
    accepted = u < tau_acceptance_ratio(x, x_new, s)
    if accepted:
        if which == "alpha":
            state.tau_alpha = x_new
        else:
            state.tau_beta = x_new
        return x_new, True
    return x, False


def _beta_logpdf(x, a, b):
    return (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
            + (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x))


def rho_log_target(rho: float, e_lap: float, e_id: float, eigenvalues, tau_alpha: float) -> float:
    """log p(rho | alpha, alpha0, tau) up to a constant (uniform prior)."""
    quad = rho * e_lap + (1.0 - rho) * e_id
    return 0.5 * log_det_from_spectrum(eigenvalues, rho) - quad / (2.0 * tau_alpha ** 2)


def rho_log_acceptance(rho: float, rho_new: float, e_lap: float, e_id: float, eigenvalues,
                       tau_alpha: float, xi: float) -> float:
    """Log MH ratio for rho including the Beta proposal asymmetry."""
    fwd = _beta_logpdf(rho_new, xi * rho / (1.0 - rho), xi)
    bwd = _beta_logpdf(rho, xi * rho_new / (1.0 - rho_new), xi)
    return (rho_log_target(rho_new, e_lap, e_id, eigenvalues, tau_alpha)
            - rho_log_target(rho, e_lap, e_id, eigenvalues, tau_alpha) + bwd - fwd)


def mh_update_rho(state: ChainState, data: ModelData, rng, xi: float = 5.0):
    """Returns ``(new_rho, accepted)``; a no-op unless rho is sampled."""
    if not data.spec.samples_rho:
        return state.rho, False
    gen = rng.generator if isinstance(rng, RandomStream) else rng
    rho = state.rho
    prop = gen.beta(xi * rho / (1.0 - rho), xi)
    u = gen.random()
    if not 0.0 < prop < 1.0:
        return rho, False
    e_lap, e_id = edge_quad_forms(data.graph, state.alpha - state.alpha0)
    log_a = rho_log_acceptance(rho, prop, e_lap, e_id, data.eigenvalues, state.tau_alpha, xi)
    if u == 0.0 or math.log(u) < log_a:
        state.rho = float(prop)
        return state.rho, True
    return rho, False


def gibbs_sweep(state: ChainState, data: ModelData, rng, xi: float = 5.0):
    """One full sweep in the fixed order; returns (tau_a, tau_b, rho) accept flags."""
    update_omega(state, data, rng)
    update_alpha(state, data, rng)
    update_beta(state, data, rng)
    update_alpha0(state, data, rng)
    update_b0(state, data, rng)
    _, acc_ta = mh_update_tau("alpha", state, data, rng)
    _, acc_tb = mh_update_tau("beta", state, data, rng)
    _, acc_r = mh_update_rho(state, data, rng, xi)
    return acc_ta, acc_tb, acc_r


# ---------------------------------------------------------------------------
# chains and posterior storage

SCALAR_PARAMS = ("alpha0", "tau_alpha", "tau_beta", "rho")


def run_chain(spec: ModelSpec, config: McmcConfig, cohort, design, graph: TractGraph,
              chain_id: int = 0, data: ModelData | None = None) -> dict:
    """Run one chain and record every iteration.

    Returns a dict of arrays (leading axis = iteration) plus acceptance
    counts.  Deterministic given ``(config.seed, chain_id)``.
    """
    if data is None:
        data = prepare_model(spec, cohort, design, graph)
    rng = RandomStream(config.seed, chain_id)
    T, n, p = config.n_iterations, data.n, data.p
    out = {
        "alpha": np.empty((T, n)),
        "beta": np.empty((T, p)),
        "b0": np.empty((T, p)),
        "alpha0": np.empty(T),
        "tau_alpha": np.empty(T),
        "tau_beta": np.empty(T),
        "rho": np.empty(T),
    }
    accepts = np.zeros(3, dtype=np.int64)
    state = initial_state(data)
    for t in range(T):
        flags = gibbs_sweep(state, data, rng, config.xi)
        accepts += flags
        vals = (state.alpha0, state.tau_alpha, state.tau_beta, state.rho)
        if (not all(map(math.isfinite, vals)) or not np.all(np.isfinite(state.alpha))
                or not np.all(np.isfinite(state.beta))):
            raise SamplerError(f"non-finite parameter at iteration {t + 1} (chain {chain_id})")
        out["alpha"][t] = state.alpha
        out["beta"][t] = state.beta
        out["b0"][t] = state.b0
        out["alpha0"][t], out["tau_alpha"][t], out["tau_beta"][t], out["rho"][t] = vals
        if (t + 1) % 500 == 0:
            logger.debug("chain %d: iteration %d / %d", chain_id, t + 1, T)
    out["accept"] = {"tau_alpha": accepts[0] / T, "tau_beta": accepts[1] / T,
                     "rho": accepts[2] / T}
    out["chain_id"] = chain_id
    return out


@dataclass(eq=False)
class PosteriorSamples:
    """Retained draws merged across chains.

    ``params`` maps name to an array whose first axis indexes draws:
    ``alpha`` (S, n), ``beta`` and ``b0`` (S, p), scalars (S,).
    """

    params: dict
    chain: np.ndarray
    iteration: np.ndarray
    tract_ids: tuple
    beta_names: tuple
    model_kind: str = "CAR"
    accept: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[name]

    @property
    def n_draws(self) -> int:
        return len(self.chain)

    @property
    def n_chains(self) -> int:
        return len(np.unique(self.chain))

    def by_chain(self, name) -> np.ndarray:
        """Draws reshaped to (chains, draws per chain, ...)."""
        arr = self.params[name]
        chains = np.unique(self.chain)
        return np.stack([arr[self.chain == c] for c in chains])

    def columns(self):
        cols = ["chain", "iteration"] + list(SCALAR_PARAMS)
        cols += [f"beta[{b}]" for b in self.beta_names]
        cols += [f"b0[{b}]" for b in self.beta_names]
        cols += [f"alpha[{t}]" for t in self.tract_ids]
        return cols

    def to_matrix(self) -> np.ndarray:
        parts = [self.chain[:, None].astype(float), self.iteration[:, None].astype(float)]
        parts += [self.params[k][:, None] for k in SCALAR_PARAMS]
        parts += [self.params["beta"], self.params["b0"], self.params["alpha"]]
        return np.hstack(parts)

    def to_csv(self, path) -> None:
        cols = self.columns()
        mat = self.to_matrix()
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in mat:
                head = f"{int(row[0])},{int(row[1])}"
                fh.write(head + "," + ",".join(format(v, ".17g") for v in row[2:]) + "\n")

    @classmethod
    def from_csv(cls, path, model_kind="CAR") -> "PosteriorSamples":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        mat = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        col = {c: k for k, c in enumerate(header)}
        for req in ("chain", "iteration") + SCALAR_PARAMS:
            if req not in col:
                raise ValueError(f"{path}: draws file lacks column {req!r}")

        def block(prefix):
            names = [c[len(prefix) + 1:-1] for c in header if c.startswith(prefix + "[")]
            idx = [col[f"{prefix}[{n}]"] for n in names]
            return tuple(names), mat[:, idx]

        beta_names, beta = block("beta")
        _, b0 = block("b0")
        tract_ids, alpha = block("alpha")
        params = {k: mat[:, col[k]].copy() for k in SCALAR_PARAMS}
        params.update(beta=beta, b0=b0, alpha=alpha)
        return cls(params, mat[:, col["chain"]].astype(int), mat[:, col["iteration"]].astype(int),
                   tract_ids, beta_names, model_kind)


def collect(chains, config: McmcConfig, tract_ids=(), beta_names=(), model_kind="CAR"):
    """Drop burn-in, thin and concatenate chains into :class:`PosteriorSamples`."""
    lengths = {len(c["alpha0"]) for c in chains}
    if len(lengths) != 1:
        raise ValueError("chains have different lengths")
    T = lengths.pop()
    if config.burn_in >= T:
        raise ValueError(f"burn_in ({config.burn_in}) must be smaller than chain length ({T})")
    keep = np.arange(config.burn_in + config.thin - 1, T, config.thin)
    names = ("alpha", "beta", "b0") + SCALAR_PARAMS
    params = {k: np.concatenate([c[k][keep] for c in chains]) for k in names}
    chain_ids = np.concatenate([np.full(len(keep), c.get("chain_id", i))
                                for i, c in enumerate(chains)])
    iters = np.tile(keep + 1, len(chains))
    accept = {c.get("chain_id", i): c.get("accept", {}) for i, c in enumerate(chains)}
    return PosteriorSamples(params, chain_ids, iters, tuple(tract_ids), tuple(beta_names),
                            model_kind, accept)


def fit(spec: ModelSpec, config: McmcConfig, cohort, design, graph: TractGraph,
        n_jobs: int | None = None) -> PosteriorSamples:
    """Run ``config.n_chains`` chains (concurrently when ``n_jobs > 1``)."""
    data = prepare_model(spec, cohort, design, graph)
    n_jobs = n_jobs or min(config.n_chains, os.cpu_count() or 1)

    def one(k):
        return run_chain(spec, config, cohort, design, graph, chain_id=k, data=data)

    if n_jobs > 1 and config.n_chains > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            chains = list(pool.map(one, range(config.n_chains)))
    else:
        chains = [one(k) for k in range(config.n_chains)]
    beta_names = getattr(design, "columns", tuple(f"x{k}" for k in range(data.p)))
    return collect(chains, config, graph.tract_ids, beta_names, spec.model_kind)
