"""Reproducible random streams and Polya-Gamma variate generation.

``PG(1, c)`` draws use the exact alternating-series rejection sampler of
Devroye as adapted by Polson, Scott and Windle: a ``J*(1, z)`` variate is
drawn from a two-piece envelope (truncated exponential on the right,
truncated inverse Gaussian on the left) and accepted by evaluating the
alternating series until the sign of the test is settled.  Since
``PG(1, c) = J*(1, c / 2) / 4`` no approximation is involved.

``PG(b, c)`` for general ``b > 0`` is built as a sum of ``floor(b)`` exact
``PG(1, c)`` draws plus, for a fractional remainder ``r``, a truncated
sum-of-gammas draw of ``PG(r, c)`` whose missing tail is replaced by its
expectation, so the first moment is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "RandomStream",
    "PgParams",
    "sample_pg1",
    "sample_pg",
    "pg_mean",
    "pg_variance",
    "sample_pg1_array",
    "sample_pg_array",
    "pg_truncated_series",
    "N_SERIES_TERMS",
]

N_SERIES_TERMS = 200

_TRUNC = 0.64
_PI = math.pi
_PI2_8 = math.pi ** 2 / 8.0


class RandomStream:
    """A seeded random stream owned by a single consumer (one chain).

    Streams with equal ``(seed, stream_id)`` replay the same sequence bit
    for bit.  Different ``stream_id`` values are spawned from the same
    :class:`numpy.random.SeedSequence`, which gives independent PCG64
    substreams.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"

    def substream(self, k: int) -> "RandomStream":
        """Derive a deterministic child stream (e.g. one per chain)."""
        return RandomStream(self.seed, self.stream_id * 1_000_003 + k + 1)


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RandomStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomStream or numpy Generator, got {type(rng)!r}")


@dataclass(frozen=True)
class PgParams:
    b: float
    c: float = 0.0

    def __post_init__(self):
        if not (self.b > 0) or not math.isfinite(self.b):
            raise ValueError(f"Polya-Gamma shape b must be positive, got {self.b}")
        if not math.isfinite(self.c):
            raise ValueError(f"Polya-Gamma tilt c must be finite, got {self.c}")


def pg_mean(params: PgParams) -> float:
    """E[PG(b, c)] = b / (2c) * tanh(c / 2), with limit b / 4 at c = 0."""
    b, c = params.b, abs(params.c)
    if c < 1e-6:
        # tanh(x)/x = 1 - x^2/3 + ...
        return b / 4.0 * (1.0 - c * c / 12.0)
    return b / (2.0 * c) * math.tanh(c / 2.0)


def pg_variance(params: PgParams) -> float:
    """Var[PG(b, c)]; equals b / 24 at c = 0."""
    b, c = params.b, abs(params.c)
    if c < 1e-4:
        return b / 24.0
    return b / (4.0 * c ** 3) * (math.sinh(c) - c) / math.cosh(c / 2.0) ** 2


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True, nogil=True)
def _norm_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@njit(cache=True, nogil=True)
def _a_coef(n, x):
    # Piecewise series coefficient of the J*(1) density.
    k = n + 0.5
    if x > _TRUNC:
        return _PI * k * math.exp(-k * k * _PI * _PI * x / 2.0)
    return _PI * k * math.pow(2.0 / (_PI * x), 1.5) * math.exp(-2.0 * k * k / x)


@njit(cache=True, nogil=True)
def _mass_texpon(z):
    # Probability of the exponential (right) piece of the envelope.
    t = _TRUNC
    fz = _PI2_8 + z * z / 2.0
    b = math.sqrt(1.0 / t) * (t * z - 1.0)
    a = -math.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = math.log(fz) + fz * t
    qdivp = 0.0
    pb = _norm_cdf(b)
    if pb > 0.0:
        qdivp += math.exp(x0 - z + math.log(pb))
    pa = _norm_cdf(a)
    if pa > 0.0:
        qdivp += math.exp(x0 + z + math.log(pa))
    qdivp *= 4.0 / _PI
    return 1.0 / (1.0 + qdivp)


@njit(cache=True, nogil=True)
def _rtigauss(z, rng):
    # Inverse Gaussian(mean 1/z, shape 1) truncated to (0, TRUNC).
    t = _TRUNC
    x = t + 1.0
    if 1.0 / t > z:
        alpha = 0.0
        u = 1.0
        while u > alpha:
            e1 = rng.standard_exponential()
            e2 = rng.standard_exponential()
            while e1 * e1 > 2.0 * e2 / t:
                e1 = rng.standard_exponential()
                e2 = rng.standard_exponential()
            x = 1.0 + e1 * t
            x = t / (x * x)
            alpha = math.exp(-0.5 * z * z * x)
            u = rng.random()
    else:
        mu = 1.0 / z
        while x > t:
            y = rng.standard_normal()
            y = y * y
            half_mu = 0.5 * mu
            mu_y = mu * y
            x = mu + half_mu * mu_y - half_mu * math.sqrt(4.0 * mu_y + mu_y * mu_y)
            if rng.random() > mu / (mu + x):
                x = mu * mu / x
    return x


@njit(cache=True, nogil=True)
def _pg1_draw(c, rng):
    z = abs(c) * 0.5
    fz = _PI2_8 + z * z / 2.0
    mass = _mass_texpon(z)
    while True:
        if rng.random() < mass:
            x = _TRUNC + rng.standard_exponential() / fz
        else:
            x = _rtigauss(z, rng)
        s = _a_coef(0, x)
        y = rng.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _a_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _a_coef(n, x)
                if y > s:
                    break


@njit(cache=True, nogil=True)
def _pg_series_draw(b, c, n_terms, rng):
    # Truncated sum-of-gammas with the tail replaced by its mean.
    c2 = c * c / (4.0 * _PI * _PI)
    acc = 0.0
    trunc_mean = 0.0
    for k in range(1, n_terms + 1):
        d = (k - 0.5) * (k - 0.5) + c2
        acc += rng.gamma(b, 1.0) / d
        trunc_mean += 1.0 / d
    acc /= 2.0 * _PI * _PI
    trunc_mean *= b / (2.0 * _PI * _PI)
    h = abs(c) / 2.0
    if h < 1e-6:
        full_mean = b / 4.0
    else:
        full_mean = b / (2.0 * abs(c)) * math.tanh(h)
    return acc + (full_mean - trunc_mean)


@njit(cache=True, nogil=True)
def _pg1_fill(c, out, rng):
    for i in range(c.shape[0]):
        out[i] = _pg1_draw(c[i], rng)


@njit(cache=True, nogil=True)
def _pg_fill(b, c, n_terms, out, rng):
    for i in range(c.shape[0]):
        bi = b[i]
        whole = int(math.floor(bi))
        frac = bi - whole
        acc = 0.0
        for _ in range(whole):
            acc += _pg1_draw(c[i], rng)
        if frac > 1e-12:
            acc += _pg_series_draw(frac, c[i], n_terms, rng)
        out[i] = acc


@njit(cache=True, nogil=True)
def _series_fill(b, c, n_terms, out, rng):
    for i in range(c.shape[0]):
        out[i] = _pg_series_draw(b, c[i], n_terms, rng)


# ---------------------------------------------------------------------------
# public API


def sample_pg1(c: float, rng) -> float:
    """One exact draw from PG(1, c)."""
    c = float(c)
    if not math.isfinite(c):
        raise ValueError(f"tilt must be finite, got {c}")
    return float(_pg1_draw(c, _generator(rng)))


def sample_pg(params: PgParams, rng) -> float:
    """One draw from PG(b, c) for any b > 0."""
    out = np.empty(1)
    _pg_fill(np.array([params.b], dtype=np.float64),
             np.array([params.c], dtype=np.float64), N_SERIES_TERMS, out,
             _generator(rng))
    return float(out[0])


def sample_pg1_array(c, rng, out=None) -> np.ndarray:
    """Vectorised exact PG(1, c_i) draws, one per entry of ``c``."""
    c = np.ascontiguousarray(c, dtype=np.float64)
    if out is None:
        out = np.empty_like(c)
    _pg1_fill(c, out, _generator(rng))
    return out


def sample_pg_array(b, c, rng, out=None) -> np.ndarray:
    """Vectorised PG(b_i, c_i) draws.  ``b`` may be a scalar or an array."""
    c = np.ascontiguousarray(c, dtype=np.float64)
    b = np.ascontiguousarray(np.broadcast_to(np.asarray(b, dtype=np.float64), c.shape))
    if np.any(~(b > 0)):
        raise ValueError("Polya-Gamma shape b must be positive")
    if out is None:
        out = np.empty_like(c)
    _pg_fill(b, c, N_SERIES_TERMS, out, _generator(rng))
    return out


def pg_truncated_series(b: float, c, rng, n_terms: int = N_SERIES_TERMS) -> np.ndarray:
    """Mean-corrected truncated sum-of-gammas draws of PG(b, c_i).

    Used for fractional shapes, and as a cheap approximate reference.
    """
    c = np.ascontiguousarray(np.atleast_1d(c), dtype=np.float64)
    if not b > 0:
        raise ValueError("Polya-Gamma shape b must be positive")
    out = np.empty_like(c)
    _series_fill(float(b), c, int(n_terms), out, _generator(rng))
    return out
