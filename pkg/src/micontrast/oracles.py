"""Ground truth for the estimators.

Exact enumeration over the two-point world ``X = Y ~ Bernoulli(p)``, true MI
formulas, a Monte-Carlo check of the exchangeability bounds, and batch
simulators of the binary world that go through the generic objective code
(used to cross-check the enumerations).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .errors import DomainError, SamplerError
from .numerics import RngState
from .objectives import cpc_value, ml_cpc_value


@dataclass(frozen=True)
class BinaryWorld:
    """``P(X=1, Y=1) = p``, ``P(X=0, Y=0) = 1 - p`` with a two-valued critic.

    ``mismatch_logit = -inf`` is the hard critic: mismatched pairs get weight
    exactly zero.
    """

    p: float
    match_logit: float = 0.0
    mismatch_logit: float = -math.inf

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise DomainError(f"p must lie in [0, 1], got {self.p}")
        if not math.isfinite(self.match_logit):
            raise DomainError("match_logit must be finite")
        if math.isnan(self.mismatch_logit) or self.mismatch_logit == math.inf:
            raise DomainError("mismatch_logit must be finite or -inf")

    @property
    def hard(self) -> bool:
        return self.mismatch_logit == -math.inf

    @property
    def mismatch_ratio(self) -> float:
        """g(x, y') / g(x, x) for x != y'."""
        return math.exp(self.mismatch_logit - self.match_logit)


@dataclass(frozen=True)
class OracleStats:
    mean: float
    variance: float

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def _stats(values: np.ndarray, weights: np.ndarray) -> OracleStats:
    mean = float(np.dot(weights, values))
    var = float(np.dot(weights, (values - mean) ** 2))
    return OracleStats(mean, max(var, 0.0))


def binary_true_mi(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p}")
    return -sum(q * math.log(q) for q in (p, 1.0 - p) if q > 0.0)


def binary_cpc_oracle(world: BinaryWorld, n: int, alpha: float) -> OracleStats:
    """Exact mean/variance of reweighted CPC with in-batch negatives (m = n).

    A batch is summarized by ``t``, the number of (1, 1) pairs. A row whose
    label is shared by ``c`` rows sees ``c - 1`` matching and ``n - c``
    mismatching negatives.
    """
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    if not 0.0 < alpha < n:
        raise DomainError(f"alpha must lie in (0, n={n}), got {alpha}")
    beta = (n - alpha) / (n - 1)
    r = 0.0 if world.hard else world.mismatch_ratio
    t = np.arange(n + 1)
    values = np.zeros(n + 1)
    for c_arr in (t, n - t):
        for k, c in enumerate(c_arr):
            if c == 0:
                continue
            denom = alpha + beta * ((c - 1) + (n - c) * r)
            values[k] += c * math.log(n / denom)
    values /= n
    return _stats(values, binom.pmf(t, n, world.p))


def _matching_negatives_pmf(n: int, m: int, p: float) -> np.ndarray:
    """Distribution of the number of negatives equal to their row's x (0..n(m-1))."""
    k = m - 1
    total = np.zeros(n * k + 1)
    for t in range(n + 1):
        pt = binom.pmf(t, n, p)
        if pt == 0.0:
            continue
        s1 = binom.pmf(np.arange(t * k + 1), t * k, p)
        s2 = binom.pmf(np.arange((n - t) * k + 1), (n - t) * k, 1.0 - p)
        total += pt * np.convolve(s1, s2)
    return total


def binary_mlcpc_oracle(world: BinaryWorld, n: int, m: int, alpha: float) -> OracleStats:
    """Exact mean/variance of reweighted ML-CPC with negatives drawn from p(y).

    Positive pairs always match, so a batch value depends only on ``s``, the
    number of matching negatives among the ``n(m-1)`` drawn.
    """
    if n < 1 or m < 2:
        raise DomainError(f"need n >= 1 and m >= 2, got n={n}, m={m}")
    if not 0.0 < alpha < m:
        raise DomainError(f"alpha must lie in (0, m={m}), got {alpha}")
    beta = (m - alpha) / (m - 1)
    r = 0.0 if world.hard else world.mismatch_ratio
    big = n * (m - 1)
    s = np.arange(big + 1)
    values = math.log(n * m) - np.log(alpha * n + beta * (s + (big - s) * r))
    return _stats(values, _matching_negatives_pmf(n, m, world.p))


def gaussian_true_mi(d: int, rho: float) -> float:
    """MI of d independent coordinate pairs with correlation rho."""
    if d < 1:
        raise DomainError(f"d must be >= 1, got {d}")
    if not 0.0 <= rho < 1.0:
        raise DomainError(f"rho must lie in [0, 1), got {rho}")
    return -0.5 * d * math.log1p(-rho * rho)


def rho_for_mi(mi: float, d: int) -> float:
    """Inverse of :func:`gaussian_true_mi` in rho."""
    if mi < 0 or d < 1:
        raise DomainError(f"need mi >= 0 and d >= 1, got mi={mi}, d={d}")
    return math.sqrt(-math.expm1(-2.0 * mi / d))


# Exchangeability bounds -----------------------------------------------------

SAMPLERS = ("exponential", "lognormal", "uniform")


def exchangeable_bound(m: int, alpha: float) -> float:
    """Ceiling on the expected weighted ratio statistic: ``max(1, 1/alpha)``.

    Defined on ``(0, 2m/(m+1)] U [1, m/2]``. The ``1/alpha`` ceiling only holds
    for ``alpha <= 1``: equal constant variables are exchangeable and give
    exactly 1 for every alpha. Above 1 the ceiling is 1, which covers
    ``[1, m/2]`` and, for m = 2, also ``(1, 4/3]`` since
    ``f(x, y) + f(y, x) <= 2`` reduces to ``(alpha - 1)(2 - alpha)(x - y)^2 >= 0``.
    """
    if m < 2:
        raise DomainError(f"m must be >= 2, got {m}")
    if not (0.0 < alpha <= 2.0 * m / (m + 1) or 1.0 <= alpha <= m / 2.0):
        raise DomainError(f"alpha={alpha} is outside (0, 2m/(m+1)] and [1, m/2] for m={m}")
    return max(1.0, 1.0 / alpha)


def _draw_positive(rng: RngState, sampler: str, shape) -> np.ndarray:
    g = rng.generator
    if sampler == "exponential":
        out = g.exponential(1.0, size=shape)
    elif sampler == "lognormal":
        out = g.lognormal(0.0, 1.0, size=shape)
    elif sampler == "uniform":
        out = 1.0 - g.random(size=shape)  # (0, 1]
    else:
        raise DomainError(f"unknown sampler {sampler!r}; choose from {SAMPLERS}")
    if not np.all(out > 0):
        raise SamplerError(f"sampler {sampler!r} produced a non-positive value")
    return out


def exchangeable_bound_mc(rng: RngState, n: int, m: int, alpha: float,
                          sampler: str = "lognormal", trials: int = 100_000,
                          chunk: int = 20_000) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of
    ``(1/n) sum_i m X_i / (alpha X_i + (m - alpha)/(m - 1) sum_j Xbar_ij)``
    with all variables i.i.d. from ``sampler``.
    """
    if n < 1 or trials < 2:
        raise DomainError("need n >= 1 and trials >= 2")
    exchangeable_bound(m, alpha)
    if not alpha < m:
        raise DomainError(f"alpha must be < m={m}")
    beta = (m - alpha) / (m - 1)
    stats = []
    done = 0
    while done < trials:
        b = min(chunk, trials - done)
        pos = _draw_positive(rng, sampler, (b, n))
        neg = _draw_positive(rng, sampler, (b, n, m - 1)).sum(axis=2)
        stats.append((m * pos / (alpha * pos + beta * neg)).mean(axis=1))
        done += b
    vals = np.concatenate(stats)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(trials))


# Batch simulators of the binary world -----------------------------------------

def _logits_from_matches(world: BinaryWorld, match: np.ndarray) -> np.ndarray:
    if world.hard:
        raise DomainError("simulation needs a finite mismatch_logit")
    return np.where(match, world.match_logit, world.mismatch_logit)


def simulate_binary_cpc(rng: RngState, world: BinaryWorld, n: int, alpha: float,
                        batches: int) -> np.ndarray:
    """Per-batch CPC values with the other batch labels as negatives (m = n)."""
    labels = rng.generator.random((batches, n)) < world.p
    # negatives for row i: labels of rows k != i, in order
    others = np.array([[k for k in range(n) if k != i] for i in range(n)])
    ys = np.concatenate([labels[:, :, None], labels[:, others]], axis=2)
    logits = _logits_from_matches(world, ys == labels[:, :, None])
    return np.atleast_1d(cpc_value(logits, alpha))


def simulate_binary_mlcpc(rng: RngState, world: BinaryWorld, n: int, m: int, alpha: float,
                          batches: int) -> np.ndarray:
    """Per-batch ML-CPC values with negatives drawn independently from p(y)."""
    g = rng.generator
    labels = g.random((batches, n)) < world.p
    negs = g.random((batches, n, m - 1)) < world.p
    ys = np.concatenate([labels[:, :, None], negs], axis=2)
    logits = _logits_from_matches(world, ys == labels[:, :, None])
    return np.atleast_1d(ml_cpc_value(logits, alpha))
