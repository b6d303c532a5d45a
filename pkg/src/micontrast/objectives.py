"""Contrastive MI objectives evaluated on a matrix of critic log-scores.

A logit matrix has shape ``(n, m)``: row ``i`` holds ``log g(x_i, y_i)`` in
column 0 and the ``m - 1`` negative-pair log-scores in columns ``1..m-1``.
Any number of leading batch axes is allowed; values are then returned per
leading index.

Both objectives reweight the normalizer: the positive term gets weight
``alpha`` and each negative gets ``(m - alpha) / (m - 1)``, so the weights
still add up to ``m`` per row. CPC normalizes each row separately; ML-CPC
pools all ``n * m`` weighted scores into one normalizer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DomainError, ShapeError
from .numerics import logsumexp

CPC = "cpc"
MLCPC = "mlcpc"
Kind = Literal["cpc", "mlcpc"]


def alpha_min(n: int, m: int) -> float:
    """Smallest alpha for which the reweighted ML-CPC objective is an MI lower bound."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if m < 2:
        raise DomainError(f"m must be >= 2, got {m}")
    return m / (n * (m - 1) + 1)


def _check_logits(logits) -> np.ndarray:
    a = np.asarray(logits, dtype=np.float64)
    if a.ndim < 2:
        raise ShapeError(f"logits need shape (..., n, m), got {a.shape}")
    n, m = a.shape[-2:]
    if n < 1 or m < 2:
        raise ShapeError(f"logits need n >= 1 and m >= 2, got n={n}, m={m}")
    if not np.all(np.isfinite(a)):
        raise DomainError("logits contain non-finite entries")
    return a


def _log_weights(m: int, alpha: float) -> np.ndarray:
    if not alpha > 0:
        raise DomainError(f"alpha must be > 0, got {alpha}")
    if not alpha < m:
        raise DomainError(f"alpha must be < m={m} so negatives keep positive weight, got {alpha}")
    w = np.full(m, math.log((m - alpha) / (m - 1)))
    w[0] = math.log(alpha)
    return w


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def cpc_value(logits, alpha: float = 1.0):
    """Reweighted CPC (InfoNCE) value; ``alpha=1`` is plain CPC."""
    a = _check_logits(logits)
    n, m = a.shape[-2:]
    w = _log_weights(m, alpha)
    rows = math.log(m) + a[..., 0] - logsumexp(a + w, axis=-1)
    return _scalar(rows.mean(axis=-1))


def ml_cpc_value(logits, alpha: float = 1.0):
    """Reweighted multi-label CPC value with one normalizer over the whole matrix."""
    a = _check_logits(logits)
    n, m = a.shape[-2:]
    w = _log_weights(m, alpha)
    z = logsumexp(a + w, axis=(-2, -1))
    return _scalar(math.log(n * m) + a[..., 0].mean(axis=-1) - z)


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: Kind
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in (CPC, MLCPC):
            raise DomainError(f"unknown objective kind {self.kind!r}")
        if not self.alpha > 0:
            raise DomainError(f"alpha must be > 0, got {self.alpha}")

    def bound_valid(self, n: int, m: int) -> bool:
        """Whether the objective is a guaranteed MI lower bound at this (n, m).

        ML-CPC: alpha in [alpha_min(n, m), 1]. CPC: alpha in [1, m/2] (alpha=1
        when m=2), the range where the exchangeability argument still bounds
        the normalized ratio by one.
        """
        if self.kind == MLCPC:
            # small slack so that alpha="auto" round-trips through text
            return alpha_min(n, m) * (1 - 1e-12) <= self.alpha <= 1.0
        return 1.0 <= self.alpha <= max(1.0, m / 2)


@dataclass(frozen=True)
class Evaluation:
    value: float
    bound_valid: bool


def evaluate(logits, spec: ObjectiveSpec) -> Evaluation:
    a = _check_logits(logits)
    n, m = a.shape[-2:]
    fn = ml_cpc_value if spec.kind == MLCPC else cpc_value
    return Evaluation(fn(a, spec.alpha), spec.bound_valid(n, m))


def objective_grad_logits(logits, spec: ObjectiveSpec) -> np.ndarray:
    """Exact gradient of the objective value with respect to every logit."""
    a = _check_logits(logits)
    n, m = a.shape[-2:]
    shifted = a + _log_weights(m, spec.alpha)
    if spec.kind == CPC:
        lse = logsumexp(shifted, axis=-1)[..., None]
        grad = -np.exp(shifted - lse)
    else:
        lse = logsumexp(shifted, axis=(-2, -1))[..., None, None]
        grad = -n * np.exp(shifted - lse)
    grad[..., 0] += 1.0
    return grad / n


@dataclass(frozen=True)
class AlphaSchedule:
    """Geometric interpolation of alpha from ``alpha_start`` to ``alpha_end``."""

    alpha_start: float
    alpha_end: float
    total_steps: int

    def __post_init__(self):
        if not (self.alpha_start > 0 and self.alpha_end > 0):
            raise DomainError("schedule endpoints must be > 0")
        if self.total_steps < 1:
            raise DomainError("total_steps must be >= 1")


def schedule_alpha(s: AlphaSchedule, step: int) -> float:
    if not 0 <= step <= s.total_steps:
        raise DomainError(f"step {step} outside [0, {s.total_steps}]")
    # this form hits the geometric midpoint exactly for reciprocal endpoints
    return s.alpha_start * (s.alpha_end / s.alpha_start) ** (step / s.total_steps)
