"""Numerical substrate: seeded randomness, stable reductions, Gaussian pairs.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. Randomness always flows through an explicit :class:`RngState`; nothing
in the package touches numpy's global generator.

Generator choice
----------------
``RngState`` wraps numpy's ``Philox`` bit generator (Philox-4x64-10, a
counter-based generator), keyed by ``SeedSequence([seed, stream])``. Normal
variates come from ``Generator.standard_normal``, which uses numpy's
ziggurat method. Both are fixed by numpy's stream-compatibility policy for a
given numpy version, so a seed reproduces the same sample stream on every
platform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError


@dataclass
class RngState:
    """Seeded random stream.

    ``stream`` selects an independent substream for the same seed, which is
    how parallel workers or separate consumers (e.g. weight init vs. data)
    get non-overlapping randomness.
    """

    seed: int
    stream: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        ss = np.random.SeedSequence([self.seed, self.stream])
        self.generator = np.random.Generator(np.random.Philox(ss))

    def substream(self, stream: int) -> "RngState":
        return RngState(self.seed, stream)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite float64 2-D array, or raise."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def logsumexp(values, axis=None):
    """log(sum(exp(values))) with a max shift.

    With ``axis=None`` the whole input is reduced to a Python float; otherwise
    the given axis (or tuple of axes) is reduced and an array is returned.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise DomainError("logsumexp of an empty sequence")
    vmax = np.max(v, axis=axis, keepdims=True)
    if not np.all(np.isfinite(vmax)):
        raise DomainError("logsumexp needs a finite maximum")
    out = np.log(np.sum(np.exp(v - vmax), axis=axis, keepdims=True)) + vmax
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def sample_correlated_gaussian(rng: RngState, d: int, rho: float, batch: int):
    """Draw ``batch`` pairs of d-dim vectors with per-coordinate correlation rho.

    ``Y = rho * X + sqrt(1 - rho^2) * Z`` with X, Z independent standard
    normal, so every coordinate pair is standard bivariate normal.
    """
    if not 0.0 <= rho < 1.0:
        raise DomainError(f"rho must lie in [0, 1), got {rho}")
    if d < 1 or batch < 1:
        raise DomainError("d and batch must be positive")
    g = rng.generator
    x = g.standard_normal((batch, d))
    z = g.standard_normal((batch, d))
    y = rho * x + math.sqrt(1.0 - rho * rho) * z
    return x, y


def marginal_shuffle(rng: RngState, y, copies: int) -> np.ndarray:
    """Resample ``copies * rows(y)`` rows of ``y`` uniformly with replacement."""
    y = as_matrix(y, "y")
    if copies < 1:
        raise DomainError(f"copies must be >= 1, got {copies}")
    idx = rng.generator.integers(0, y.shape[0], size=copies * y.shape[0])
    return y[idx]
