"""Benchmark drivers: the Gaussian MI staircase, exact binary sweeps, timing."""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

from .critics import AdamState, make_critic, critic_backward, critic_logits
from .errors import DomainError
from .numerics import RngState, marginal_shuffle, sample_correlated_gaussian
from .objectives import (CPC, MLCPC, AlphaSchedule, ObjectiveSpec, alpha_min, evaluate,
                         objective_grad_logits, schedule_alpha)
from .oracles import (BinaryWorld, binary_cpc_oracle, binary_mlcpc_oracle, binary_true_mi,
                      rho_for_mi)

log = logging.getLogger(__name__)

Alpha = Union[float, str]

TRACE_COLUMNS = ("iter", "estimate", "smoothed", "true_mi", "alpha", "wall_ms")
SWEEP_COLUMNS = ("n", "m", "alpha", "objective", "bias", "std")

# streams of the run seed
DATA_STREAM = 0
INIT_STREAM = 1


def resolve_alpha(alpha: Alpha, n: int, m: int) -> float:
    if isinstance(alpha, str):
        if alpha.strip().lower() != "auto":
            return float(alpha)
        return alpha_min(n, m)
    return float(alpha)


@dataclass
class StaircaseConfig:
    d: int = 20
    n: int = 128
    m: int = 128
    levels: Sequence[float] = (2.0, 4.0, 6.0, 8.0, 10.0)
    iters_per_level: int = 1000
    critic: str = "joint"
    hidden: Sequence[int] = (256, 256)
    embed_dim: int = 32
    objective: str = CPC
    alpha: Alpha = 1.0
    schedule: AlphaSchedule | None = None
    lr: float = 1e-3
    seed: int = 0
    # "fresh": negatives drawn from N(0, I); "shuffle": resampled batch rows
    negatives: str = "fresh"
    ema_decay: float = 0.99

    def validate(self) -> None:
        if self.d < 1 or self.n < 1 or self.m < 2:
            raise DomainError("need d >= 1, n >= 1, m >= 2")
        if self.iters_per_level < 1 or not self.levels:
            raise DomainError("need at least one level and one iteration per level")
        lv = [float(v) for v in self.levels]
        if any(v < 0 for v in lv) or any(b <= a for a, b in zip(lv, lv[1:])):
            raise DomainError(f"levels must be non-negative and strictly increasing: {lv}")
        if self.objective not in (CPC, MLCPC):
            raise DomainError(f"unknown objective {self.objective!r}")
        if self.negatives not in ("fresh", "shuffle"):
            raise DomainError(f"unknown negatives mode {self.negatives!r}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise DomainError("ema_decay must lie in [0, 1)")
        if self.lr <= 0:
            raise DomainError("lr must be > 0")
        for a in self.alphas_used():
            ObjectiveSpec(self.objective, a)
            if not a < self.m:
                raise DomainError(f"alpha={a} must be < m={self.m}")

    @property
    def total_iters(self) -> int:
        return len(self.levels) * self.iters_per_level

    def alphas_used(self) -> list[float]:
        if self.schedule is not None:
            return [self.schedule.alpha_start, self.schedule.alpha_end]
        return [resolve_alpha(self.alpha, self.n, self.m)]

    def alpha_at(self, it: int) -> float:
        if self.schedule is not None:
            # alpha holds at alpha_end once the schedule runs out
            return schedule_alpha(self.schedule, min(it, self.schedule.total_steps))
        return resolve_alpha(self.alpha, self.n, self.m)


@dataclass
class EstimateTrace:
    config: StaircaseConfig
    iters: list[int] = field(default_factory=list)
    estimates: list[float] = field(default_factory=list)
    smoothed: list[float] = field(default_factory=list)
    true_mi: list[float] = field(default_factory=list)
    alphas: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    aborted: str | None = None

    def __len__(self):
        return len(self.iters)

    def rows(self) -> Iterator[tuple]:
        return zip(self.iters, self.estimates, self.smoothed, self.true_mi, self.alphas,
                   self.wall_ms)

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for it, est, sm, mi, a, ms in self.rows():
            w.writerow([it, repr(est), repr(sm), repr(mi), repr(a), f"{ms:.3f}"])

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    def level_estimates(self, level: int) -> np.ndarray:
        k = self.config.iters_per_level
        return np.asarray(self.estimates[level * k:(level + 1) * k])

    def trailing(self, level: int, window: int = 200) -> tuple[float, float]:
        """Mean and standard error of the last ``window`` raw estimates of a level."""
        vals = self.level_estimates(level)[-window:]
        if vals.size < 2:
            raise DomainError(f"level {level} has fewer than two recorded iterations")
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


def _negatives(rng: RngState, cfg: StaircaseConfig, y: np.ndarray) -> np.ndarray:
    n, d, k = cfg.n, cfg.d, cfg.m - 1
    if cfg.negatives == "fresh":
        return rng.generator.standard_normal((n, k, d))
    return marginal_shuffle(rng, y, k).reshape(k, n, d).transpose(1, 0, 2)


def batch_stream(cfg: StaircaseConfig, rho: float) -> Iterator[tuple[np.ndarray, ...]]:
    """Infinite stream of ``(x, y_pos, y_neg)`` batches at a fixed correlation."""
    rng = RngState(cfg.seed, DATA_STREAM)
    while True:
        x, y = sample_correlated_gaussian(rng, cfg.d, rho, cfg.n)
        yield x, y, _negatives(rng, cfg, y)


def _update(model, adam, batch, spec: ObjectiveSpec) -> float:
    x, y_pos, y_neg = batch
    logits, cache = critic_logits(model, x, y_pos, y_neg)
    if not np.all(np.isfinite(logits)):
        return math.nan
    value = evaluate(logits, spec).value
    # ascend the objective: Adam descends on the negated gradient
    grads = critic_backward(model, cache, -objective_grad_logits(logits, spec))
    model.step(grads, adam)
    return value


def _finite_params(model) -> bool:
    return all(np.all(np.isfinite(p)) for p in model.parameters())


def run_staircase(cfg: StaircaseConfig) -> EstimateTrace:
    """Train a critic on the Gaussian staircase, one Adam step per batch.

    The recorded estimate at each iteration is the objective value of the
    batch before the update. A non-finite value or parameter stops the run
    and sets ``trace.aborted``.
    """
    cfg.validate()
    model = make_critic(RngState(cfg.seed, INIT_STREAM), cfg.critic, cfg.d, cfg.hidden,
                        cfg.embed_dim)
    adam = AdamState.for_params(model.parameters(), lr=cfg.lr)
    rng = RngState(cfg.seed, DATA_STREAM)
    trace = EstimateTrace(cfg)
    ema = None
    it = 0
    for mi in cfg.levels:
        mi = float(mi)
        rho = rho_for_mi(mi, cfg.d)
        for _ in range(cfg.iters_per_level):
            t0 = time.perf_counter()
            x, y = sample_correlated_gaussian(rng, cfg.d, rho, cfg.n)
            batch = (x, y, _negatives(rng, cfg, y))
            alpha = cfg.alpha_at(it)
            value = _update(model, adam, batch, ObjectiveSpec(cfg.objective, alpha))
            ms = (time.perf_counter() - t0) * 1e3
            if not math.isfinite(value) or not _finite_params(model):
                trace.aborted = (f"non-finite {'loss' if not math.isfinite(value) else 'parameters'}"
                                 f" at iteration {it} (true MI {mi}, alpha {alpha})")
                log.error(trace.aborted)
                return trace
            ema = value if ema is None else cfg.ema_decay * ema + (1 - cfg.ema_decay) * value
            trace.iters.append(it)
            trace.estimates.append(value)
            trace.smoothed.append(ema)
            trace.true_mi.append(mi)
            trace.alphas.append(alpha)
            trace.wall_ms.append(ms)
            it += 1
    return trace


# Exact sweeps ------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    n: int
    m: int
    alpha: float
    objective: str
    bias: float
    std: float
    bound_valid: bool


@dataclass
class SweepResult:
    p: float
    true_mi: float
    rows: list[SweepRow] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in self.rows:
            w.writerow([r.n, r.m, repr(r.alpha), r.objective, repr(r.bias), repr(r.std)])

    def get(self, n: int, m: int, alpha: float, objective: str) -> SweepRow:
        for r in self.rows:
            if (r.n, r.m, r.objective) == (n, m, objective) and math.isclose(r.alpha, alpha):
                return r
        raise KeyError((n, m, alpha, objective))


def run_bias_variance_sweep(p: float, sizes: Sequence[tuple[int, int]],
                            alphas: Sequence[Alpha],
                            objectives: Sequence[str] = (CPC, MLCPC),
                            world: BinaryWorld | None = None) -> SweepResult:
    """Exact bias (true MI minus mean) and std per (size, alpha, objective) cell.

    ``"auto"`` in ``alphas`` stands for ``alpha_min(n, m)``. The CPC oracle uses
    in-batch negatives, so CPC cells need ``n == m``; other cells that the
    oracles cannot evaluate are skipped and recorded in ``skipped``.
    """
    if not alphas:
        raise DomainError("empty alpha list")
    if world is None:
        world = BinaryWorld(p)
    elif world.p != p:
        raise DomainError("world.p disagrees with p")
    true_mi = binary_true_mi(p)
    result = SweepResult(p, true_mi)
    for n, m in sizes:
        for a in alphas:
            try:
                alpha = resolve_alpha(a, n, m)
            except DomainError as e:
                result.skipped.append(f"n={n} m={m} alpha={a}: {e}")
                continue
            for obj in objectives:
                why = None
                if obj == CPC and n != m:
                    why = "CPC oracle needs n == m"
                elif not 0.0 < alpha < m:
                    why = f"alpha outside (0, m={m})"
                elif obj == CPC and n < 2:
                    why = "CPC oracle needs n >= 2"
                if why:
                    msg = f"skipped n={n} m={m} alpha={alpha} {obj}: {why}"
                    log.warning(msg)
                    result.skipped.append(msg)
                    continue
                if obj == CPC:
                    st = binary_cpc_oracle(world, n, alpha)
                else:
                    st = binary_mlcpc_oracle(world, n, m, alpha)
                result.rows.append(SweepRow(n, m, alpha, obj, true_mi - st.mean, st.std,
                                            ObjectiveSpec(obj, alpha).bound_valid(n, m)))
    return result


# Timing ------------------------------------------------------------------------

@dataclass(frozen=True)
class TimingResult:
    cpc_ms: float
    mlcpc_ms: float
    cpc_stream_digest: str
    mlcpc_stream_digest: str

    @property
    def ratio(self) -> float:
        """Relative difference |cpc - mlcpc| / cpc."""
        return abs(self.cpc_ms - self.mlcpc_ms) / self.cpc_ms


WARMUP_UPDATES = 10


class _TimedRun:
    """One objective's critic, optimizer, batch stream and timing record."""

    def __init__(self, cfg: StaircaseConfig, objective: str):
        self.model = make_critic(RngState(cfg.seed, INIT_STREAM), cfg.critic, cfg.d, cfg.hidden,
                                 cfg.embed_dim)
        self.adam = AdamState.for_params(self.model.parameters(), lr=cfg.lr)
        self.spec = ObjectiveSpec(objective, resolve_alpha(cfg.alpha, cfg.n, cfg.m))
        self.stream = batch_stream(cfg, rho_for_mi(float(cfg.levels[0]), cfg.d))
        self.digest = hashlib.sha256()
        self.times: list[float] = []

    def step(self) -> None:
        batch = next(self.stream)
        for a in batch:
            self.digest.update(a.tobytes())
        t0 = time.perf_counter()
        _update(self.model, self.adam, batch, self.spec)
        self.times.append(time.perf_counter() - t0)

    def median_ms(self) -> float:
        return float(np.median(self.times[WARMUP_UPDATES:])) * 1e3


def run_timing_parity(cfg: StaircaseConfig, updates: int = 200) -> TimingResult:
    """Median per-update wall time for CPC and ML-CPC on identical batches.

    Both runs start from the same critic initialization and consume the same
    batch stream. Updates are interleaved, with the order swapped every step,
    so that both objectives see the same machine load. The first
    ``WARMUP_UPDATES`` updates of each are discarded.
    """
    if updates < 50:
        raise DomainError(f"need at least 50 updates, got {updates}")
    cfg.validate()
    cpc, ml = _TimedRun(cfg, CPC), _TimedRun(cfg, MLCPC)
    for k in range(updates):
        for run in ((cpc, ml) if k % 2 == 0 else (ml, cpc)):
            run.step()
    return TimingResult(cpc.median_ms(), ml.median_ms(), cpc.digest.hexdigest(),
                        ml.digest.hexdigest())
