"""Genetic-algorithm training of an agent pool.

Each generation runs one market per training point, pays out every agent,
deletes the unprofitable ones, keeps the ten most profitable unchanged and
refills the pool with children of the seven most profitable (uniform
crossover followed by Gaussian mutation).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .agents import Pool
from .errors import DataError
from .seeding import STAGE_BREED, STAGE_INIT, STAGE_MARKETS, STAGE_REINIT, child, rng_for
from .simulation import HyperParams, MarketRunRecord, agent_profits, run_market

log = logging.getLogger(__name__)

N_ELITE = 10
N_PARENTS = 7
SCALE_LOW, SCALE_HIGH = 0.1, 10.0
JITTER = 0.05
MUTATION = 0.1
SCALE_FLOOR = 1e-3


@dataclass
class GenerationReport:
    generation: int
    rmse: float
    survivors: int
    elite_profits: list[float]
    pool_size_after_refill: int
    rmse_before: float = math.nan
    reinitialized: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class InitRanges:
    """Per-parameter initialization ranges, derived from the training data."""

    sigma: np.ndarray        # per-feature stddev
    span: np.ndarray         # per-feature max - min
    bias: tuple[float, float] = (0.0, 2.0)
    coupling: tuple[float, float] = (0.0, 2.0)

    @classmethod
    def from_data(cls, x: np.ndarray) -> InitRanges:
        sigma = x.std(axis=0)
        sigma = np.where(sigma > 0, sigma, 1.0)
        span = x.max(axis=0) - x.min(axis=0)
        span = np.where(span > 0, span, 1.0)
        return cls(sigma, span)

    @property
    def scale_low(self) -> np.ndarray:
        return SCALE_LOW / (self.sigma * math.sqrt(self.sigma.size))

    @property
    def scale_high(self) -> np.ndarray:
        return SCALE_HIGH / (self.sigma * math.sqrt(self.sigma.size))


def _check_training_set(x: np.ndarray, y: np.ndarray) -> None:
    if x.ndim != 2 or x.shape[0] == 0 or y.shape != (x.shape[0],):
        raise DataError("training set must be a non-empty N x n matrix with N labels")
    if not (np.any(y == 0) and np.any(y == 1)):
        raise DataError("training set must contain both classes")


def init_pool(x: np.ndarray, y: np.ndarray, hyper: HyperParams, seed) -> Pool:
    _check_training_set(x, y)
    rng = rng_for(seed)
    n = hyper.n_agents
    ranges = InitRanges.from_data(x)
    asset_class = np.arange(n) % 2
    center = np.empty((n, x.shape[1]))
    for c in (0, 1):
        members = np.flatnonzero(asset_class == c)
        rows = np.flatnonzero(y == c)
        picks = rows[rng.integers(rows.size, size=members.size)]
        center[members] = x[picks]
    center += rng.normal(0.0, 1.0, size=center.shape) * (JITTER * ranges.sigma)
    lo, hi = np.log(ranges.scale_low), np.log(ranges.scale_high)
    scale = np.exp(rng.uniform(lo, hi, size=center.shape))
    bias = rng.uniform(*ranges.bias, size=n)
    coupling = rng.uniform(*ranges.coupling, size=n)
    return Pool(asset_class, center, scale, bias, coupling)


def run_training_markets(pool: Pool, x: np.ndarray, y: np.ndarray | None, hyper: HyperParams,
                         seed) -> list[MarketRunRecord]:
    """One market per row of ``x``, each on its own RNG stream ``(seed, row)``."""
    d = pool.scale[None, :, :] * (x[:, None, :] - pool.center[None, :, :])
    static = pool.bias[None, :] - np.einsum("jik,jik->ji", d, d)
    return [run_market(pool, x[j], hyper, rng_for(seed, j), point_index=j, static=static[j])
            for j in range(x.shape[0])]


def rmse_of(records: list[MarketRunRecord], y: np.ndarray) -> float:
    # unscored markets predict 0.5
    p1 = np.array([r.final_prices.p1 if r.scored else 0.5 for r in records])
    return float(math.sqrt(np.mean((p1 - y) ** 2)))


def fitness_rmse(pool: Pool, x: np.ndarray, y: np.ndarray, hyper: HyperParams, seed) -> float:
    return rmse_of(run_training_markets(pool, x, y, hyper, seed), y)


def _breed(parents: Pool, count: int, ranges: InitRanges, rng: np.random.Generator) -> Pool:
    k = len(parents)
    if k == 1:
        first = np.zeros(count, dtype=np.int64)
        second = first
    else:
        first = rng.integers(k, size=count)
        second = (first + 1 + rng.integers(k - 1, size=count)) % k
    dim = parents.dim

    def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        mask = rng.random(a.shape) < 0.5
        return np.where(mask, a, b)

    center = cross(parents.center[first], parents.center[second])
    scale = cross(parents.scale[first], parents.scale[second])
    bias = cross(parents.bias[first], parents.bias[second])
    coupling = cross(parents.price_coupling[first], parents.price_coupling[second])

    center = center + rng.normal(size=(count, dim)) * (MUTATION * ranges.span)
    scale_sd = MUTATION * (ranges.scale_high - ranges.scale_low)
    scale = scale + rng.normal(size=(count, dim)) * scale_sd
    scale = np.maximum(scale, SCALE_FLOOR / ranges.sigma)
    bias = bias + rng.normal(size=count) * (MUTATION * (ranges.bias[1] - ranges.bias[0]))
    coupling = coupling + rng.normal(size=count) * (MUTATION * (ranges.coupling[1] - ranges.coupling[0]))
    return Pool(parents.asset_class[first], center, scale, bias, coupling)


def _concat(a: Pool, b: Pool) -> Pool:
    return Pool(np.concatenate([a.asset_class, b.asset_class]),
                np.concatenate([a.center, b.center]), np.concatenate([a.scale, b.scale]),
                np.concatenate([a.bias, b.bias]),
                np.concatenate([a.price_coupling, b.price_coupling]))


def generation_profits(pool: Pool, records: list[MarketRunRecord], y: np.ndarray) -> np.ndarray:
    profit = np.zeros(len(pool))
    for r in records:
        profit += agent_profits(r, len(pool), int(y[r.point_index]))
    return profit


def evolve_generation(pool: Pool, x: np.ndarray, y: np.ndarray, hyper: HyperParams, seed,
                      generation: int = 0,
                      records: list[MarketRunRecord] | None = None) -> tuple[Pool, GenerationReport]:
    """One GA round.  ``records`` may carry this pool's markets on stream
    ``(seed, STAGE_MARKETS, generation)`` to avoid rerunning them."""
    _check_training_set(x, y)
    n = hyper.n_agents
    if records is None:
        records = run_training_markets(pool, x, y, hyper, child(seed, STAGE_MARKETS, generation))
    before = rmse_of(records, y)
    profit = generation_profits(pool, records, y)
    profitable = np.flatnonzero(profit > 0)
    if profitable.size == 0:
        log.info("generation %d: no profitable agents, reinitializing pool", generation)
        fresh = init_pool(x, y, hyper, child(seed, STAGE_REINIT, generation))
        return fresh, GenerationReport(generation, math.nan, 0, [], len(fresh), before, True)

    ranges = InitRanges.from_data(x)
    rng = rng_for(seed, STAGE_BREED, generation)
    if hyper.selection_scope == "pool":
        groups = [(profitable, n, None)]
    else:
        groups = [(profitable[pool.asset_class[profitable] == c], quota, c)
                  for c, quota in ((0, n - n // 2), (1, n // 2))]
    parts, elite = [], []
    for members, quota, c in groups:
        if quota == 0:
            continue
        if members.size == 0:
            # a specialization with no profitable agent restarts from scratch
            fresh = init_pool(x, y, hyper, child(seed, STAGE_REINIT, generation, c))
            parts.append(fresh.take(np.flatnonzero(fresh.asset_class == c)[:quota]))
            continue
        # most profitable first; equal profits keep pool order
        ranked = members[np.lexsort((members, -profit[members]))]
        top = ranked[:N_ELITE]
        elite.extend(top)
        kept = ranked[:quota] if hyper.selection == "keep_profitable" else top[:quota]
        parts.append(pool.take(kept))
        if quota > kept.size:
            parts.append(_breed(pool.take(ranked[:N_PARENTS]), quota - kept.size, ranges, rng))
    new_pool = parts[0]
    for part in parts[1:]:
        new_pool = _concat(new_pool, part)
    elite = np.array(elite, dtype=np.int64)
    report = GenerationReport(generation, math.nan, int(profitable.size),
                              [float(v) for v in profit[elite]], len(new_pool), before)
    return new_pool, report


def train(x: np.ndarray, y: np.ndarray, hyper: HyperParams, seed,
          on_report=None) -> tuple[Pool, list[GenerationReport]]:
    """Initialize a pool and run ``hyper.generations`` GA rounds on ``(x, y)``."""
    pool = init_pool(x, y, hyper, child(seed, STAGE_INIT))
    reports: list[GenerationReport] = []
    records = None
    for g in range(hyper.generations):
        pool, report = evolve_generation(pool, x, y, hyper, seed, g, records)
        records = run_training_markets(pool, x, y, hyper, child(seed, STAGE_MARKETS, g + 1))
        report.rmse = rmse_of(records, y)
        reports.append(report)
        log.debug("generation %d: rmse %.4f survivors %d", g, report.rmse, report.survivors)
        if on_report is not None:
            on_report(report)
    return pool, reports
