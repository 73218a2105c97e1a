"""One market per data point.

A run has two phases.  At ``t = 0`` every agent, in a shuffled order, gets a
single chance to buy.  After that agents arrive with exponential
inter-arrival times of rate ``arrival_rate`` until ``duration``; each arrival
is one more chance to buy one share.  The asset with the higher closing
price is the market's decision.

The event loop is compiled with numba.  ``run_market_reference`` replays the
same schedule through the per-agent functions in :mod:`apm.agents` and is
kept as a slow cross-check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .agents import (ExogenousAgent, ExogenousPopulation, Pool, TrainedAgent,
                     decide_exogenous, decide_purchase, valuation)
from .errors import ConfigError
from .market import MarketState, PriceQuote, TradeReceipt, cost_of, execute_purchase, price_of, spot_price

ARRIVAL_MODES = ("per_agent", "global")
SELECTION_MODES = ("elite", "keep_profitable")
SELECTION_SCOPES = ("per_class", "pool")

TRADE_DTYPE = np.dtype([
    ("time", "f8"),
    ("agent", "i8"),
    ("asset", "i8"),
    ("cost", "f8"),
    ("valuation", "f8"),   # nan for exogenous agents
    ("bank_before", "f8"),
    ("q0", "i8"),          # post-trade state
    ("q1", "i8"),
])


@dataclass(frozen=True)
class HyperParams:
    liquidity_factor: float
    arrival_rate: float
    initial_cash: float
    duration: float = 20.0
    generations: int = 5
    n_agents: int = 1080
    arrival_mode: str = "per_agent"
    selection: str = "elite"
    selection_scope: str = "per_class"

    def __post_init__(self):
        for name in ("liquidity_factor", "arrival_rate", "initial_cash", "duration"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        if not isinstance(self.generations, int) or self.generations < 0:
            raise ConfigError(f"generations must be a non-negative integer, got {self.generations!r}")
        if not isinstance(self.n_agents, int) or self.n_agents < 1:
            raise ConfigError(f"n_agents must be a positive integer, got {self.n_agents!r}")
        if self.arrival_mode not in ARRIVAL_MODES:
            raise ConfigError(f"arrival_mode must be one of {ARRIVAL_MODES}")
        if self.selection not in SELECTION_MODES:
            raise ConfigError(f"selection must be one of {SELECTION_MODES}")
        if self.selection_scope not in SELECTION_SCOPES:
            raise ConfigError(f"selection_scope must be one of {SELECTION_SCOPES}")

    @property
    def beta(self) -> float:
        return 1.0 / self.liquidity_factor

    def replace(self, **changes) -> HyperParams:
        d = self.to_dict()
        d.update(changes)
        return HyperParams(**d)

    def to_dict(self) -> dict:
        return {
            "liquidity_factor": self.liquidity_factor,
            "arrival_rate": self.arrival_rate,
            "initial_cash": self.initial_cash,
            "duration": self.duration,
            "generations": self.generations,
            "n_agents": self.n_agents,
            "arrival_mode": self.arrival_mode,
            "selection": self.selection,
            "selection_scope": self.selection_scope,
        }


@dataclass
class MarketRunRecord:
    point_index: int
    final_prices: PriceQuote
    scored: bool
    decision: int | None
    participants: int
    trained_participants: int
    n_events: int
    trades: np.ndarray = field(repr=False)
    beta: float = 1.0

    def receipts(self) -> list[TradeReceipt]:
        return [TradeReceipt(int(t["asset"]), 1, float(t["cost"]), float(t["time"]), int(t["agent"]))
                for t in self.trades]

    def same_as(self, other: MarketRunRecord) -> bool:
        return (self.point_index == other.point_index and self.final_prices == other.final_prices
                and self.scored == other.scored and self.decision == other.decision
                and self.participants == other.participants
                and self.trained_participants == other.trained_participants
                and self.n_events == other.n_events
                and self.trades.tobytes() == other.trades.tobytes())

    def log_lines(self) -> list[str]:
        """Line-delimited JSON trade log (time, agent_id, asset, cost, post-trade prices)."""
        lines = []
        for t in self.trades:
            p1 = price_of(int(t["q0"]), int(t["q1"]), self.beta, 1)
            lines.append(json.dumps({
                "point": self.point_index, "time": float(t["time"]), "agent_id": int(t["agent"]),
                "asset": int(t["asset"]), "cost": float(t["cost"]),
                "p0": price_of(int(t["q0"]), int(t["q1"]), self.beta, 0), "p1": p1,
            }))
        return lines


ABSTAIN = None


def classify(record: MarketRunRecord) -> int | None:
    """1 or 0 by the higher closing price; ``None`` (abstain) if unscored or tied."""
    if not record.scored:
        return ABSTAIN
    p = record.final_prices
    if p.p1 > p.p0:
        return 1
    if p.p0 > p.p1:
        return 0
    return ABSTAIN


# --------------------------------------------------------------------------
# schedule

@dataclass
class Schedule:
    agents: np.ndarray   # agent index per decision opportunity
    times: np.ndarray
    coins: np.ndarray    # fair coin per opportunity, used by random agents only


def _arrivals_per_agent(n: int, rate: float, horizon: float, rng: np.random.Generator):
    mean = rate * horizon
    m = max(1, int(math.ceil(mean + 5.0 * math.sqrt(mean) + 5.0)))
    clock = np.cumsum(rng.exponential(1.0 / rate, size=(n, m)), axis=1)
    rows = [clock]
    last = clock[:, -1]
    # rare: extend agents whose clock has not yet passed the horizon
    while np.any(last <= horizon):
        extra = np.cumsum(rng.exponential(1.0 / rate, size=(n, m)), axis=1) + last[:, None]
        rows.append(extra)
        last = extra[:, -1]
    clock = np.concatenate(rows, axis=1) if len(rows) > 1 else clock
    agent_idx, _ = np.nonzero(clock <= horizon)
    times = clock[clock <= horizon]
    order = np.argsort(times, kind="stable")
    return agent_idx[order], times[order]


def _arrivals_global(n: int, rate: float, horizon: float, rng: np.random.Generator):
    times = []
    t = rng.exponential(1.0 / rate)
    while t <= horizon:
        times.append(t)
        t += rng.exponential(1.0 / rate)
    times = np.array(times, dtype=float)
    return rng.integers(n, size=times.size), times


def make_schedule(n_trained: int, n_exo: int, hyper: HyperParams, rng: np.random.Generator,
                  exo_at_open: bool = True) -> Schedule:
    n = n_trained + n_exo
    opening = rng.permutation(n) if exo_at_open else rng.permutation(n_trained)
    if hyper.arrival_mode == "per_agent":
        idx, times = _arrivals_per_agent(n, hyper.arrival_rate, hyper.duration, rng)
    else:
        idx, times = _arrivals_global(n, hyper.arrival_rate, hyper.duration, rng)
    agents = np.concatenate([opening, idx]).astype(np.int64)
    all_times = np.concatenate([np.zeros(opening.size), times])
    coins = rng.integers(2, size=agents.size).astype(np.int64)
    return Schedule(agents, all_times, coins)


# --------------------------------------------------------------------------
# compiled event loop

KIND_TRAINED = 0


@njit(cache=True)
def _event_loop(agents, times, coins, kind, asset, static, coupling, bank, beta, label, log):
    q0 = 0
    q1 = 0
    n = 0
    for e in range(agents.shape[0]):
        i = agents[e]
        k = kind[i]
        if k == 0:
            a = asset[i]
        elif k == 1:
            a = label
        elif k == 2:
            a = 1 - label
        else:
            a = coins[e]
        cost = cost_of(q0, q1, beta, a, 1)
        value = np.nan
        if k == 0:
            psi = static[i] - coupling[i] * price_of(q0, q1, beta, a)
            if psi >= 0:
                value = 1.0 / (1.0 + math.exp(-psi))
            else:
                ex = math.exp(psi)
                value = ex / (1.0 + ex)
            if not (value > cost and bank[i] > cost):
                continue
        elif not bank[i] > cost:
            continue
        before = bank[i]
        bank[i] = before - cost
        if a == 1:
            q1 += 1
        else:
            q0 += 1
        log[n, 0] = times[e]
        log[n, 1] = i
        log[n, 2] = a
        log[n, 3] = cost
        log[n, 4] = value
        log[n, 5] = before
        log[n, 6] = q0
        log[n, 7] = q1
        n += 1
    return q0, q1, n


def _pack_log(raw: np.ndarray) -> np.ndarray:
    out = np.empty(raw.shape[0], dtype=TRADE_DTYPE)
    for j, name in enumerate(TRADE_DTYPE.names):
        out[name] = raw[:, j]
    return out


def _finish(point_index, q0, q1, trades, n_trained, n_events, beta) -> MarketRunRecord:
    state = MarketState(int(q0), int(q1), beta)
    prices = spot_price(state)
    scored = trades.size > 0 and prices.p0 != prices.p1
    decision = None
    if scored:
        decision = 1 if prices.p1 > prices.p0 else 0
    who = np.unique(trades["agent"])
    return MarketRunRecord(point_index, prices, bool(scored), decision, int(who.size),
                           int(np.count_nonzero(who < n_trained)), int(n_events), trades, beta)


def _check_inputs(pool, features, exogenous, true_label):
    if pool is None or len(pool) == 0:
        raise ConfigError("empty agent pool")
    if exogenous is not None and len(exogenous) > 0 and true_label not in (0, 1):
        raise ConfigError("exogenous agents need the true label of the point")


def run_market(pool: Pool, features, hyper: HyperParams, rng: np.random.Generator,
               true_label: int | None = None, exogenous: ExogenousPopulation | None = None,
               point_index: int = 0, exo_at_open: bool = True,
               static: np.ndarray | None = None) -> MarketRunRecord:
    """Run a single market on ``features``; banks start at ``initial_cash``.

    ``static`` may carry precomputed ``pool.static_score(features)``.
    """
    _check_inputs(pool, features, exogenous, true_label)
    n = len(pool)
    exo = exogenous.agents if exogenous is not None else []
    m = len(exo)
    if static is None:
        static = pool.static_score(features)
    kind = np.zeros(n + m, dtype=np.int64)
    asset = np.zeros(n + m, dtype=np.int64)
    asset[:n] = pool.asset_class
    st = np.zeros(n + m)
    st[:n] = static
    coupling = np.zeros(n + m)
    coupling[:n] = pool.price_coupling
    bank = np.full(n + m, float(hyper.initial_cash))
    for j, a in enumerate(exo):
        kind[n + j] = int(a.kind)
        bank[n + j] = a.bank
    sched = make_schedule(n, m, hyper, rng, exo_at_open)
    log = np.empty((sched.agents.size, len(TRADE_DTYPE.names)))
    label = -1 if true_label is None else int(true_label)
    q0, q1, k = _event_loop(sched.agents, sched.times, sched.coins, kind, asset, st, coupling,
                            bank, hyper.beta, label, log)
    return _finish(point_index, q0, q1, _pack_log(log[:k]), n, sched.agents.size, hyper.beta)


class _CoinFeed:
    def __init__(self, coins):
        self._it = iter(coins)

    def integers(self, n):
        return next(self._it)


def run_market_reference(pool: Pool, features, hyper: HyperParams, rng: np.random.Generator,
                         true_label: int | None = None,
                         exogenous: ExogenousPopulation | None = None,
                         point_index: int = 0, exo_at_open: bool = True) -> MarketRunRecord:
    """Object-per-agent replay of :func:`run_market`; consumes the RNG identically."""
    _check_inputs(pool, features, exogenous, true_label)
    n = len(pool)
    exo = [ExogenousAgent(a.id, a.kind, a.bank) for a in (exogenous.agents if exogenous else [])]
    trained = [TrainedAgent(i, pool.genome(i), float(hyper.initial_cash)) for i in range(n)]
    sched = make_schedule(n, len(exo), hyper, rng, exo_at_open)
    state = MarketState.fresh(hyper.liquidity_factor)
    rows = []
    for e in range(sched.agents.size):
        i = int(sched.agents[e])
        state.clock = float(sched.times[e])
        coin = _CoinFeed([int(sched.coins[e])])
        if i < n:
            agent = trained[i]
            value = valuation(agent.genome, features, state)
            choice = decide_purchase(agent, features, state)
            before = agent.bank
        else:
            agent = exo[i - n]
            value = math.nan
            choice = decide_exogenous(agent, true_label, coin, state)
            before = agent.bank
        if choice is None:
            continue
        receipt = execute_purchase(state, choice, i)
        if i < n:
            agent.pay(receipt.cost)
        else:
            agent.bank -= receipt.cost
        rows.append((receipt.time, i, choice, receipt.cost, value, before, state.q0, state.q1))
    trades = np.array(rows, dtype=TRADE_DTYPE)
    return _finish(point_index, state.q0, state.q1, trades, n, sched.agents.size, state.beta)


def agent_profits(record: MarketRunRecord, n_trained: int, true_label: int) -> np.ndarray:
    """Per trained agent profit for one market: winning shares pay 1, losing pay 0."""
    t = record.trades
    t = t[t["agent"] < n_trained]
    payoff = (t["asset"] == true_label).astype(float) - t["cost"]
    return np.bincount(t["agent"], weights=payoff, minlength=n_trained)
