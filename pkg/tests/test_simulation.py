import json
import math

import numpy as np
import pytest

from apm.agents import ExogenousPopulation, ExogenousSpec, ExoKind, Pool
from apm.errors import ConfigError
from apm.market import PriceQuote
from apm.simulation import (HyperParams, MarketRunRecord, TRADE_DTYPE, agent_profits, classify,
                            make_schedule, run_market, run_market_reference)
from apm.training import init_pool


def random_pool(n=40, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    return Pool(np.arange(n) % 2, rng.normal(size=(n, dim)), rng.uniform(0.2, 1.5, (n, dim)),
                rng.uniform(0, 2, n), rng.uniform(0, 2, n))


def hp(**kw):
    base = dict(liquidity_factor=5, arrival_rate=1.0, initial_cash=1.0, n_agents=40)
    base.update(kw)
    return HyperParams(**base)


def record(p0, p1, trades=1):
    t = np.zeros(trades, dtype=TRADE_DTYPE)
    scored = trades > 0 and p0 != p1
    return MarketRunRecord(0, PriceQuote(p0, p1), scored, None, trades, trades, trades, t)


def test_classify_examples():
    assert classify(record(0.3, 0.7)) == 1
    assert classify(record(0.6, 0.4)) == 0
    assert classify(record(0.5, 0.5, trades=0)) is None


def test_silent_pool_is_unscored():
    pool = Pool([0, 1], np.zeros((2, 2)), np.ones((2, 2)), [-50.0, -50.0], [0.0, 0.0])
    r = run_market(pool, [0.0, 0.0], hp(), np.random.default_rng(0))
    assert not r.scored and r.decision is None and r.participants == 0
    assert classify(r) is None
    assert r.final_prices == PriceQuote(0.5, 0.5)


def test_single_gt_agent_decides_truth():
    pool = Pool([0], np.zeros((1, 2)), np.ones((1, 2)), [-50.0], [0.0])
    exo = ExogenousPopulation.build(ExogenousSpec(ExoKind.GT, 0.001), 1, first_id=1)
    r = run_market(pool, [0.0, 0.0], hp(duration=20.0), np.random.default_rng(2),
                   true_label=1, exogenous=exo)
    assert r.scored and r.decision == 1 and classify(r) == 1
    assert np.all(r.trades["asset"] == 1) and r.trades.size > 5
    assert np.all(np.diff(r.trades["q1"]) == 1)


def test_determinism():
    pool = random_pool()
    x = np.array([0.1, -0.2, 0.3])
    a = run_market(pool, x, hp(), np.random.default_rng(11))
    b = run_market(pool, x, hp(), np.random.default_rng(11))
    assert a.same_as(b)
    assert a.log_lines() == b.log_lines()


@pytest.mark.parametrize("mode", ["per_agent", "global"])
@pytest.mark.parametrize("exo_kind", [None, ExoKind.GT, ExoKind.GTINV, ExoKind.RANDOM])
def test_compiled_loop_matches_reference(mode, exo_kind):
    pool = random_pool(n=30)
    h = hp(arrival_mode=mode, n_agents=30, liquidity_factor=10, initial_cash=2.0)
    exo = None
    if exo_kind is not None:
        exo = ExogenousPopulation.build(ExogenousSpec(exo_kind, 0.1, bank=3.0), 30, first_id=30)
    for seed in range(5):
        x = np.random.default_rng(seed).normal(size=3) * 0.5
        fast = run_market(pool, x, h, np.random.default_rng(seed), true_label=seed % 2, exogenous=exo)
        slow = run_market_reference(pool, x, h, np.random.default_rng(seed), true_label=seed % 2,
                                    exogenous=exo)
        assert fast.decision == slow.decision and fast.n_events == slow.n_events
        assert fast.trades.size == slow.trades.size
        for name in TRADE_DTYPE.names:
            assert np.allclose(fast.trades[name], slow.trades[name], rtol=1e-12, equal_nan=True), name


def test_arrival_count_close_to_expectation():
    n, rate, horizon = 400, 0.5, 20.0
    sched = make_schedule(n, 0, hp(arrival_rate=rate, duration=horizon), np.random.default_rng(5))
    arrivals = sched.agents.size - n
    assert abs(arrivals - n * rate * horizon) / (n * rate * horizon) < 0.05
    assert np.all(sched.times[:n] == 0)
    assert np.all(np.diff(sched.times) >= 0)
    assert sched.times.max() <= horizon
    assert sorted(sched.agents[:n]) == list(range(n))


def test_exo_opening_switch():
    sched = make_schedule(10, 3, hp(), np.random.default_rng(0), exo_at_open=False)
    opening = sched.agents[sched.times == 0]
    assert sorted(opening) == list(range(10))


def test_gating_and_banks_hold_in_every_trade():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(20, 3))
    y = (x[:, 0] > 0).astype(int)
    h = hp(n_agents=60, initial_cash=1.5)
    pool = init_pool(x, y, h, 0)
    for j in range(20):
        r = run_market(pool, x[j], h, np.random.default_rng(j))
        t = r.trades
        assert np.all(t["valuation"] > t["cost"])
        assert np.all(t["bank_before"] > t["cost"])
        spent = np.bincount(t["agent"], weights=t["cost"], minlength=len(pool))
        assert np.all(h.initial_cash - spent >= 0)


def test_agent_profits():
    pool = random_pool(n=20)
    r = run_market(pool, np.zeros(3), hp(n_agents=20), np.random.default_rng(0))
    prof = agent_profits(r, 20, 1)
    for i in range(20):
        mine = r.trades[r.trades["agent"] == i]
        expect = np.sum((mine["asset"] == 1) - mine["cost"])
        assert prof[i] == pytest.approx(expect)


def test_trade_log_lines():
    pool = random_pool(n=20)
    r = run_market(pool, np.zeros(3), hp(n_agents=20), np.random.default_rng(0))
    lines = r.log_lines()
    assert len(lines) == r.trades.size
    if lines:
        first = json.loads(lines[0])
        assert set(first) == {"point", "time", "agent_id", "asset", "cost", "p0", "p1"}
        assert math.isclose(first["p0"] + first["p1"], 1.0)


def test_errors():
    with pytest.raises(ConfigError):
        run_market(Pool(np.zeros(0), np.zeros((0, 2)), np.zeros((0, 2)), [], []), [0, 0], hp(),
                   np.random.default_rng(0))
    exo = ExogenousPopulation.build(ExogenousSpec(ExoKind.GT, 0.01), 10, 10)
    with pytest.raises(ConfigError):
        run_market(random_pool(), np.zeros(3), hp(), np.random.default_rng(0), exogenous=exo)
    with pytest.raises(ConfigError):
        run_market(random_pool(), np.zeros(4), hp(), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        HyperParams(0, 1, 1)
    with pytest.raises(ConfigError):
        hp(arrival_mode="poisson")


def test_hyper_replace():
    h = hp()
    assert h.replace(liquidity_factor=300).beta == pytest.approx(1 / 300)
    assert h.replace().to_dict() == h.to_dict()
