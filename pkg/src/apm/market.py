"""Two-asset LMSR market maker.

Prices are the softmax of ``beta * (q0, q1)``; the cost of buying ``delta``
shares of one asset is the increase of the potential
``C(q) = log(exp(beta*q0) + exp(beta*q1)) / beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from numba import njit


@njit(cache=True)
def price_of(q0, q1, beta, asset):
    """Spot price of ``asset`` in a stable form (no exponent overflow)."""
    z = beta * (q1 - q0)
    # exp(-|z|) never overflows; the larger price is taken as the complement
    e = math.exp(-abs(z))
    small = e / (1.0 + e)
    if (asset == 1) == (z >= 0):
        return 1.0 - small
    return small


@njit(cache=True)
def cost_of(q0, q1, beta, asset, delta):
    """Market-maker charge for ``delta`` shares of ``asset`` at state ``(q0, q1)``."""
    if delta == 0:
        return 0.0
    bd = beta * delta
    if bd <= 30.0:
        # C(q + d e_a) - C(q) = log(1 + p_a (e^{beta d} - 1)) / beta
        return math.log1p(price_of(q0, q1, beta, asset) * math.expm1(bd)) / beta
    a = beta * q0
    b = beta * q1
    if asset == 0:
        a2, b2 = a + bd, b
    else:
        a2, b2 = a, b + bd
    m2 = max(a2, b2)
    m = max(a, b)
    lse2 = m2 + math.log(math.exp(a2 - m2) + math.exp(b2 - m2))
    lse = m + math.log(math.exp(a - m) + math.exp(b - m))
    return (lse2 - lse) / beta


@dataclass
class MarketState:
    q0: int = 0
    q1: int = 0
    beta: float = 1.0
    clock: float = 0.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.q0 < 0 or self.q1 < 0:
            raise ValueError("share quantities must be non-negative")

    @classmethod
    def fresh(cls, liquidity_factor: float) -> MarketState:
        return cls(0, 0, 1.0 / liquidity_factor, 0.0)

    @property
    def liquidity_factor(self) -> float:
        return 1.0 / self.beta

    def quantity(self, asset: int) -> int:
        return self.q1 if asset == 1 else self.q0


@dataclass(frozen=True)
class PriceQuote:
    p0: float
    p1: float

    def __getitem__(self, asset: int) -> float:
        return self.p1 if asset == 1 else self.p0


@dataclass(frozen=True)
class TradeReceipt:
    asset: int
    quantity: int
    cost: float
    time: float
    agent_id: int


def spot_price(state: MarketState) -> PriceQuote:
    return PriceQuote(
        price_of(state.q0, state.q1, state.beta, 0),
        price_of(state.q0, state.q1, state.beta, 1),
    )


def trade_cost(state: MarketState, asset: int, delta: int) -> float:
    if asset not in (0, 1):
        raise ValueError(f"asset must be 0 or 1, got {asset!r}")
    if delta < 0:
        raise ValueError("agents cannot sell")
    return cost_of(state.q0, state.q1, state.beta, asset, delta)


def execute_purchase(state: MarketState, asset: int, agent_id) -> TradeReceipt:
    """Buy one share of ``asset``; mutates ``state`` and returns the receipt.

    Funding is not checked here. The clock is left untouched.
    """
    cost = trade_cost(state, asset, 1)
    if asset == 1:
        state.q1 += 1
    else:
        state.q0 += 1
    return TradeReceipt(asset, 1, cost, state.clock, agent_id)
