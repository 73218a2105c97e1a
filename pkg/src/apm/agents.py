"""Trained and exogenous market participants.

A trained agent specializes in one asset.  Its characteristic score is a
price-shifted ellipsoid in feature space::

    psi(x, q) = bias - sum_k (scale_k * (x_k - center_k))**2 - price_coupling * p[asset_class]

and it values its asset at ``sigmoid(psi)``.  It buys one share whenever that
value and its bank both strictly exceed the one-share cost.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .market import MarketState, price_of, trade_cost


class ExoKind(enum.IntEnum):
    GT = 1
    GTINV = 2
    RANDOM = 3

    @classmethod
    def parse(cls, name: str) -> ExoKind:
        key = name.strip().lower()
        for kind in cls:
            if kind.name.lower() == key:
                return kind
        raise ConfigError(f"unknown exogenous kind {name!r} (expected gt, gtinv or random)")

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass
class AgentGenome:
    asset_class: int
    center: np.ndarray
    scale: np.ndarray
    bias: float
    price_coupling: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if self.asset_class not in (0, 1):
            raise ConfigError(f"asset_class must be 0 or 1, got {self.asset_class!r}")
        if self.center.shape != self.scale.shape or self.center.ndim != 1:
            raise ConfigError("center and scale must be vectors of equal length")
        if np.any(self.scale <= 0):
            raise ConfigError("scale components must be positive")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def to_record(self) -> dict:
        return {
            "asset_class": int(self.asset_class),
            "center": [float(v) for v in self.center],
            "scale": [float(v) for v in self.scale],
            "bias": float(self.bias),
            "price_coupling": float(self.price_coupling),
        }

    @classmethod
    def from_record(cls, rec: dict) -> AgentGenome:
        return cls(
            int(rec["asset_class"]),
            np.array(rec["center"], dtype=float),
            np.array(rec["scale"], dtype=float),
            float(rec["bias"]),
            float(rec["price_coupling"]),
        )


@dataclass
class Pool:
    """A population of genomes stored column-wise."""

    asset_class: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    bias: np.ndarray
    price_coupling: np.ndarray

    def __post_init__(self):
        self.asset_class = np.asarray(self.asset_class, dtype=np.int64)
        self.center = np.atleast_2d(np.asarray(self.center, dtype=float))
        self.scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        self.bias = np.asarray(self.bias, dtype=float)
        self.price_coupling = np.asarray(self.price_coupling, dtype=float)
        n = self.asset_class.shape[0]
        if not (self.center.shape == self.scale.shape and self.center.shape[0] == n
                and self.bias.shape == (n,) and self.price_coupling.shape == (n,)):
            raise ConfigError("inconsistent pool array shapes")

    def __len__(self) -> int:
        return self.asset_class.shape[0]

    @property
    def dim(self) -> int:
        return self.center.shape[1]

    def genome(self, i: int) -> AgentGenome:
        return AgentGenome(int(self.asset_class[i]), self.center[i].copy(), self.scale[i].copy(),
                           float(self.bias[i]), float(self.price_coupling[i]))

    def genomes(self) -> list[AgentGenome]:
        return [self.genome(i) for i in range(len(self))]

    @classmethod
    def from_genomes(cls, genomes: list[AgentGenome]) -> Pool:
        if not genomes:
            raise ConfigError("empty agent pool")
        return cls(
            [g.asset_class for g in genomes],
            np.stack([g.center for g in genomes]),
            np.stack([g.scale for g in genomes]),
            [g.bias for g in genomes],
            [g.price_coupling for g in genomes],
        )

    def take(self, idx) -> Pool:
        idx = np.asarray(idx, dtype=np.int64)
        return Pool(self.asset_class[idx], self.center[idx], self.scale[idx],
                    self.bias[idx], self.price_coupling[idx])

    def copy(self) -> Pool:
        return self.take(np.arange(len(self)))

    def static_score(self, features: np.ndarray) -> np.ndarray:
        """The state-independent part of psi for every agent at ``features``."""
        features = np.asarray(features, dtype=float)
        if features.shape != (self.dim,):
            raise ConfigError(f"feature vector has length {features.size}, pool expects {self.dim}")
        d = self.scale * (features - self.center)
        return self.bias - np.einsum("ij,ij->i", d, d)

    def same_as(self, other: Pool) -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("asset_class", "center", "scale", "bias", "price_coupling"))


@dataclass
class TrainedAgent:
    id: int
    genome: AgentGenome
    bank: float
    holdings: int = 0
    spend: float = 0.0
    trades: int = 0

    def pay(self, cost: float) -> None:
        self.bank -= cost
        self.spend += cost
        self.holdings += 1
        self.trades += 1


@dataclass
class ExogenousAgent:
    id: int
    kind: ExoKind
    bank: float = math.inf  # inf means unbounded

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.bank)


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def characteristic(genome: AgentGenome, features, state: MarketState) -> float:
    features = np.asarray(features, dtype=float)
    if features.shape != genome.center.shape:
        raise ConfigError(
            f"feature vector has length {features.size}, genome expects {genome.dim}")
    d = genome.scale * (features - genome.center)
    p = price_of(state.q0, state.q1, state.beta, genome.asset_class)
    return float(genome.bias - d @ d - genome.price_coupling * p)


def valuation(genome: AgentGenome, features, state: MarketState) -> float:
    return sigmoid(characteristic(genome, features, state))


def purchase_gate(value: float, cost: float, bank: float) -> bool:
    # H(0) = 0: ties do not buy
    return value > cost and bank > cost


def decide_purchase(agent: TrainedAgent, features, state: MarketState) -> int | None:
    """Return the asset to buy, or None to pass.  Does not mutate anything."""
    asset = agent.genome.asset_class
    cost = trade_cost(state, asset, 1)
    if purchase_gate(valuation(agent.genome, features, state), cost, agent.bank):
        return asset
    return None


def decide_exogenous(agent: ExogenousAgent, true_label: int, rng: np.random.Generator,
                     state: MarketState | None = None) -> int | None:
    """Behavioral rule of an exogenous agent.

    The random coin is always drawn for RANDOM agents so the RNG stream does
    not depend on the funding outcome.  Without a ``state`` the funding check
    is skipped.
    """
    if agent.kind == ExoKind.GT:
        asset = int(true_label)
    elif agent.kind == ExoKind.GTINV:
        asset = 1 - int(true_label)
    else:
        asset = int(rng.integers(2))
    if state is not None and not agent.unbounded:
        if not agent.bank > trade_cost(state, asset, 1):
            return None
    return asset


def settle(agent: TrainedAgent, true_label: int) -> float:
    payout = agent.holdings if agent.genome.asset_class == true_label else 0
    return payout - agent.spend


@dataclass
class ExogenousSpec:
    kind: ExoKind
    fraction: float
    bank: float = math.inf

    def count(self, n_agents: int) -> int:
        return exogenous_count(self.fraction, n_agents)


def exogenous_count(fraction: float, n_agents: int) -> int:
    # round half up, never fewer than one
    return max(1, int(math.floor(fraction * n_agents + 0.5)))


@dataclass
class ExogenousPopulation:
    agents: list[ExogenousAgent] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.agents)

    @classmethod
    def build(cls, spec: ExogenousSpec, n_agents: int, first_id: int) -> ExogenousPopulation:
        k = spec.count(n_agents)
        return cls([ExogenousAgent(first_id + j, spec.kind, spec.bank) for j in range(k)])
