"""Tier menus and the transaction's tier choice.

Tier 0 is the outside option (stay out, utility 0). Real tiers are numbered
from 1 and must quote strictly increasing delays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .demand import ValueFunction

# Utilities within this absolute distance of the maximum count as tied.
TIE_TOL = 1e-12


@dataclass(frozen=True)
class TierState:
    size: float
    delay: int
    price: float

    def __post_init__(self) -> None:
        if not self.size > 0:
            raise ValueError("tier size must be positive")
        if int(self.delay) != self.delay or self.delay < 1:
            raise ValueError("tier delay must be an integer >= 1")
        if self.price < 0:
            raise ValueError("tier price must be non-negative")
        object.__setattr__(self, "delay", int(self.delay))


@dataclass(frozen=True)
class Blockchain:
    tiers: tuple[TierState, ...]

    def __post_init__(self) -> None:
        if not self.tiers:
            raise ValueError("a chain has at least one tier")
        ds = [t.delay for t in self.tiers]
        if any(b <= a for a, b in zip(ds, ds[1:])):
            raise ValueError(f"tier delays must be strictly increasing, got {ds}")

    @property
    def m(self) -> int:
        return len(self.tiers)

    @property
    def throughput(self) -> float:
        return sum(t.size for t in self.tiers)

    def sizes(self) -> np.ndarray:
        return np.array([t.size for t in self.tiers])

    def delays(self) -> np.ndarray:
        return np.array([t.delay for t in self.tiers], dtype=np.int64)

    def prices(self) -> np.ndarray:
        return np.array([t.price for t in self.tiers])


def utility(vf: ValueFunction, tier_index: int, chain: Blockchain) -> float:
    """``v(d_j) - p_j`` for a real tier, 0 for tier 0."""
    if tier_index == 0:
        return 0.0
    tier = chain.tiers[tier_index - 1]
    return vf.value(tier.delay) - tier.price


def utilities(vf: ValueFunction, chain: Blockchain) -> np.ndarray:
    vals = vf.v0 * np.asarray(vf.h.evaluate(chain.delays()), dtype=float)
    return vals - chain.prices()


def preferred_tiers(vf: ValueFunction, chain: Blockchain) -> set[int]:
    """Indices (0 included) whose utility ties the maximum within TIE_TOL."""
    us = utilities(vf, chain)
    best = max(float(us.max()), 0.0)
    out = {j + 1 for j in range(chain.m) if us[j] >= best - TIE_TOL}
    if best <= TIE_TOL:
        out.add(0)
    return out


def choose_tier(vf: ValueFunction, chain: Blockchain, rng: np.random.Generator) -> int:
    """Resolve ties proportionally to tier sizes; 0-vs-paid ties go paid."""
    pref = preferred_tiers(vf, chain)
    paid = sorted(pref - {0})
    if not paid:
        return 0
    if len(paid) == 1:
        return paid[0]
    weights = np.array([chain.tiers[j - 1].size for j in paid])
    return int(rng.choice(paid, p=weights / weights.sum()))


def is_menu_monotone(chain: Blockchain) -> bool:
    """Prices non-increasing along the (already increasing) delays."""
    ps = [t.price for t in chain.tiers]
    return all(b <= a for a, b in zip(ps, ps[1:]))


@dataclass(frozen=True)
class TxOutcome:
    """One included transaction: what it was, where it landed, what it got."""

    vf: ValueFunction
    tier: int
    utility: float
