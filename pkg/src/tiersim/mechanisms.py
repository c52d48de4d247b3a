"""Posted-price mechanism state machines.

``update_eip1559`` is the single-tier multiplicative price update. The tiered
mechanism runs the same update per tier every block, re-spaces delays every
``d_freq`` blocks, and grows/shrinks the tier list every ``t_freq`` blocks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chain import Blockchain, TierState


@dataclass(frozen=True)
class TieredParams:
    """Static parameters of the tiered mechanism (k = 1 is plain EIP-1559).

    ``a`` are tier-size fractions of total throughput; ``lam``/``mu`` are the
    per-gap delay-spacing and price-separation factors (k - 1 entries each).
    """

    k: int
    a: tuple[float, ...]
    lam: tuple[float, ...]
    mu: tuple[float, ...]
    d_freq: int = 25
    t_freq: int = 100
    p_decrease: float = 0.25
    add_tier_price: float = 2.0
    remove_tier_price: float = 1.0
    new_tier_price: float | None = None
    target_load: float = 1.0
    max_fill_factor: float = 2.0
    min_price: float = 0.0
    min_tier1_fraction: float = 0.05

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("need at least one tier")
        if len(self.a) != self.k:
            raise ValueError(f"expected {self.k} size fractions, got {len(self.a)}")
        if any(not 0.0 < f <= 1.0 for f in self.a):
            raise ValueError("size fractions must lie in (0, 1]")
        if abs(sum(self.a) - 1.0) > 1e-9:
            raise ValueError(f"size fractions sum to {sum(self.a)}, expected 1")
        if len(self.lam) != self.k - 1 or len(self.mu) != self.k - 1:
            raise ValueError("lam and mu need k - 1 entries")
        if any(not f > 1.0 for f in self.lam):
            raise ValueError("delay factors must exceed 1")
        if any(not 0.0 < f < 1.0 for f in self.mu):
            raise ValueError("price factors must lie in (0, 1)")
        if self.d_freq < 1 or self.t_freq < 1:
            raise ValueError("update frequencies must be positive")
        if not 0.0 <= self.p_decrease <= 1.0:
            raise ValueError("p_decrease is a probability")
        if self.k > 1 and not self.remove_tier_price < self.add_tier_price:
            raise ValueError("need remove_tier_price < add_tier_price")
        if self.target_load <= 0:
            raise ValueError("target load must be positive")
        if self.max_fill_factor < 1.0:
            raise ValueError("max fill factor must be at least 1")
        if self.min_price < 0:
            raise ValueError("minimum price must be non-negative")

    def resolved_new_tier_price(self) -> float:
        return self.new_tier_price if self.new_tier_price is not None else self.add_tier_price / 2.0


def eip1559_params(
    target_load: float = 1.0, max_fill_factor: float = 2.0, min_price: float = 0.0
) -> TieredParams:
    """The single-tier special case."""
    return TieredParams(
        k=1,
        a=(1.0,),
        lam=(),
        mu=(),
        target_load=target_load,
        max_fill_factor=max_fill_factor,
        min_price=min_price,
    )


def update_eip1559(price: float, fullness: float, target: float, min_price: float = 0.0) -> float:
    """Multiplicative update toward the target load, floored at ``min_price``."""
    if target <= 0:
        raise ValueError("target must be positive")
    if fullness < 0:
        raise ValueError("fullness must be non-negative")
    return max(min_price, price * (1.0 + 0.125 * (fullness - target) / target))


def update_delays(
    delays: Sequence[int],
    prices: Sequence[float],
    params: TieredParams,
    rng: np.random.Generator,
) -> tuple[int, ...]:
    """Re-space delays against the freshly updated prices.

    A gap whose price separation is too weak (p_{i+1} > mu_i * p_i) pushes the
    upper tier's delay out by one; otherwise the delay pulls back in with
    probability ``p_decrease``. Both branches clamp to the spacing floor
    ceil(lam_i * d_i) so the factor constraint holds at every block.
    """
    d = list(int(x) for x in delays)
    for i in range(len(d) - 1):
        if prices[i + 1] > params.mu[i] * prices[i]:
            nxt = d[i + 1] + 1
        else:
            nxt = d[i + 1]
            if rng.random() < params.p_decrease:
                nxt -= 1
        d[i + 1] = max(nxt, math.ceil(params.lam[i] * d[i]))
    return tuple(d)


def update_tier_sizes(
    sizes: Sequence[float], last_price: float, params: TieredParams, throughput: float
) -> tuple[float, ...]:
    """Drop a cheap last tier, or split a new one off tier 1 when demand allows.

    Removal returns the last tier's space to tier 1. Addition carves
    ``a_{m+1} * B`` out of tier 1, skipped if that would leave tier 1 under
    ``min_tier1_fraction * B``.
    """
    m = len(sizes)
    s = list(float(x) for x in sizes)
    if m > 1 and last_price < params.remove_tier_price:
        s[0] += s.pop()
    elif m < params.k and last_price > params.add_tier_price:
        new = params.a[m] * throughput
        if s[0] - new >= params.min_tier1_fraction * throughput:
            s[0] -= new
            s.append(new)
    return tuple(s)


@dataclass(frozen=True)
class MechanismState:
    chain: Blockchain
    params: TieredParams
    throughput: float
    update_count: int = 0

    def __post_init__(self) -> None:
        if self.chain.m > self.params.k:
            raise ValueError("more active tiers than the mechanism allows")
        if abs(self.chain.throughput - self.throughput) > 1e-9 * max(1.0, self.throughput):
            raise ValueError("tier sizes must sum to the chain throughput")

    @property
    def m(self) -> int:
        return self.chain.m


def initial_state(params: TieredParams, throughput: float, initial_price: float = 1.0) -> MechanismState:
    """Start as a single tier covering the whole block at the initial price."""
    chain = Blockchain((TierState(throughput, 1, initial_price),))
    return MechanismState(chain=chain, params=params, throughput=throughput)


def update_tier_parameters(
    state: MechanismState, fullness: Sequence[float], rng: np.random.Generator
) -> MechanismState:
    """Advance the mechanism by one block given per-tier inclusion counts."""
    if len(fullness) != state.m:
        raise ValueError(f"expected {state.m} fullness entries, got {len(fullness)}")
    params = state.params
    t = state.update_count + 1
    sizes = [tier.size for tier in state.chain.tiers]
    delays = [tier.delay for tier in state.chain.tiers]
    prices = [
        update_eip1559(tier.price, f, params.target_load * tier.size, params.min_price)
        for tier, f in zip(state.chain.tiers, fullness)
    ]
    if t % params.d_freq == 0:
        delays = list(update_delays(delays, prices, params, rng))
    if t % params.t_freq == 0:
        m = len(sizes)
        new_sizes = update_tier_sizes(sizes, prices[-1], params, state.throughput)
        if len(new_sizes) < m:
            sizes = list(new_sizes)
            delays.pop()
            prices.pop()
        elif len(new_sizes) > m:
            sizes = list(new_sizes)
            delays.append(math.ceil(params.lam[m - 1] * delays[m - 1]))
            prices.append(params.resolved_new_tier_price())
        else:
            sizes = list(new_sizes)
    chain = Blockchain(tuple(TierState(s, d, p) for s, d, p in zip(sizes, delays, prices)))
    return MechanismState(chain=chain, params=params, throughput=state.throughput, update_count=t)
