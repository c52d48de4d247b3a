"""Shared random-instance generators and independent demand oracles.

The oracles here deliberately avoid the library's envelope code: expected
demand is recomputed by direct utility comparison over a value grid, so the
analytic solver has something independent to be checked against.
"""
from __future__ import annotations

import numpy as np

from tiersim import (
    DemandComponent,
    DemandSpec,
    Normal,
    Point,
    SteadyDemand,
    Uniform,
    tail_probability,
)


def quadrature_demand(sizes, delays, prices, demand, points=400_000):
    """E[T_j] by midpoint quadrature over each component's v0 range.

    Winners come from comparing utilities directly on the grid; ties split
    proportionally to tier size. Components must have fixed discounts.
    """
    sizes = np.asarray(sizes, dtype=float)
    prices = np.asarray(prices, dtype=float)
    out = np.zeros(len(prices))
    for comp in demand.spec.components:
        h = comp.fixed_discount()
        assert h is not None, "oracle needs fixed discounts"
        slopes = np.array([float(h.evaluate(int(d))) for d in delays])
        if isinstance(comp.v0, Point):
            xs = np.array([comp.v0.value])
            w = np.array([1.0])
        elif isinstance(comp.v0, Uniform):
            edges = np.linspace(comp.v0.lo, comp.v0.hi, points + 1)
            xs = 0.5 * (edges[:-1] + edges[1:])
            w = np.full(points, 1.0 / points)
        else:
            lo, hi = 0.0, comp.v0.mean + 10.0 * comp.v0.sd
            edges = np.linspace(lo, hi, points + 1)
            xs = 0.5 * (edges[:-1] + edges[1:])
            dens = np.exp(-0.5 * ((xs - comp.v0.mean) / comp.v0.sd) ** 2)
            w = dens / dens.sum()
        util = xs[:, None] * slopes[None, :] - prices[None, :]
        best = util.max(axis=1)
        cand = (util >= best[:, None] - 1e-12) & (best >= 0.0)[:, None]
        weighted = cand * sizes[None, :]
        tot = weighted.sum(axis=1)
        alloc = weighted / np.where(tot > 0.0, tot, 1.0)[:, None]
        out += comp.weight * (w[:, None] * alloc).sum(axis=0)
    return demand.n * out


def two_tier_demand_grid(p1, p2, delays, demand):
    """Closed-form (E[T_1], E[T_2]) on broadcast price arrays, two tiers only.

    Works directly from tail probabilities and the pairwise crossing point, so
    it shares no code with the envelope construction.
    """
    e1 = np.zeros(np.broadcast(p1, p2).shape)
    e2 = np.zeros_like(e1)
    for comp in demand.spec.components:
        h = comp.fixed_discount()
        assert h is not None
        s1, s2 = float(h.evaluate(delays[0])), float(h.evaluate(delays[1]))
        assert s1 > s2 > 0.0, "grid oracle needs strictly separated slopes"

        def tail(x):
            if isinstance(comp.v0, Uniform):
                lo, hi = comp.v0.lo, comp.v0.hi
                return np.clip((hi - x) / (hi - lo), 0.0, 1.0)
            raise AssertionError("grid oracle covers Uniform v0 only")

        x10 = p1 / s1
        x20 = p2 / s2
        x12 = (p1 - p2) / (s1 - s2)
        e1 = e1 + comp.weight * tail(np.maximum(x10, x12))
        e2 = e2 + comp.weight * np.maximum(tail(x20) - tail(np.maximum(x12, x20)), 0.0)
    return demand.n * e1, demand.n * e2


def stability_score(e, sizes, prices):
    """Max violation of "compatible and stable" over stacked tiers.

    Zero at an exact solution; positive when some tier is over target or
    under-full at a positive price. ``e``, ``prices`` are per-tier sequences
    of broadcast-compatible arrays.
    """
    score = None
    for ej, b, pj in zip(e, sizes, prices):
        over = ej - b
        under = np.minimum(np.maximum(b - ej, 0.0), pj)
        worst = np.maximum(over, under)
        score = worst if score is None else np.maximum(score, worst)
    return score


def random_regular_instance(rng, max_tiers=4, uniform_only=False, max_hi=3.0):
    """Random menu plus point-urgency mixture demand the solver can clear.

    Every v0 distribution has positive density on all of [0, max support], so
    each tier fills exactly at the solution.
    """
    m = int(rng.integers(1, max_tiers + 1))
    total = float(rng.uniform(30.0, 200.0))
    parts = rng.uniform(0.5, 1.5, m)
    sizes = [float(x) for x in total * parts / parts.sum()]
    delays = [int(rng.integers(1, 3))]
    for _ in range(m - 1):
        delays.append(delays[-1] + int(rng.integers(1, 4)))
    n_comp = int(rng.integers(1, 4))
    wparts = rng.uniform(0.5, 1.5, n_comp)
    weights = wparts / wparts.sum()
    comps = []
    for w in weights:
        if uniform_only or rng.random() < 0.5:
            v0 = Uniform(0.0, float(rng.uniform(1.0, max_hi)))
        else:
            v0 = Normal(float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.2, 0.8)))
        comps.append(DemandComponent(
            weight=float(w), v0=v0, urgency=Point(float(rng.uniform(1.1, 3.0))),
        ))
    n = total * float(rng.uniform(1.5, 4.0))
    return sizes, delays, SteadyDemand(n, DemandSpec(tuple(comps)))


def random_construct_instance(rng, max_tiers=4):
    """Sizes, spacing factors, and demand for the delay-ladder construction."""
    k = int(rng.integers(2, max_tiers + 1))
    total = float(rng.uniform(40.0, 160.0))
    parts = rng.uniform(0.6, 1.4, k)
    sizes = [float(x) for x in total * parts / parts.sum()]
    lam = [float(rng.uniform(1.3, 2.5)) for _ in range(k - 1)]
    mu = [float(rng.uniform(0.35, 0.65)) for _ in range(k - 1)]
    n_comp = int(rng.integers(1, 3))
    wparts = rng.uniform(0.5, 1.5, n_comp)
    comps = tuple(
        DemandComponent(
            weight=float(w / wparts.sum()),
            v0=Uniform(0.0, float(rng.uniform(1.0, 3.0))),
            urgency=Point(float(rng.uniform(1.3, 4.0))),
        )
        for w in wparts
    )
    n = total * float(rng.uniform(1.8, 3.5))
    return sizes, lam, mu, SteadyDemand(n, DemandSpec(comps))


def total_tail_demand(demand, threshold_fn):
    """n * P(v0 clears threshold_fn(component)), an independent one-liner."""
    return demand.n * sum(
        c.weight * tail_probability(c.v0, threshold_fn(c)) for c in demand.spec.components
    )
