"""Value-function demand model: discount curves, mixtures, load schedules.

A transaction is worth ``v0 * h(d)`` when processed with delay ``d`` blocks
(``d >= 1`` means "next block"). ``h`` is a discount curve mapping delays to
factors in [0, 1]. A demand spec is a finite mixture of (v0, h) distributions;
a load schedule strings specs together over simulated time with an arrival
rate per region.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import erfc, ndtri

# Probability mass treated as "beyond the support" when bracketing prices.
TAIL_EPS = 1e-9


# ---------------------------------------------------------------------------
# discount curves


@dataclass(frozen=True)
class Geometric:
    """Discount ``(1/urgency)**(d-1)``: urgency 1 is flat, larger decays faster."""

    urgency: float

    def __post_init__(self) -> None:
        if not self.urgency >= 1.0:
            raise ValueError(f"urgency must be >= 1, got {self.urgency}")

    def evaluate(self, d):
        arr = np.asarray(d, dtype=float)
        out = np.exp(-(arr - 1.0) * math.log(self.urgency))
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Tabulated:
    """Piecewise-linear discount through (delay, factor) anchors.

    Anchors need strictly increasing integer delays (first one >= 1) and
    strictly decreasing factors in [0, 1]. Left of the first anchor the first
    factor applies; beyond the last anchor the factor halves per block, or
    stays at 0 once it reaches 0.
    """

    points: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        if not self.points:
            raise ValueError("tabulated discount needs at least one anchor")
        pts = tuple((int(d), float(f)) for d, f in self.points)
        object.__setattr__(self, "points", pts)
        ds = [d for d, _ in pts]
        fs = [f for _, f in pts]
        if ds[0] < 1:
            raise ValueError("anchor delays start at 1")
        if any(b <= a for a, b in zip(ds, ds[1:])):
            raise ValueError("anchor delays must be strictly increasing")
        if any(not 0.0 <= f <= 1.0 for f in fs):
            raise ValueError("anchor factors must lie in [0, 1]")
        if any(b >= a for a, b in zip(fs, fs[1:])):
            raise ValueError("anchor factors must be strictly decreasing")

    def evaluate(self, d):
        arr = np.asarray(d, dtype=float)
        xs = np.array([p[0] for p in self.points], dtype=float)
        ys = np.array([p[1] for p in self.points], dtype=float)
        out = np.interp(arr, xs, ys)
        if ys[-1] > 0.0:
            beyond = arr > xs[-1]
            if np.any(beyond):
                out = np.where(beyond, ys[-1] * 0.5 ** (arr - xs[-1]), out)
        return float(out) if out.ndim == 0 else out


DiscountFunction = Union[Geometric, Tabulated]


@dataclass(frozen=True)
class ValueFunction:
    """A transaction's worth by processing delay: ``v0 * h(d)``."""

    v0: float
    h: DiscountFunction
    component: int = 0  # originating mixture component, for composition stats

    def __post_init__(self) -> None:
        if self.v0 < 0:
            raise ValueError("base value must be non-negative")

    def value(self, d) -> float:
        if np.ndim(d) == 0 and d < 1:
            raise ValueError("delay starts at 1")
        return self.v0 * self.h.evaluate(d)


# ---------------------------------------------------------------------------
# scalar distributions


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Normal:
    """Normal(mean, sd) resampled until non-negative when drawn."""

    mean: float
    sd: float

    def __post_init__(self) -> None:
        if not self.sd > 0:
            raise ValueError("sd must be positive")


@dataclass(frozen=True)
class Point:
    value: float


Distribution = Union[Uniform, Normal, Point]


def _normal_sf(x: float) -> float:
    # P(Z >= x) for a standard normal.
    return 0.5 * erfc(x / math.sqrt(2.0))


def tail_probability(dist: Distribution, threshold: float) -> float:
    """P(X >= threshold) under ``dist`` (with Normal truncated below 0)."""
    if isinstance(dist, Uniform):
        if threshold <= dist.lo:
            return 1.0
        if threshold >= dist.hi:
            return 0.0
        return (dist.hi - threshold) / (dist.hi - dist.lo)
    if isinstance(dist, Normal):
        if threshold <= 0.0:
            return 1.0
        keep = _normal_sf(-dist.mean / dist.sd)  # P(X >= 0) before truncation
        return _normal_sf((threshold - dist.mean) / dist.sd) / keep
    if isinstance(dist, Point):
        return 1.0 if dist.value >= threshold else 0.0
    raise TypeError(f"unsupported distribution {type(dist).__name__}")


def upper_bound(dist: Distribution, eps: float = TAIL_EPS) -> float:
    """A value whose tail probability is at most ``eps`` (finite bracket)."""
    if isinstance(dist, Uniform):
        return dist.hi
    if isinstance(dist, Point):
        return dist.value
    if isinstance(dist, Normal):
        keep = _normal_sf(-dist.mean / dist.sd)
        return dist.mean + dist.sd * float(ndtri(1.0 - eps * keep))
    raise TypeError(f"unsupported distribution {type(dist).__name__}")


def sample_dist(dist: Distribution, rng: np.random.Generator, size: int) -> np.ndarray:
    if isinstance(dist, Uniform):
        return rng.uniform(dist.lo, dist.hi, size)
    if isinstance(dist, Point):
        return np.full(size, float(dist.value))
    if isinstance(dist, Normal):
        x = rng.normal(dist.mean, dist.sd, size)
        bad = x < 0.0
        while np.any(bad):
            x[bad] = rng.normal(dist.mean, dist.sd, int(bad.sum()))
            bad = x < 0.0
        return x
    raise TypeError(f"unsupported distribution {type(dist).__name__}")


# ---------------------------------------------------------------------------
# demand mixtures


@dataclass(frozen=True)
class DemandComponent:
    """One mixture component: a v0 distribution plus its discount behavior.

    Exactly one of ``urgency`` / ``discount`` must be given. With ``urgency``
    the discount is Geometric with the drawn urgency; ``discount`` fixes a
    single curve for every transaction of the component.
    """

    weight: float
    v0: Distribution
    urgency: Distribution | None = None
    discount: DiscountFunction | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.weight <= 1.0:
            raise ValueError("component weight must lie in (0, 1]")
        if (self.urgency is None) == (self.discount is None):
            raise ValueError("give exactly one of urgency or discount")
        if isinstance(self.v0, Uniform) and self.v0.lo < 0:
            raise ValueError("base values must be non-negative")
        if isinstance(self.v0, Point) and self.v0.value < 0:
            raise ValueError("base values must be non-negative")
        if self.urgency is not None:
            if isinstance(self.urgency, Normal):
                raise ValueError("urgency must be Uniform or Point")
            lo = self.urgency.lo if isinstance(self.urgency, Uniform) else self.urgency.value
            if lo < 1.0:
                raise ValueError("urgency must be >= 1")

    def fixed_discount(self) -> DiscountFunction | None:
        """The component's discount curve when it does not vary per draw."""
        if self.discount is not None:
            return self.discount
        if isinstance(self.urgency, Point):
            return Geometric(self.urgency.value)
        return None


@dataclass(frozen=True)
class DemandSpec:
    components: tuple[DemandComponent, ...]

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("demand spec needs at least one component")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"component weights sum to {total}, expected 1")

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(c.weight for c in self.components)

    def max_v0(self, eps: float = TAIL_EPS) -> float:
        return max(upper_bound(c.v0, eps) for c in self.components)


def v0_tail_probability(component: DemandComponent, threshold: float) -> float:
    """P(v0 >= threshold) for one component's base-value distribution."""
    return tail_probability(component.v0, threshold)


# ---------------------------------------------------------------------------
# sampling


@dataclass
class ArrivalBatch:
    """Column-oriented sample of value functions (the simulation hot path).

    ``urgency`` holds the geometric urgency per row and NaN where the row's
    component fixes a discount curve instead.
    """

    spec: DemandSpec
    v0: np.ndarray
    urgency: np.ndarray
    component: np.ndarray

    def __len__(self) -> int:
        return self.v0.shape[0]

    def slope_matrix(self, delays: Sequence[int]) -> np.ndarray:
        """h_i(d_j) for every row i and delay j, shape (len(self), len(delays))."""
        d = np.asarray(delays, dtype=float)
        out = np.empty((len(self), d.size))
        geo = np.isfinite(self.urgency)
        if np.any(geo):
            out[geo] = np.exp(-np.outer(np.log(self.urgency[geo]), d - 1.0))
        for idx, comp in enumerate(self.spec.components):
            if comp.discount is not None:
                rows = self.component == idx
                if np.any(rows):
                    out[rows] = np.asarray(comp.discount.evaluate(d), dtype=float)
        return out

    def value_functions(self) -> list[ValueFunction]:
        comps = self.spec.components
        out = []
        for i in range(len(self)):
            c = int(self.component[i])
            h = comps[c].discount if comps[c].discount is not None else Geometric(float(self.urgency[i]))
            out.append(ValueFunction(float(self.v0[i]), h, component=c))
        return out


def sample_batch(spec: DemandSpec, size: int, rng: np.random.Generator) -> ArrivalBatch:
    """Draw ``size`` i.i.d. value functions from the mixture."""
    if size < 0:
        raise ValueError("sample size must be non-negative")
    n_comp = len(spec.components)
    if n_comp == 1:
        comp = np.zeros(size, dtype=np.int64)
    else:
        comp = rng.choice(n_comp, size=size, p=np.asarray(spec.weights))
    v0 = np.empty(size)
    urgency = np.full(size, np.nan)
    for c, dc in enumerate(spec.components):
        rows = comp == c
        count = int(rows.sum())
        if count == 0:
            continue
        v0[rows] = sample_dist(dc.v0, rng, count)
        if dc.urgency is not None:
            urgency[rows] = sample_dist(dc.urgency, rng, count)
    return ArrivalBatch(spec=spec, v0=v0, urgency=urgency, component=comp)


def sample_value_function(spec: DemandSpec, rng: np.random.Generator) -> ValueFunction:
    return sample_batch(spec, 1, rng).value_functions()[0]


# ---------------------------------------------------------------------------
# load schedules


@dataclass(frozen=True)
class Region:
    blocks: int
    rate: float
    spec: DemandSpec

    def __post_init__(self) -> None:
        if self.blocks < 1:
            raise ValueError("region length must be at least one block")
        if self.rate < 0:
            raise ValueError("arrival rate must be non-negative")


@dataclass(frozen=True)
class LoadSchedule:
    regions: tuple[Region, ...]
    arrival_model: str = "deterministic"

    def __post_init__(self) -> None:
        if not self.regions:
            raise ValueError("schedule needs at least one region")
        if self.arrival_model not in ("deterministic", "poisson"):
            raise ValueError(f"unknown arrival model {self.arrival_model!r}")

    @property
    def total_blocks(self) -> int:
        return sum(r.blocks for r in self.regions)

    @property
    def region_starts(self) -> tuple[int, ...]:
        starts, at = [], 0
        for r in self.regions:
            starts.append(at)
            at += r.blocks
        return tuple(starts)

    def region_index(self, block: int) -> int:
        if not 0 <= block < self.total_blocks:
            raise ValueError(f"block {block} outside schedule of {self.total_blocks}")
        at = 0
        for i, r in enumerate(self.regions):
            at += r.blocks
            if block < at:
                return i
        raise AssertionError("unreachable")

    def truncated(self, blocks: int) -> "LoadSchedule":
        """The schedule's first ``blocks`` blocks (for quick CI runs)."""
        if blocks < 1:
            raise ValueError("truncation needs at least one block")
        kept, remaining = [], min(blocks, self.total_blocks)
        for r in self.regions:
            if remaining <= 0:
                break
            take = min(r.blocks, remaining)
            kept.append(Region(take, r.rate, r.spec))
            remaining -= take
        return LoadSchedule(tuple(kept), self.arrival_model)

    def arrival_count(self, block: int, rng: np.random.Generator) -> int:
        rate = self.regions[self.region_index(block)].rate
        if self.arrival_model == "poisson":
            return int(rng.poisson(rate))
        return int(round(rate))


def arrivals_batch(schedule: LoadSchedule, block: int, rng: np.random.Generator) -> ArrivalBatch:
    region = schedule.regions[schedule.region_index(block)]
    count = schedule.arrival_count(block, rng)
    return sample_batch(region.spec, count, rng)


def arrivals(schedule: LoadSchedule, block: int, rng: np.random.Generator) -> list[ValueFunction]:
    """The block's arriving transactions as value-function objects."""
    return arrivals_batch(schedule, block, rng).value_functions()
