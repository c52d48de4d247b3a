"""Steady-state analysis: expected demand, market-clearing prices, delays.

Expected per-tier demand comes from an upper-envelope decomposition of the
per-discount utility lines ``v0 * h(d_j) - p_j`` (exact for finite discount
mixtures) or from a frozen Monte Carlo sample. Clearing prices are found by
repeatedly bisecting up the price of the most over-demanded tier; failure to
make progress is how non-existence is reported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .chain import TIE_TOL, Blockchain
from .demand import (
    DemandSpec,
    DiscountFunction,
    Uniform,
    sample_batch,
    sample_dist,
    tail_probability,
)

# Slack allowed when checking p_{j+1} <= mu_j * p_j on solved prices.
PRICE_SLACK = 1e-9

# Delay search gives up beyond this horizon (the load cannot be separated).
MAX_DELAY = 1 << 40


class AnalyticUnsupported(ValueError):
    """Raised when closed-form demand needs a discount that varies per draw."""


@dataclass(frozen=True)
class SteadyDemand:
    """A stationary load: ``n`` arrivals per block drawn from ``spec``."""

    n: float
    spec: DemandSpec

    def __post_init__(self) -> None:
        if not self.n > 0:
            raise ValueError("arrival rate must be positive")


def analytic_supported(spec: DemandSpec) -> bool:
    return all(c.fixed_discount() is not None for c in spec.components)


# ---------------------------------------------------------------------------
# upper envelope of utility lines


def _envelope_segments(lines: list[tuple[float, float, int]]) -> list[tuple[float, float, tuple[int, ...]]]:
    """Segments (lo, hi, ids) of the upper envelope over x >= 0.

    ``lines`` are (slope, intercept, id). Lines identical in both coefficients
    are grouped and win jointly; a line sharing a slope with a higher
    intercept never wins.
    """
    groups: dict[tuple[float, float], list[int]] = {}
    for s, b, ident in lines:
        groups.setdefault((s, b), []).append(ident)
    entries = sorted(((s, b, tuple(ids)) for (s, b), ids in groups.items()), key=lambda e: (e[0], e[1]))
    # Same slope: only the highest intercept can appear on the envelope.
    deduped: list[tuple[float, float, tuple[int, ...]]] = []
    for e in entries:
        if deduped and deduped[-1][0] == e[0]:
            deduped[-1] = e
        else:
            deduped.append(e)
    stack: list[list] = []  # [slope, intercept, ids, start_x]
    for s, b, ids in deduped:
        start = 0.0
        while stack:
            s0, b0, _, x0 = stack[-1]
            cross = (b0 - b) / (s - s0)
            if cross <= x0:
                stack.pop()
            else:
                start = cross
                break
        stack.append([s, b, ids, start])
    out = []
    for i, (s, b, ids, start) in enumerate(stack):
        hi = stack[i + 1][3] if i + 1 < len(stack) else math.inf
        if hi > start:
            out.append((start, hi, ids))
    return out


def envelope_intervals(
    h: DiscountFunction, delays: Sequence[int], prices: Sequence[float]
) -> list[tuple[float, float] | None]:
    """Partition of the v0 axis by the utility-maximizing tier for a fixed h.

    Entry 0 is the rejection region; entry j the interval where tier j is the
    unique maximizer. Tiers that never win get None. Raises if two tiers share
    an identical utility line (no unique maximizer exists there).
    """
    if len(delays) != len(prices):
        raise ValueError("delays and prices must align")
    lines = [(0.0, 0.0, 0)]
    for j, (d, p) in enumerate(zip(delays, prices), start=1):
        lines.append((float(h.evaluate(d)), -float(p), j))
    out: list[tuple[float, float] | None] = [None] * (len(delays) + 1)
    for lo, hi, ids in _envelope_segments(lines):
        if len(ids) > 1:
            raise ValueError(f"tiers {ids} share one utility line; no unique maximizer")
        out[ids[0]] = (lo, hi)
    return out


# ---------------------------------------------------------------------------
# expected demand


@dataclass
class ExpectedDemandVector:
    per_tier: np.ndarray
    rejected: float
    std_errors: np.ndarray | None = None


class _AnalyticDemand:
    """Exact E[T_j] for fixed-discount mixtures, callable on a price vector."""

    def __init__(self, sizes: np.ndarray, delays: Sequence[int], demand: SteadyDemand):
        self.sizes = sizes
        self.n = demand.n
        self.parts = []
        for comp in demand.spec.components:
            h = comp.fixed_discount()
            if h is None:
                raise AnalyticUnsupported(
                    "closed-form demand needs a fixed discount per component"
                )
            slopes = np.asarray(h.evaluate(np.asarray(delays, dtype=float)), dtype=float)
            self.parts.append((comp.weight, comp.v0, slopes))

    def __call__(self, prices: np.ndarray) -> np.ndarray:
        m = prices.shape[0]
        out = np.zeros(m)
        for weight, v0, slopes in self.parts:
            lines = [(0.0, 0.0, 0)]
            lines += [(float(slopes[j]), -float(prices[j]), j + 1) for j in range(m)]
            for lo, hi, ids in _envelope_segments(lines):
                paid = [i for i in ids if i != 0]
                if not paid:
                    continue
                mass = tail_probability(v0, lo) - tail_probability(v0, hi)
                if mass <= 0.0:
                    continue
                if len(paid) == 1:
                    out[paid[0] - 1] += weight * mass
                else:
                    share = self.sizes[[i - 1 for i in paid]]
                    out[[i - 1 for i in paid]] += weight * mass * share / share.sum()
        return self.n * out


def _allocation_probabilities(utilities: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Per-row tier probabilities under size-proportional tie splitting."""
    best = utilities.max(axis=1)
    thr = np.maximum(best, 0.0) - TIE_TOL
    cand = utilities >= thr[:, None]
    cand &= (best >= -TIE_TOL)[:, None]
    weighted = cand * sizes[None, :]
    tot = weighted.sum(axis=1)
    safe = np.where(tot > 0.0, tot, 1.0)
    return weighted / safe[:, None]


class _AtomDemand:
    """E[T_j] over a frozen sample of arrivals (sample-average approximation)."""

    def __init__(
        self,
        sizes: np.ndarray,
        delays: Sequence[int],
        demand: SteadyDemand,
        samples: int,
        rng: np.random.Generator,
    ):
        batch = sample_batch(demand.spec, samples, rng)
        self.values = batch.v0[:, None] * batch.slope_matrix(delays)
        self.sizes = sizes
        self.scale = demand.n / samples

    def probabilities(self, prices: np.ndarray) -> np.ndarray:
        return _allocation_probabilities(self.values - prices[None, :], self.sizes)

    def __call__(self, prices: np.ndarray) -> np.ndarray:
        return self.scale * self.probabilities(prices).sum(axis=0)

    def with_errors(self, prices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        probs = self.probabilities(prices)
        count = probs.shape[0]
        mean = probs.mean(axis=0)
        sd = probs.std(axis=0, ddof=1)
        return count * self.scale * mean, count * self.scale * sd / math.sqrt(count)


def _canon_method(method: str) -> str:
    # "monte-carlo" is accepted as a synonym for "sample".
    if method == "monte-carlo":
        return "sample"
    if method not in ("auto", "analytic", "sample"):
        raise ValueError(f"unknown method {method!r}")
    return method


def _demand_fn(
    sizes: np.ndarray,
    delays: Sequence[int],
    demand: SteadyDemand,
    method: str,
    samples: int,
    rng: np.random.Generator | None,
) -> Callable[[np.ndarray], np.ndarray]:
    method = _canon_method(method)
    if method == "analytic" or (method == "auto" and analytic_supported(demand.spec)):
        return _AnalyticDemand(sizes, delays, demand)
    return _AtomDemand(sizes, delays, demand, samples, rng or np.random.default_rng(0))


def _check_tiers(sizes: Sequence[float], delays: Sequence[int]) -> tuple[np.ndarray, list[int]]:
    b = np.asarray(sizes, dtype=float)
    if b.ndim != 1 or b.size == 0 or np.any(b <= 0):
        raise ValueError("tier sizes must be positive")
    ds = [int(d) for d in delays]
    if list(delays) != ds or len(ds) != b.size:
        raise ValueError("delays must be integers, one per tier")
    if ds[0] < 1 or any(y <= x for x, y in zip(ds, ds[1:])):
        raise ValueError("delays must be strictly increasing from at least 1")
    return b, ds


def expected_demand(
    chain: Blockchain,
    demand: SteadyDemand,
    method: str = "analytic",
    samples: int = 100_000,
    rng: np.random.Generator | None = None,
) -> ExpectedDemandVector:
    """Per-tier expected demand E[T_j] at the chain's posted menu.

    ``method`` is "analytic" (exact, fixed-discount mixtures only),
    "sample" (Monte Carlo with standard errors), or "auto".
    """
    sizes = chain.sizes()
    delays = [int(d) for d in chain.delays()]
    prices = chain.prices()
    method = _canon_method(method)
    if method == "analytic" or (method == "auto" and analytic_supported(demand.spec)):
        fn = _AnalyticDemand(sizes, delays, demand)
        per = fn(prices)
        return ExpectedDemandVector(per_tier=per, rejected=demand.n - float(per.sum()))
    atoms = _AtomDemand(sizes, delays, demand, samples, rng or np.random.default_rng(0))
    per, errs = atoms.with_errors(prices)
    return ExpectedDemandVector(per_tier=per, rejected=demand.n - float(per.sum()), std_errors=errs)


# ---------------------------------------------------------------------------
# stable prices


@dataclass(frozen=True)
class SolveReport:
    solved: bool
    prices: tuple[float, ...] | None
    iterations: int
    residual: float
    diagnostic: str = ""


def solve_stable_prices(
    sizes: Sequence[float],
    delays: Sequence[int],
    demand: SteadyDemand,
    tol: float | None = None,
    max_iters: int = 2000,
    method: str = "auto",
    samples: int = 100_000,
    rng: np.random.Generator | None = None,
) -> SolveReport:
    """Find prices making every tier exactly full, or report non-existence.

    Starting from all-zero prices, the most over-demanded tier's price is
    bisected up until that tier hits its size; repeat. Under regular demand
    this converges to the unique compatible-and-stable price vector. The
    search reports NoStablePrices when the best residual stops improving
    over a 50-iteration window, when the residual persists with no tier
    over target (a demand discontinuity), or at the iteration cap.
    """
    b, ds = _check_tiers(sizes, delays)
    if demand.n <= b.sum():
        raise ValueError("arrival rate must exceed total tier space")
    if tol is None:
        tol = 1e-6 * float(b.sum())
    fn = _demand_fn(b, ds, demand, method, samples, rng)
    cap = max(demand.spec.max_v0(), 1e-9)
    inner_tol = tol / 10.0
    m = b.size
    p = np.zeros(m)
    demand_now = fn(p)
    best = math.inf
    stall = 0
    for it in range(1, max_iters + 1):
        residual = float(np.abs(demand_now - b).max())
        if residual <= tol:
            return SolveReport(True, tuple(float(x) for x in p), it, residual)
        improvement = max(inner_tol, 0.02 * best) if math.isfinite(best) else 0.0
        if residual < best - improvement:
            best = residual
            stall = 0
        else:
            stall += 1
            if stall >= 50:
                return SolveReport(
                    False, None, it, residual,
                    f"residual stuck near {best:.6g} for 50 iterations; "
                    "no stable prices found (likely oscillation)",
                )
        worst = int(np.argmax(demand_now - b))
        if demand_now[worst] - b[worst] <= inner_tol:
            return SolveReport(
                False, None, it, residual,
                "residual persists with no tier over target; "
                "demand is discontinuous at the current prices",
            )
        lo, hi = float(p[worst]), cap
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            p[worst] = mid
            demand_now = fn(p)
            if abs(demand_now[worst] - b[worst]) <= inner_tol:
                break
            if demand_now[worst] > b[worst]:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-14 * max(1.0, cap):
                p[worst] = hi
                demand_now = fn(p)
                break
    residual = float(np.abs(demand_now - b).max())
    return SolveReport(False, None, max_iters, residual, f"no convergence in {max_iters} iterations")


@dataclass(frozen=True)
class VerifyReport:
    compatible: bool
    stable: bool
    expected: tuple[float, ...]
    rejected: float
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return self.compatible and self.stable


def verify_compatible_stable(
    chain: Blockchain,
    demand: SteadyDemand,
    tol: float | None = None,
    price_tol: float = 1e-9,
    method: str = "auto",
    samples: int = 100_000,
    rng: np.random.Generator | None = None,
) -> VerifyReport:
    """Check E[T_j] <= B_j everywhere and p_j ~ 0 on under-full tiers."""
    if tol is None:
        tol = 1e-6 * chain.throughput
    vec = expected_demand(chain, demand, method="auto" if method == "auto" else method,
                          samples=samples, rng=rng)
    sizes = chain.sizes()
    prices = chain.prices()
    violations = []
    for j in range(chain.m):
        if vec.per_tier[j] > sizes[j] + tol:
            violations.append(
                f"tier {j + 1} over capacity: E[T]={vec.per_tier[j]:.6g} > B={sizes[j]:.6g}"
            )
    compatible = not violations
    stable = True
    for j in range(chain.m):
        if vec.per_tier[j] < sizes[j] - tol and prices[j] > price_tol:
            stable = False
            violations.append(
                f"tier {j + 1} under-full at positive price "
                f"(E[T]={vec.per_tier[j]:.6g}, B={sizes[j]:.6g}, p={prices[j]:.6g})"
            )
    return VerifyReport(compatible, stable, tuple(float(x) for x in vec.per_tier),
                        vec.rejected, tuple(violations))


# ---------------------------------------------------------------------------
# delay construction


class _HAtoms:
    """A weighted finite stand-in for the load's discount-curve distribution."""

    def __init__(self, spec: DemandSpec, rng: np.random.Generator, samples: int = 20_000):
        urgencies: list[np.ndarray] = []
        weights: list[np.ndarray] = []
        self.fixed: list[tuple[float, DiscountFunction]] = []
        for comp in spec.components:
            h = comp.fixed_discount()
            if h is not None:
                self.fixed.append((comp.weight, h))
            else:
                assert isinstance(comp.urgency, Uniform)
                urgencies.append(sample_dist(comp.urgency, rng, samples))
                weights.append(np.full(samples, comp.weight / samples))
        self.ug = np.concatenate(urgencies) if urgencies else np.empty(0)
        self.wg = np.concatenate(weights) if weights else np.empty(0)

    def _geo_at(self, d: int) -> np.ndarray:
        return np.exp(-(d - 1.0) * np.log(self.ug))

    def prob_separated(self, d_prev: int, d: int, ratio: float) -> float:
        """P(h(d) < ratio * h(d_prev)) over the discount distribution."""
        total = 0.0
        if self.ug.size:
            sep = self._geo_at(d) < ratio * self._geo_at(d_prev)
            total += float((self.wg * sep).sum())
        for w, h in self.fixed:
            if float(h.evaluate(d)) < ratio * float(h.evaluate(d_prev)):
                total += w
        return total


def _smallest_separated_delay(
    atoms: _HAtoms, d_prev: int, ratio: float, base: int, level: float
) -> int | None:
    """Smallest d >= base with prob_separated(d_prev, d, ratio) > level."""
    if atoms.prob_separated(d_prev, base, ratio) > level:
        return base
    lo, hi = base, base
    while atoms.prob_separated(d_prev, hi, ratio) <= level:
        if hi >= MAX_DELAY:
            return None
        lo, hi = hi, min(MAX_DELAY, hi * 2)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if atoms.prob_separated(d_prev, mid, ratio) > level:
            hi = mid
        else:
            lo = mid
    return hi


def _prices_separated(prices: Sequence[float], mu: Sequence[float], slack: float = PRICE_SLACK) -> bool:
    return all(prices[j + 1] <= mu[j] * prices[j] + slack for j in range(len(mu)))


def _delay_floor(lam_j: float, d_prev: int) -> int:
    return max(math.ceil(lam_j * d_prev), d_prev + 1)


@dataclass(frozen=True)
class DelayConstruction:
    feasible: bool
    delays: tuple[int, ...] | None
    prices: tuple[float, ...] | None
    diagnostic: str = ""
    report: SolveReport | None = None


def construct_policy_delays(
    sizes: Sequence[float],
    lam: Sequence[float],
    mu: Sequence[float],
    demand: SteadyDemand,
    delta: float = 0.05,
    tol: float | None = None,
    max_iters: int = 2000,
    retry_cap: int = 8,
    method: str = "auto",
    samples: int = 100_000,
    rng: np.random.Generator | None = None,
) -> DelayConstruction:
    """Pick the smallest delay ladder whose clearing prices separate by mu.

    Delays start from d_1 = 1. Each next delay is the spacing floor
    ceil(lam_j * d_j) or, if larger, the first delay at which all but a
    delta/((k-1)n) sliver of the load has discounted below mu_j * h(d_j) / 2.
    Clearing prices are then solved; if a mu-constraint still fails the
    offending gaps widen and the solve repeats. A final descent shrinks any
    delay that can be lowered without breaking the constraints, so every tier
    of the result is locally minimal.
    """
    b, _ = _check_tiers(sizes, [i + 1 for i in range(len(sizes))])
    k = b.size
    if len(lam) != k - 1 or len(mu) != k - 1:
        raise ValueError("lam and mu need one entry per tier gap")
    if any(not f > 1.0 for f in lam) or any(not 0.0 < f < 1.0 for f in mu):
        raise ValueError("need lam > 1 and 0 < mu < 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta is a probability")
    rng = rng or np.random.default_rng(0)

    def solve(ds: list[int]) -> SolveReport:
        return solve_stable_prices(sizes, ds, demand, tol, max_iters, method, samples, rng)

    delays = [1]
    if k > 1:
        atoms = _HAtoms(demand.spec, rng)
        level = 1.0 - delta / ((k - 1) * demand.n)
        for j in range(k - 1):
            base = _delay_floor(lam[j], delays[j])
            nxt = _smallest_separated_delay(atoms, delays[j], mu[j] / 2.0, base, level)
            if nxt is None:
                return DelayConstruction(
                    False, None, None,
                    f"no delay up to {MAX_DELAY} separates tier {j + 2} from tier {j + 1}; "
                    "too much of the load is delay-insensitive",
                )
            delays.append(nxt)

    report = solve(delays)
    for _ in range(retry_cap):
        if not report.solved or _prices_separated(report.prices, mu):
            break
        for j in range(k - 1):
            if report.prices[j + 1] > mu[j] * report.prices[j] + PRICE_SLACK:
                delays[j + 1] += max(1, delays[j + 1] // 2)
        for j in range(k - 1):  # restore spacing after the widening
            delays[j + 1] = max(delays[j + 1], _delay_floor(lam[j], delays[j]))
        report = solve(delays)
    if not report.solved:
        return DelayConstruction(False, None, None, f"price solve failed: {report.diagnostic}", report)
    if not _prices_separated(report.prices, mu):
        return DelayConstruction(
            False, None, None,
            f"price separation unmet after {retry_cap} retries at delays {tuple(delays)}",
            report,
        )

    # Shrink: every delay that can come down without breaking a constraint does.
    changed = True
    while changed:
        changed = False
        for j in range(1, k):
            cand = delays[j] - 1
            if cand < _delay_floor(lam[j - 1], delays[j - 1]):
                continue
            # Lowering delay j only relaxes the spacing floor of the tier above.
            trial = delays[:j] + [cand] + delays[j + 1:]
            rep = solve(trial)
            if rep.solved and _prices_separated(rep.prices, mu):
                delays, report = trial, rep
                changed = True
    return DelayConstruction(True, tuple(delays), report.prices, report=report)


def is_delay_locally_minimal(
    chain: Blockchain,
    demand: SteadyDemand,
    lam: Sequence[float],
    mu: Sequence[float],
    tol: float | None = None,
    max_iters: int = 2000,
    method: str = "auto",
    samples: int = 100_000,
    rng: np.random.Generator | None = None,
) -> tuple[bool, ...]:
    """Per tier: would lowering its delay by one block break a constraint?

    Tier 1 is fixed at its delay and reported minimal. A later tier is minimal
    when the decrement is blocked by the spacing floor, or when re-solved
    prices violate some mu-constraint (or stop existing).
    """
    sizes = [float(t.size) for t in chain.tiers]
    delays = [int(t.delay) for t in chain.tiers]
    m = len(delays)
    if len(lam) != m - 1 or len(mu) != m - 1:
        raise ValueError("lam and mu need one entry per tier gap")
    out = [True]
    for j in range(1, m):
        cand = delays[j] - 1
        if cand < _delay_floor(lam[j - 1], delays[j - 1]):
            out.append(True)
            continue
        trial = delays[:j] + [cand] + delays[j + 1:]
        rep = solve_stable_prices(sizes, trial, demand, tol, max_iters, method, samples, rng)
        out.append(not (rep.solved and _prices_separated(rep.prices, mu)))
    return tuple(out)
