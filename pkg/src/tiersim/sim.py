"""Block-by-block simulation of a fee mechanism under a load schedule.

Arrivals are drawn fresh each block (no mempool carry-over: a transaction not
included in its block is gone). Inclusion is capped per tier at
``max_fill_factor * size``; over-subscribed tiers keep a uniform random
subset. Traces are byte-reproducible from (config, seed).
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chain import TIE_TOL, TierState, TxOutcome
from .demand import ArrivalBatch, LoadSchedule, ValueFunction, sample_batch
from .mechanisms import MechanismState, TieredParams, initial_state, update_tier_parameters


@dataclass(frozen=True)
class SimConfig:
    params: TieredParams
    throughput: float
    schedule: LoadSchedule
    seed: int
    initial_price: float = 1.0

    def __post_init__(self) -> None:
        if self.throughput <= 0:
            raise ValueError("throughput must be positive")
        if self.initial_price < 0:
            raise ValueError("initial price must be non-negative")


@dataclass(frozen=True)
class BlockRecord:
    block: int
    region: int
    tiers: tuple[TierState, ...]
    included: tuple[int, ...]
    revenue: float
    welfare: float
    rejected: int
    component_included: tuple[int, ...]

    def fullness(self) -> tuple[float, ...]:
        return tuple(n / t.size for n, t in zip(self.included, self.tiers))


@dataclass
class Trace:
    fingerprint: str
    seed: int
    max_tiers: int
    n_components: int
    region_starts: tuple[int, ...]
    records: list[BlockRecord]
    tx_records: list[tuple[int, list[TxOutcome]]] | None = None


class _ListBatch:
    """Adapter letting ``step`` take plain value-function sequences."""

    def __init__(self, vfs: Sequence[ValueFunction]):
        self.vfs = list(vfs)
        self.v0 = np.array([vf.v0 for vf in vfs], dtype=float)
        self.component = np.array([vf.component for vf in vfs], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.vfs)

    def slope_matrix(self, delays: Sequence[int]) -> np.ndarray:
        d = np.asarray(delays, dtype=float)
        return np.array([np.asarray(vf.h.evaluate(d), dtype=float) for vf in self.vfs]).reshape(
            len(self.vfs), d.size
        )

    def value_functions(self) -> list[ValueFunction]:
        return self.vfs


def _choose_tiers(utilities: np.ndarray, sizes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-row tier choice (0-based; -1 rejects), ties split by tier size."""
    best = utilities.max(axis=1)
    thr = np.maximum(best, 0.0) - TIE_TOL
    cand = utilities >= thr[:, None]
    cand &= (best >= -TIE_TOL)[:, None]
    choice = np.where(best >= -TIE_TOL, utilities.argmax(axis=1), -1)
    multi = cand.sum(axis=1) > 1
    for i in np.flatnonzero(multi):
        js = np.flatnonzero(cand[i])
        w = sizes[js]
        choice[i] = rng.choice(js, p=w / w.sum())
    return choice


def step(
    state: MechanismState,
    arrivals: ArrivalBatch | Sequence[ValueFunction],
    rng: np.random.Generator,
    block: int = 0,
    region: int = 0,
    n_components: int | None = None,
    collect: bool = False,
) -> tuple[MechanismState, BlockRecord, list[TxOutcome]]:
    """Allocate one block's arrivals, then advance the mechanism."""
    batch = arrivals if isinstance(arrivals, ArrivalBatch) else _ListBatch(arrivals)
    chain = state.chain
    m = chain.m
    sizes = chain.sizes()
    prices = chain.prices()
    count = len(batch)
    if n_components is None:
        n_components = int(batch.component.max()) + 1 if count else 1

    included: list[int] = []
    comp_counts = np.zeros(n_components, dtype=np.int64)
    revenue = 0.0
    welfare = 0.0
    outcomes: list[TxOutcome] = []
    if count:
        slopes = batch.slope_matrix([int(d) for d in chain.delays()])
        values = batch.v0[:, None] * slopes
        choice = _choose_tiers(values - prices[None, :], sizes, rng)
        vfs = batch.value_functions() if collect else None
        for j in range(m):
            rows = np.flatnonzero(choice == j)
            cap = int(math.floor(state.params.max_fill_factor * sizes[j] + 1e-9))
            if rows.size > cap:
                rows = np.sort(rng.choice(rows, size=cap, replace=False))
            included.append(int(rows.size))
            revenue += rows.size * float(prices[j])
            gains = values[rows, j] - prices[j]
            welfare += float(gains.sum())
            comp_counts += np.bincount(batch.component[rows], minlength=n_components)
            if collect:
                outcomes.extend(TxOutcome(vfs[i], j + 1, float(values[i, j] - prices[j])) for i in rows)
    else:
        included = [0] * m
    rejected = count - sum(included)

    record = BlockRecord(
        block=block,
        region=region,
        tiers=chain.tiers,
        included=tuple(included),
        revenue=revenue,
        welfare=welfare,
        rejected=rejected,
        component_included=tuple(int(c) for c in comp_counts),
    )
    new_state = update_tier_parameters(state, included, rng)
    return new_state, record, outcomes


def _fingerprint(config: SimConfig) -> str:
    return hashlib.sha256(repr(config).encode()).hexdigest()[:16]


def run(
    config: SimConfig,
    blocks: int | None = None,
    collect_range: tuple[int, int] | None = None,
) -> Trace:
    """Simulate the full schedule (or its first ``blocks``) deterministically.

    ``collect_range`` additionally records per-transaction outcomes for blocks
    in [start, stop), for policy checks. Collection never touches the RNG, so
    traces are identical with or without it.
    """
    schedule = config.schedule if blocks is None else config.schedule.truncated(blocks)
    rng = np.random.default_rng(config.seed)
    state = initial_state(config.params, config.throughput, config.initial_price)
    n_components = max(len(r.spec.components) for r in schedule.regions)
    records: list[BlockRecord] = []
    tx_records: list[tuple[int, list[TxOutcome]]] | None = [] if collect_range else None

    block = 0
    for region_idx, region in enumerate(schedule.regions):
        for _ in range(region.blocks):
            n = schedule.arrival_count(block, rng)
            batch = sample_batch(region.spec, n, rng)
            collect = bool(collect_range and collect_range[0] <= block < collect_range[1])
            state, record, outcomes = step(
                state, batch, rng, block=block, region=region_idx,
                n_components=n_components, collect=collect,
            )
            records.append(record)
            if collect:
                tx_records.append((block, outcomes))
            block += 1

    return Trace(
        fingerprint=_fingerprint(config),
        seed=config.seed,
        max_tiers=config.params.k,
        n_components=n_components,
        region_starts=schedule.region_starts,
        records=records,
        tx_records=tx_records,
    )


# ---------------------------------------------------------------------------
# trace CSV


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".9g")


def trace_header(max_tiers: int, n_components: int) -> list[str]:
    cols = ["block", "region", "m"]
    for j in range(1, max_tiers + 1):
        cols += [f"tier{j}_size", f"tier{j}_delay", f"tier{j}_price", f"tier{j}_included"]
    cols += ["revenue", "welfare", "rejected"]
    cols += [f"comp{i}_included" for i in range(1, n_components + 1)]
    return cols


def write_trace_csv(trace: Trace, path) -> None:
    """Stable schema, floats at 9 significant digits, inactive tiers blank."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace_header(trace.max_tiers, trace.n_components))
        for rec in trace.records:
            row = [str(rec.block), str(rec.region), str(len(rec.tiers))]
            for j in range(trace.max_tiers):
                if j < len(rec.tiers):
                    t = rec.tiers[j]
                    row += [_fmt(t.size), str(t.delay), _fmt(t.price), str(rec.included[j])]
                else:
                    row += ["", "", "", ""]
            row += [_fmt(rec.revenue), _fmt(rec.welfare), str(rec.rejected)]
            comps = list(rec.component_included) + [0] * (trace.n_components - len(rec.component_included))
            row += [str(c) for c in comps]
            w.writerow(row)


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Columns as float arrays (NaN where blank)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    out = {}
    for i, name in enumerate(header):
        out[name] = np.array([float(r[i]) if r[i] != "" else math.nan for r in rows])
    return out


# ---------------------------------------------------------------------------
# summary metrics


def metrics(trace: Trace, window: tuple[int, int] | None = None) -> dict[str, float]:
    """Means/medians over a half-open block window (default: whole trace)."""
    lo, hi = window if window is not None else (0, len(trace.records))
    recs = [r for r in trace.records if lo <= r.block < hi]
    if not recs:
        raise ValueError(f"no blocks in window [{lo}, {hi})")
    out: dict[str, float] = {"blocks": float(len(recs))}
    revenue = np.array([r.revenue for r in recs])
    welfare = np.array([r.welfare for r in recs])
    out["mean_revenue"] = float(revenue.mean())
    out["median_revenue"] = float(np.median(revenue))
    out["mean_welfare"] = float(welfare.mean())
    out["mean_rejected"] = float(np.mean([r.rejected for r in recs]))
    out["mean_included"] = float(np.mean([sum(r.included) for r in recs]))
    tier_counts = np.array([len(r.tiers) for r in recs])
    out["mean_tier_count"] = float(tier_counts.mean())
    out["frac_blocks_multi_tier"] = float((tier_counts >= 2).mean())
    for j in range(trace.max_tiers):
        prices = [r.tiers[j].price for r in recs if len(r.tiers) > j]
        if not prices:
            continue
        delays = [r.tiers[j].delay for r in recs if len(r.tiers) > j]
        incl = [r.included[j] for r in recs if len(r.tiers) > j]
        out[f"mean_price_tier_{j + 1}"] = float(np.mean(prices))
        out[f"median_price_tier_{j + 1}"] = float(np.median(prices))
        out[f"mean_delay_tier_{j + 1}"] = float(np.mean(delays))
        out[f"mean_included_tier_{j + 1}"] = float(np.mean(incl))
        out[f"active_frac_tier_{j + 1}"] = float(len(prices) / len(recs))
    last_prices = [r.tiers[-1].price for r in recs]
    out["mean_price_last_active"] = float(np.mean(last_prices))
    totals = np.array([r.component_included for r in recs], dtype=float)
    if totals.size:
        for i in range(trace.n_components):
            out[f"mean_included_comp_{i + 1}"] = float(totals[:, i].mean())
    return out


def summary_text(trace: Trace) -> str:
    """Human-readable per-region digest for summary.txt."""
    lines = [f"fingerprint: {trace.fingerprint}", f"seed: {trace.seed}", f"blocks: {len(trace.records)}"]
    bounds = list(trace.region_starts) + [len(trace.records)]
    for i in range(len(trace.region_starts)):
        lo, hi = bounds[i], bounds[i + 1]
        if lo >= hi:
            continue
        lines.append(f"[region {i}] blocks {lo}..{hi - 1}")
        for key, val in sorted(metrics(trace, (lo, hi)).items()):
            lines.append(f"  {key} = {_fmt(val)}")
    return "\n".join(lines) + "\n"
