"""Service-diversity policies and their statistical verification.

A clause (share, delay, price) demands that, per steady-state block, the
expected number of included transactions that would have been happy with the
quoted delay/price combination is at least ``share * B``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chain import Blockchain, TxOutcome, choose_tier, utility
from .demand import DemandComponent, DemandSpec, Point, Tabulated, sample_batch
from .solver import SteadyDemand

# Mass can sit exactly on a clause boundary (v(d) == p up to rounding), so the
# strict inequalities get this much slack, scaled by the clause price.
BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class PolicyClause:
    share: float
    delay: float
    price: float

    def __post_init__(self) -> None:
        if not 0.0 < self.share <= 1.0:
            raise ValueError("clause share must lie in (0, 1]")
        if self.delay < 1:
            raise ValueError("clause delay starts at 1")
        if not self.price > 0:
            raise ValueError("clause price must be positive")


@dataclass(frozen=True)
class DiversityPolicy:
    clauses: tuple[PolicyClause, ...]

    def __post_init__(self) -> None:
        if not self.clauses:
            raise ValueError("a policy needs at least one clause")


@dataclass(frozen=True)
class ClauseReport:
    clause: PolicyClause
    estimate: float
    std_error: float
    target: float
    satisfied: bool


def check_implementation(
    block_outcomes: Sequence[Sequence[TxOutcome]],
    policy: DiversityPolicy,
    throughput: float,
) -> list[ClauseReport]:
    """Estimate each clause's per-block count from steady-state outcomes.

    ``block_outcomes`` holds the included transactions of sampled post-warm-up
    blocks. A transaction counts toward a clause when the quoted (delay, price)
    would have given it positive utility and its realized utility is at least
    that quote. A clause is satisfied when the mean count clears
    ``share * throughput`` minus two standard errors.
    """
    if not block_outcomes:
        raise ValueError("need at least one sampled block")
    reports = []
    for clause in policy.clauses:
        slack = BOUNDARY_TOL * max(1.0, clause.price)
        counts = np.empty(len(block_outcomes))
        for i, block in enumerate(block_outcomes):
            hits = 0
            for tx in block:
                quoted = tx.vf.value(clause.delay) - clause.price
                if quoted > -slack and tx.utility >= quoted - slack:
                    hits += 1
            counts[i] = hits
        estimate = float(counts.mean())
        se = float(counts.std(ddof=1) / math.sqrt(len(counts))) if len(counts) > 1 else 0.0
        target = clause.share * throughput
        reports.append(ClauseReport(clause, estimate, se, target, estimate >= target - 2.0 * se))
    return reports


def bad_load_spec(share: float, delay: int, price: float) -> DemandSpec:
    """The two-type load that defeats single-price mechanisms on (share, delay, price).

    Half the arrivals are fast-or-nothing (worth 2*price next block, a tenth of
    that at the quoted delay); half are patient (worth 1.5*price next block and
    still the full quoted price at the delay). A single clearing price excludes
    the patient type entirely, yet a cheap delayed tier can host it.
    """
    PolicyClause(share, delay, price)  # reuse the range checks
    if int(delay) != delay or delay < 2:
        raise ValueError("the load needs an integer delay of at least 2")
    fast = DemandComponent(
        weight=0.5,
        v0=Point(2.0 * price),
        discount=Tabulated(((1, 1.0), (int(delay), 0.1))),
    )
    patient = DemandComponent(
        weight=0.5,
        v0=Point(1.5 * price),
        discount=Tabulated(((1, 1.0), (int(delay), 1.0 / 1.5))),
    )
    return DemandSpec((fast, patient))


def sample_steady_outcomes(
    chain: Blockchain,
    demand: SteadyDemand,
    blocks: int,
    rng: np.random.Generator,
    max_fill_factor: float = 2.0,
    arrival_model: str = "deterministic",
) -> list[list[TxOutcome]]:
    """Included transactions per block at a frozen menu (the steady-state model)."""
    if blocks < 1:
        raise ValueError("need at least one block")
    out: list[list[TxOutcome]] = []
    caps = [int(math.floor(max_fill_factor * t.size + 1e-9)) for t in chain.tiers]
    for _ in range(blocks):
        count = int(rng.poisson(demand.n)) if arrival_model == "poisson" else int(round(demand.n))
        vfs = sample_batch(demand.spec, count, rng).value_functions()
        per_tier: list[list[TxOutcome]] = [[] for _ in range(chain.m)]
        for vf in vfs:
            tier = choose_tier(vf, chain, rng)
            if tier > 0:
                per_tier[tier - 1].append(TxOutcome(vf, tier, utility(vf, tier, chain)))
        included: list[TxOutcome] = []
        for j, txs in enumerate(per_tier):
            if len(txs) > caps[j]:
                keep = rng.choice(len(txs), size=caps[j], replace=False)
                txs = [txs[i] for i in sorted(keep)]
            included.extend(txs)
        out.append(included)
    return out
