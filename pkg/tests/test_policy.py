"""Diversity clauses, their statistical check, and the adversarial load."""
from __future__ import annotations

import numpy as np
import pytest

from tiersim import (
    Blockchain,
    DemandComponent,
    DemandSpec,
    DiversityPolicy,
    Geometric,
    Point,
    PolicyClause,
    SteadyDemand,
    TierState,
    TxOutcome,
    Uniform,
    ValueFunction,
    bad_load_spec,
    check_implementation,
    sample_batch,
    sample_steady_outcomes,
    solve_stable_prices,
)


def make_tx(v0, h, delay, price, tier=1):
    vf = ValueFunction(v0, h)
    return TxOutcome(vf, tier, vf.value(delay) - price)


class TestValidation:
    def test_clause_ranges(self):
        PolicyClause(0.3, 5, 10.0)
        with pytest.raises(ValueError):
            PolicyClause(0.0, 5, 10.0)
        with pytest.raises(ValueError):
            PolicyClause(1.1, 5, 10.0)
        with pytest.raises(ValueError):
            PolicyClause(0.3, 0, 10.0)
        with pytest.raises(ValueError):
            PolicyClause(0.3, 5, 0.0)

    def test_policy_needs_clauses(self):
        with pytest.raises(ValueError):
            DiversityPolicy(())

    def test_check_rejects_empty_sample(self):
        policy = DiversityPolicy((PolicyClause(0.3, 5, 10.0),))
        with pytest.raises(ValueError):
            check_implementation([], policy, 120.0)


class TestCounting:
    policy = DiversityPolicy((PolicyClause(0.5, 2, 1.0),))

    def test_hand_computed_block(self):
        # Quoted utility at (d=2, p=1) under halving: v0/2 - 1.
        block = [
            make_tx(4.0, Geometric(2.0), 1, 0.5),   # quoted 1, got 3.5: counts
            make_tx(4.0, Geometric(2.0), 2, 1.5),   # quoted 1, got 0.5: misses
            make_tx(1.5, Geometric(2.0), 1, 0.1),   # quoted -0.25: misses
            make_tx(2.0, Geometric(2.0), 1, 0.0),   # quoted 0 exactly: boundary
        ]
        reports = check_implementation([block], self.policy, 4.0)
        assert len(reports) == 1
        rep = reports[0]
        assert rep.estimate == 2.0
        assert rep.std_error == 0.0
        assert rep.target == 2.0
        assert rep.satisfied

    def test_boundary_transaction_counts(self):
        # v(d) == p exactly; the slack keeps it in despite float noise.
        block = [make_tx(2.0, Geometric(2.0), 1, 1.0)]
        policy = DiversityPolicy((PolicyClause(0.25, 2, 1.0),))
        rep = check_implementation([block], policy, 4.0)[0]
        assert rep.estimate == 1.0

    def test_multi_block_standard_error(self):
        blocks = [
            [make_tx(4.0, Geometric(2.0), 1, 0.5)] * 2,
            [make_tx(4.0, Geometric(2.0), 1, 0.5)] * 4,
        ]
        rep = check_implementation(blocks, self.policy, 4.0)[0]
        assert rep.estimate == 3.0
        assert rep.std_error == pytest.approx(1.0)
        # 3 >= 2 - 2*1
        assert rep.satisfied

    def test_count_monotone_in_clause_price(self):
        rng = np.random.default_rng(6)
        blocks = [
            [make_tx(float(v), Geometric(2.0), 1, 0.5) for v in rng.uniform(0.5, 4.0, 50)]
            for _ in range(10)
        ]
        estimates = []
        for price in (0.25, 0.5, 1.0, 1.5):
            policy = DiversityPolicy((PolicyClause(0.5, 2, price),))
            estimates.append(check_implementation(blocks, policy, 100.0)[0].estimate)
        assert all(b <= a for a, b in zip(estimates, estimates[1:]))


class TestBadLoad:
    def test_pinned_values(self):
        spec = bad_load_spec(0.3, 5, 10.0)
        fast, patient = spec.components
        assert fast.v0.value == 20.0
        assert patient.v0.value == 15.0
        assert fast.discount.evaluate(5) == pytest.approx(0.1)
        # The patient type is still worth the full quoted price at the delay.
        assert patient.v0.value * patient.discount.evaluate(5) == pytest.approx(10.0)

    def test_type_frequencies(self):
        spec = bad_load_spec(0.3, 5, 10.0)
        batch = sample_batch(spec, 100_000, np.random.default_rng(2))
        assert abs(float((batch.component == 0).mean()) - 0.5) < 0.01

    def test_rejects_short_delay(self):
        with pytest.raises(ValueError):
            bad_load_spec(0.3, 1, 10.0)
        with pytest.raises(ValueError):
            bad_load_spec(0.3, 2.5, 10.0)


class TestSteadyOutcomes:
    def test_trivial_policy_holds_at_clearing_price(self):
        # Full-share clause quoted at the clearing menu itself: every included
        # transaction satisfies it, and inclusion hits the block size.
        uniform = SteadyDemand(240.0, DemandSpec((
            DemandComponent(weight=1.0, v0=Uniform(0.0, 1.0), urgency=Point(1.2)),
        )))
        rep = solve_stable_prices([120.0], [1], uniform)
        assert rep.solved and rep.prices[0] == pytest.approx(0.5, abs=1e-6)
        chain = Blockchain((TierState(120.0, 1, rep.prices[0]),))
        outcomes = sample_steady_outcomes(chain, uniform, 200, np.random.default_rng(42))
        policy = DiversityPolicy((PolicyClause(1.0, 1, rep.prices[0]),))
        report = check_implementation(outcomes, policy, 120.0)[0]
        assert report.satisfied
        assert report.estimate == pytest.approx(120.0, abs=3.0)

    def test_poisson_arrivals_vary(self):
        chain = Blockchain((TierState(4.0, 1, 0.5),))
        spec = bad_load_spec(0.3, 5, 10.0)
        outcomes = sample_steady_outcomes(
            chain, SteadyDemand(8.0, spec), 50, np.random.default_rng(0),
            arrival_model="poisson",
        )
        sizes = {len(b) for b in outcomes}
        assert len(sizes) > 1

    def test_fill_cap_enforced(self):
        chain = Blockchain((TierState(4.0, 1, 0.5),))
        spec = bad_load_spec(0.3, 5, 10.0)
        outcomes = sample_steady_outcomes(
            chain, SteadyDemand(40.0, spec), 20, np.random.default_rng(1),
            max_fill_factor=1.5,
        )
        assert max(len(b) for b in outcomes) <= 6
