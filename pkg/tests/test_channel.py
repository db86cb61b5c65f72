"""Channel model tests: delivery laws, burst statistics, determinism."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from icsim.channel import (
    CorrelatedBurst,
    DistanceIID,
    LinkContext,
    Perfect,
    Scripted,
    burst_length_pmf,
    pdr,
    sample_delivery,
)


def ctx(receiver=2, slot=1, d=100.0, prior=False):
    return LinkContext(sender=1, receiver=receiver, distance=d, slot=slot, prior_lost=prior)


class TestPdr:
    def test_zero_distance(self):
        assert pdr(0.0, 0.0013) == 1.0

    def test_open_field_rate_at_400m(self):
        assert pdr(400.0, 0.00063) == pytest.approx(math.exp(-0.252), abs=1e-12)

    def test_harsh_rate_at_400m(self):
        assert pdr(400.0, 0.0013) == pytest.approx(0.5945, abs=1e-4)

    @given(
        d1=st.floats(0, 1000),
        d2=st.floats(0, 1000),
        lam=st.floats(0, 0.01),
    )
    def test_monotone_nonincreasing_in_distance(self, d1, d2, lam):
        lo, hi = sorted((d1, d2))
        assert pdr(hi, lam) <= pdr(lo, lam)

    @given(
        d=st.floats(0, 1000),
        l1=st.floats(0, 0.01),
        l2=st.floats(0, 0.01),
    )
    def test_monotone_nonincreasing_in_rate(self, d, l1, l2):
        lo, hi = sorted((l1, l2))
        assert pdr(d, hi) <= pdr(d, lo)

    def test_negative_inputs_rejected(self):
        with pytest.raises(ValueError):
            pdr(-1.0, 0.001)
        with pytest.raises(ValueError):
            pdr(1.0, -0.001)


class TestSampleDelivery:
    def test_perfect_always_delivers(self):
        rng = np.random.default_rng(0)
        assert all(
            sample_delivery(Perfect(), ctx(slot=s, d=d), rng)
            for s in range(10)
            for d in (0.0, 250.0, 5000.0)
        )

    def test_scripted_lookup(self):
        model = Scripted(losses=frozenset({(2, 1), (2, 5)}))
        rng = np.random.default_rng(0)
        assert not sample_delivery(model, ctx(receiver=2, slot=1), rng)
        assert not sample_delivery(model, ctx(receiver=2, slot=5), rng)
        # lookup miss means delivered
        assert sample_delivery(model, ctx(receiver=2, slot=2), rng)
        assert sample_delivery(model, ctx(receiver=1, slot=1), rng)

    def test_scripted_all_lost(self):
        model = Scripted(all_lost=frozenset({3}))
        rng = np.random.default_rng(0)
        assert not sample_delivery(model, ctx(receiver=3, slot=99), rng)
        assert sample_delivery(model, ctx(receiver=2, slot=99), rng)

    def test_same_seed_same_stream(self):
        model = DistanceIID(lam=0.003)
        a = [
            sample_delivery(model, ctx(slot=s, d=300), np.random.default_rng([7, s]))
            for s in range(50)
        ]
        b = [
            sample_delivery(model, ctx(slot=s, d=300), np.random.default_rng([7, s]))
            for s in range(50)
        ]
        assert a == b

    def test_correlated_without_memory_matches_iid_rate(self):
        # xi = 0: the empirical loss rate equals 1 - pdr within 3 sigma
        model = CorrelatedBurst(lam=0.0013, xi=0.0)
        rng = np.random.default_rng(42)
        n = 200_000
        d = 400.0
        losses = sum(
            not sample_delivery(model, ctx(slot=s, d=d, prior=False), rng)
            for s in range(n)
        )
        p_loss = 1.0 - pdr(d, 0.0013)
        sigma = math.sqrt(n * p_loss * (1 - p_loss))
        assert abs(losses - n * p_loss) < 3 * sigma

    def test_correlated_burst_state_raises_loss_rate(self):
        model = CorrelatedBurst(lam=0.0013, xi=0.9)
        rng = np.random.default_rng(1)
        n = 100_000
        lost_after_loss = sum(
            not sample_delivery(model, ctx(slot=s, d=100, prior=True), rng)
            for s in range(n)
        )
        assert lost_after_loss / n == pytest.approx(0.9, abs=0.01)


class TestBurstLengthPmf:
    def test_iid_zero_length_is_delivery_probability(self):
        assert burst_length_pmf(0.7, None, 0) == pytest.approx(0.7)

    def test_correlated_single_failure(self):
        p = 0.6
        assert burst_length_pmf(p, 0.9, 1) == pytest.approx((1 - p) * p)

    def test_correlated_zero_length(self):
        assert burst_length_pmf(0.6, 0.9, 0) == pytest.approx(0.6)

    def test_iid_normalizes(self):
        p = 0.37
        total = sum(burst_length_pmf(p, None, m) for m in range(0, 2000))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_iid_partial_sum_closed_form(self):
        p, n = 0.52, 19
        partial = sum(burst_length_pmf(p, None, m) for m in range(n + 1))
        assert partial == pytest.approx(1 - (1 - p) ** (n + 1), abs=1e-12)

    def test_correlated_is_improper(self):
        # the correlated law deliberately does not normalize to one;
        # its total mass is p + (1-p)*p/(1-xi) by the geometric series
        p, xi = 0.6, 0.9
        total = sum(burst_length_pmf(p, xi, m) for m in range(0, 5000))
        assert total == pytest.approx(p + (1 - p) * p / (1 - xi), abs=1e-9)
        assert total != pytest.approx(1.0, abs=0.01)

    @pytest.mark.slow
    def test_empirical_burst_histogram_iid(self):
        # run one receiver for >= 1e6 slots and compare burst-length counts
        # against the geometric law, bin by bin, within 3 sigma
        lam, d = 0.0013, 300.0
        p = pdr(d, lam)
        model = DistanceIID(lam=lam)
        rng = np.random.default_rng(2024)
        n_slots = 1_200_000
        bursts = []
        run = 0
        for s in range(n_slots):
            if sample_delivery(model, ctx(slot=s, d=d), rng):
                bursts.append(run)
                run = 0
            else:
                run += 1
        n = len(bursts)
        counts = np.bincount(bursts, minlength=8)
        for m in range(6):
            expect = n * burst_length_pmf(p, None, m) / p * p  # P(f=m) given a delivery ends each burst
            pm = (1 - p) ** m * p
            sigma = math.sqrt(n * pm * (1 - pm))
            assert abs(counts[m] - n * pm) < 3 * sigma, f"bin {m}"


class TestMessageAtomicity:
    def test_delivered_message_is_the_sent_object(self):
        # delivery is all-or-nothing by construction: the delivered set holds
        # the identical frozen message objects that were sent
        from icsim.protocol import EnterMessage, simulate_enter_round

        res = simulate_enter_round(2, F=4)
        received = [m for e in res.log for m in e["received"]]
        assert any(m.startswith("ENTER:1:") for m in received)
        msg = EnterMessage(uid=1, clane="H1R", nlane="H3L", tau_mti=11.0)
        assert hash(msg) == hash(EnterMessage(uid=1, clane="H1R", nlane="H3L", tau_mti=11.0))
