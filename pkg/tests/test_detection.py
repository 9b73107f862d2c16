import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from normtrace.detection import (
    BudgetAllocator,
    CusumDetector,
    NormSpec,
    collusion_pulse,
    gini,
    load_statistic,
    lorden_delay_bound,
)


def gini_pairwise_oracle(values):
    x = np.asarray(values, dtype=float)
    lo = x.min()
    if lo < 0:
        x = x - lo
    mean = x.mean()
    if mean <= 0:
        return 0.0
    n = len(x)
    total = sum(abs(a - b) for a in x for b in x)
    return total / (2 * n * n * mean)


class TestGini:
    def test_perfect_equality(self):
        assert gini([1, 1, 1, 1]) == 0.0

    def test_two_point(self):
        assert gini([0, 1]) == pytest.approx(0.5, abs=1e-12)

    def test_reference_quadruple(self):
        # Pairwise-sum oracle: 20 / (2 * 16 * 2.5) = 0.25.
        assert gini([1, 2, 3, 4]) == pytest.approx(0.25, abs=1e-12)

    def test_all_zero(self):
        assert gini([0, 0, 0]) == 0.0

    def test_negative_values_shifted(self):
        assert gini([-1, 1]) == pytest.approx(gini([0, 2]), abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            gini([])

    @given(st.lists(st.floats(0, 1000, allow_nan=False), min_size=1, max_size=30))
    @settings(max_examples=150, deadline=None)
    def test_matches_pairwise_oracle(self, values):
        assert gini(values) == pytest.approx(gini_pairwise_oracle(values), abs=1e-9)

    @given(st.lists(st.floats(0.0, 100.0, allow_nan=False), min_size=2, max_size=15))
    @settings(max_examples=100, deadline=None)
    def test_bounds_and_permutation_invariance(self, values):
        g = gini(values)
        assert 0.0 <= g <= 1.0
        rng = np.random.default_rng(0)
        shuffled = rng.permutation(values)
        assert gini(shuffled) == pytest.approx(g, abs=1e-12)

    @given(
        st.lists(st.floats(0.01, 100.0, allow_nan=False), min_size=2, max_size=15),
        st.floats(0.01, 50.0, allow_nan=False),
    )
    @settings(max_examples=100, deadline=None)
    def test_scale_invariance(self, values, c):
        assert gini(np.asarray(values) * c) == pytest.approx(gini(values), abs=1e-9)


class TestCollusionPulse:
    def test_constant_actions_zero(self):
        windows = np.full((3, 64), 5.0)
        assert collusion_pulse(windows, window=64, value_range=(0, 10)) == 0.0

    def test_identical_streams_reach_entropy(self):
        rng = np.random.default_rng(1)
        stream = rng.integers(0, 8, 128).astype(float)
        windows = np.stack([stream, stream])
        mi = collusion_pulse(windows, window=128, bins=8, value_range=(0, 8))
        # Plug-in entropy of the shared binned stream is the maximum.
        binned = np.clip((stream / 8.0 * 8).astype(int), 0, 7)
        counts = np.bincount(binned, minlength=8) / 128
        entropy = -sum(p * math.log(p) for p in counts if p > 0)
        assert mi == pytest.approx(entropy, abs=1e-9)

    def test_independent_streams_small(self):
        # Null MI is approximately chi2 with (B-1)^2 degrees of freedom over
        # 2W, so the 95th percentile sits near 0.067 nats at W=512 and near
        # 0.137 at W=256 (plug-in bias scales as 1/W).
        for window, bound in ((512, 0.1), (256, 0.14)):
            hits = 0
            trials = 200
            for s in range(trials):
                rng = np.random.default_rng(10_000 + s)
                windows = rng.uniform(0, 100, size=(2, window))
                mi = collusion_pulse(windows, window=window, bins=8, value_range=(0, 100))
                if mi <= bound:
                    hits += 1
            assert hits / trials >= 0.95, (window, bound, hits)

    def test_short_window_warms_up(self):
        windows = np.random.default_rng(2).uniform(0, 1, (2, 10))
        assert collusion_pulse(windows, window=64) == 0.0

    def test_needs_two_agents(self):
        with pytest.raises(ValueError):
            collusion_pulse(np.zeros((1, 64)), window=64)


class TestLoadStatistic:
    def test_balanced(self):
        assert load_statistic(100, 100) == 0.0

    def test_overload(self):
        assert load_statistic(130, 100) == 30.0

    def test_headroom_negative(self):
        assert load_statistic(70, 100) == -30.0


class TestCusum:
    def _spec(self, mu0=0.0, delta=0.1, alpha=0.05):
        return NormSpec(id="x", kind="load", mu0=mu0, delta=delta, alpha=alpha)

    def test_quiet_stream_never_alarms_and_threshold_decays(self):
        det = CusumDetector(self._spec(), h0=2.0)
        for _ in range(5000):
            alert = det.step(-0.5)
            assert not alert
        assert det.s == 0.0
        assert det.alarm_count == 0
        assert det.h < 2.0
        assert det.h >= det.h_min

    def test_hand_simulated_first_alarm(self):
        # mu0=0, delta=0.1, z=1 every step, frozen threshold 5:
        # statistic grows by 0.9 per step and crosses at step 6 (5.4).
        det = CusumDetector(self._spec(), h0=5.0, adaptive=False)
        for t in range(1, 11):
            alert = det.step(1.0)
            if t < 6:
                assert not alert
                assert det.s == pytest.approx(0.9 * t, abs=1e-12)
            elif t == 6:
                assert alert
                assert det.s == 0.0  # reset immediately after the alarm
                break

    def test_statistic_nonnegative_and_resets(self):
        rng = np.random.default_rng(3)
        det = CusumDetector(self._spec(), h0=1.0)
        for _ in range(20_000):
            alerted = det.step(rng.normal())
            assert det.s >= 0.0
            if alerted:
                assert det.s == 0.0

    def test_threshold_floor(self):
        det = CusumDetector(self._spec(alpha=0.5), h0=0.01)
        for _ in range(1000):
            det.step(-10.0)
        assert det.h == pytest.approx(det.h_min)

    def test_long_run_rate_single_seed(self):
        rng = np.random.default_rng(4)
        det = CusumDetector(self._spec(), h0=2.1)
        for z in rng.standard_normal(50_000):
            det.step(z)
        assert abs(det.alarm_rate - 0.05) <= 0.01

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            NormSpec(id="x", kind="load", mu0=0, delta=0.0, alpha=0.05)
        with pytest.raises(ValueError):
            NormSpec(id="x", kind="load", mu0=0, delta=0.1, alpha=1.5)
        with pytest.raises(ValueError):
            CusumDetector(self._spec(), h0=0.0)


class TestLordenBound:
    def test_reference_value(self):
        assert lorden_delay_bound(5, 1.1, 0.1) == pytest.approx(5.0)

    def test_undetectable_rejected(self):
        with pytest.raises(ValueError):
            lorden_delay_bound(5, 0.1, 0.1)
        with pytest.raises(ValueError):
            lorden_delay_bound(5, 0.05, 0.1)

    def test_infinity_sentinel(self):
        assert lorden_delay_bound(1e15, 1.1, 0.1) == math.inf


class TestBudgetAllocator:
    def test_single_fired_wins_no_bumps(self):
        alloc = BudgetAllocator(["a", "b", "c"])
        out = alloc.observe(["b"])
        assert out.winner == "b"
        assert out.admitted
        assert out.bumps == {}

    def test_no_firing_leaves_weights_unchanged(self):
        alloc = BudgetAllocator(["a", "b", "c"])
        before = alloc.weights.copy()
        out = alloc.observe([])
        assert out.winner is None
        assert np.allclose(alloc.weights, before)

    def test_weights_stay_positive_simplex(self):
        rng = np.random.default_rng(5)
        alloc = BudgetAllocator(["a", "b", "c"])
        for _ in range(2000):
            fired = [n for n in ("a", "b", "c") if rng.random() < 0.3]
            alloc.observe(fired)
            assert alloc.weights.min() > 0.0
            assert alloc.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_chronic_norm_weight_strictly_decreases(self):
        alloc = BudgetAllocator(["a", "b", "c"], planned_steps=1000)
        prev = alloc.weights[0]
        for _ in range(1000):
            alloc.observe(["a"])
            cur = alloc.weights[0]
            assert cur < prev
            prev = cur

    def test_admissions_respect_global_budget(self):
        steps = 2000
        alloc = BudgetAllocator(["a", "b", "c"], global_budget=0.05, planned_steps=steps)
        for _ in range(steps):
            alloc.observe(["a"])
        limit = 0.05 * steps + 2 * math.sqrt(steps * math.log(3))
        assert alloc.admitted_total <= limit

    def test_winner_has_lowest_running_rate(self):
        alloc = BudgetAllocator(["a", "b"])
        for _ in range(10):
            alloc.observe(["b"])  # b accumulates alarm frequency
        out = alloc.observe(["a", "b"])
        assert out.winner == "a"
        assert out.bumps["b"] == 0.0  # winner rate below loser rate clamps to 0

    def test_tie_broken_by_norm_order(self):
        alloc = BudgetAllocator(["a", "b"])
        out = alloc.observe(["a", "b"])
        assert out.winner == "a"

    def test_bumps_nonnegative(self):
        rng = np.random.default_rng(6)
        alloc = BudgetAllocator(["a", "b", "c"])
        for _ in range(500):
            fired = [n for n in ("a", "b", "c") if rng.random() < 0.5]
            out = alloc.observe(fired)
            for v in out.bumps.values():
                assert v >= 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            BudgetAllocator([])
        with pytest.raises(ValueError):
            BudgetAllocator(["a"], global_budget=0.0)
