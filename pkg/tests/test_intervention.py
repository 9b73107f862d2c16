import numpy as np
import pytest

from normtrace.intervention import (
    LINK_THROTTLE,
    POLICY_PATCH,
    REWARD_SHAPING,
    CompromiseLedger,
    CostAccount,
    EscalationState,
    NoTargetsError,
    apply_link_throttle,
    apply_policy_patch,
    apply_reward_shaping,
    compromise_ceiling,
    cost_bound,
    failsafe_update,
    min_penalty,
    plan_intervention,
    restore_links,
)


def _plan(norm_kind, scores, escalation=None, step=90, k=2):
    return plan_intervention(
        norm_kind=norm_kind,
        norm_id=norm_kind,
        statistic=1.0,
        step=step,
        scores=np.asarray(scores, dtype=float),
        escalation=escalation or EscalationState(),
        k=k,
        penalty_weight=0.2,
        patch_cap=50.0,
        window=25,
    )


class TestPlanning:
    def test_collusion_takes_link_throttle(self):
        plan = _plan("collusion", [0.0, 0.8, 0.7, 0.6])
        assert plan.kind == LINK_THROTTLE
        assert plan.targets == (1, 2)

    def test_default_is_reward_shaping(self):
        plan = _plan("inequity", [0.5, 0.1])
        assert plan.kind == REWARD_SHAPING
        assert plan.targets == (0, 1)

    def test_recalcitrant_target_escalates_to_patch(self):
        esc = EscalationState()
        esc.record_penalty(1, 10)
        esc.record_penalty(1, 80)
        plan = _plan("load", [0.1, 0.9], escalation=esc, step=90)
        assert plan.kind == POLICY_PATCH

    def test_stale_penalties_do_not_escalate(self):
        esc = EscalationState()
        esc.record_penalty(1, 10)
        esc.record_penalty(1, 80)
        plan = _plan("load", [0.1, 0.9], escalation=esc, step=300)
        assert plan.kind == REWARD_SHAPING

    def test_tier_never_decreases(self):
        # Collusion plus recalcitrance resolves to the highest tier.
        esc = EscalationState()
        esc.record_penalty(1, 10)
        esc.record_penalty(1, 80)
        plan = _plan("collusion", [0.1, 0.9], escalation=esc, step=90)
        assert plan.kind == LINK_THROTTLE
        assert plan.tier == 3 >= 2

    def test_zero_scores_raise(self):
        with pytest.raises(NoTargetsError):
            _plan("inequity", [0.0, 0.0, 0.0])

    def test_log_line_format(self):
        plan = _plan("inequity", [0.5, 0.1])
        fields = plan.log_line().split(",")
        assert fields[0] == "90"
        assert fields[1] == REWARD_SHAPING
        assert fields[2] == "0 1"


class TestRewardShaping:
    def test_zero_weight_is_identity(self):
        rewards = np.array([1.0, 2.0, 3.0])
        shaped = apply_reward_shaping(rewards, [0, 1], np.array([1.0, 1.0, 0.0]), 0.0)
        assert np.array_equal(shaped, rewards)

    def test_penalty_scales_with_score(self):
        shaped = apply_reward_shaping(
            np.array([5.0, 5.0]), [0], np.array([2.0, 0.0]), penalty_weight=0.5
        )
        assert shaped[0] == pytest.approx(4.0)

    def test_non_targets_bit_identical(self):
        rewards = np.array([1.1, 2.2, 3.3])
        shaped = apply_reward_shaping(rewards, [1], np.array([0.5, 0.7, 0.9]), 0.3)
        assert shaped[0] == rewards[0]
        assert shaped[2] == rewards[2]
        assert shaped[1] != rewards[1]


class TestPolicyPatch:
    def test_clamps_above_cap(self):
        assert apply_policy_patch(90.0, 60.0) == 60.0

    def test_passes_below_cap(self):
        assert apply_policy_patch(10.0, 60.0) == 10.0

    def test_patched_adversary_never_trips_greed_predicate(self):
        # Cap one grid increment below the 0.6 threshold: a max-requesting
        # adversary clamped there can never satisfy q >= 0.6 * r_max.
        r_max = 100.0
        cap = 0.6 * r_max - 10.0
        for _ in range(500):
            q = apply_policy_patch(100.0, cap)
            assert not (q >= 0.6 * r_max)


class TestLinkThrottle:
    def test_full_scores_mute_link(self):
        weights = {(0, 1): 1.0, (1, 2): 0.7}
        saved = apply_link_throttle(weights, [0, 1], np.array([1.5, 2.0, 0.0]))
        assert weights[(0, 1)] == 0.0  # clamped scores multiply to 1
        assert weights[(1, 2)] == 0.7  # agent 2 not targeted
        assert saved == {(0, 1): 1.0}

    def test_zero_scores_leave_weights(self):
        weights = {(0, 1): 0.9}
        saved = apply_link_throttle(weights, [0, 1], np.array([0.0, 0.0]))
        assert weights[(0, 1)] == 0.9
        assert saved == {(0, 1): 0.9}

    def test_restore_bit_identical(self):
        weights = {(0, 1): 0.123456789, (0, 2): 0.5, (1, 2): 1.0}
        original = dict(weights)
        saved = apply_link_throttle(weights, [0, 1, 2], np.array([0.3, 0.9, 0.4]))
        assert weights != original
        restore_links(weights, saved)
        assert weights == original


class TestFailsafe:
    def _advance(self, state, comp, alert_steps, upto):
        alert_set = set(alert_steps)
        for t in range(1, upto + 1):
            comp.append(False)
            failsafe_update(state, t in alert_set, comp, t)
        return state

    def test_three_regions_within_window_raise_flag(self):
        state = EscalationState()
        comp = CompromiseLedger()
        self._advance(state, comp, [10, 120, 280], 280)
        assert state.yellow_flag

    def test_region_outside_window_does_not_count(self):
        state = EscalationState()
        comp = CompromiseLedger()
        self._advance(state, comp, [10, 120, 400], 400)
        assert not state.yellow_flag

    def test_consecutive_alerts_are_one_region(self):
        state = EscalationState()
        comp = CompromiseLedger()
        self._advance(state, comp, list(range(50, 60)) + [120], 200)
        assert len(state.region_starts) == 2
        assert not state.yellow_flag

    def test_flag_clears_after_quiet_stretch(self):
        state = EscalationState()
        comp = CompromiseLedger()
        t = 0
        # Violations while alarms cluster, then silence.
        for alert_step in (10, 120, 280):
            while t < alert_step:
                t += 1
                comp.append(True)
                failsafe_update(state, t == alert_step, comp, t)
        assert state.yellow_flag
        for _ in range(500):
            t += 1
            comp.append(False)
            failsafe_update(state, False, comp, t)
        assert not state.yellow_flag


class TestCompromiseLedger:
    def test_count_nondecreasing_and_ratio(self):
        comp = CompromiseLedger()
        seen = []
        for v in (True, False, True, True, False):
            comp.append(v)
            seen.append(comp.violations)
        assert seen == sorted(seen)
        assert comp.ratio == pytest.approx(3 / 5)


class TestCeilingCalculators:
    def test_reference_ceiling(self):
        assert compromise_ceiling(0.05, 25, 0.2, 1.0) == pytest.approx(0.3125)

    def test_zero_gain_reduces_to_alpha_over_penalty(self):
        assert compromise_ceiling(0.05, 25, 0.2, 0.0) == pytest.approx(0.05 / 0.2)

    def test_dominance_required(self):
        with pytest.raises(ValueError):
            compromise_ceiling(0.05, 25, 0.04, 1.0)  # 0.04*25 = 1.0, no margin
        with pytest.raises(ValueError):
            compromise_ceiling(0.05, 25, 0.01, 1.0)

    def test_min_penalty_reference(self):
        # Inverse of the ceiling example: 1/25 + 0.05/0.3125 = 0.2.
        assert min_penalty(1.0, 0.05, 25, 0.3125) == pytest.approx(0.2)

    def test_min_penalty_zero_gain(self):
        assert min_penalty(0.0, 0.05, 25, 0.25) == pytest.approx(0.05 / 0.25)

    def test_round_trip_exact(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            alpha = float(rng.uniform(0.01, 0.5))
            window = int(rng.integers(5, 51))
            gain = float(rng.uniform(0.0, 5.0))
            target = float(rng.uniform(0.05, 2.0))
            penalty = min_penalty(gain, alpha, window, target)
            assert compromise_ceiling(alpha, window, penalty, gain) == pytest.approx(
                target, abs=1e-12
            )

    def test_ceiling_positive_target_required(self):
        with pytest.raises(ValueError):
            min_penalty(1.0, 0.05, 25, 0.0)


class TestCostAccounting:
    def test_no_interventions_zero_cost(self):
        acct = CostAccount(penalty_weight=0.2)
        for _ in range(10):
            acct.record_step(0, 0, 0)
        assert acct.mean_cost == 0.0
        assert acct.mean_cost <= acct.bound(0.05)

    def test_shaping_only_bounded_by_weight(self):
        acct = CostAccount(penalty_weight=0.2)
        for _ in range(100):
            acct.record_step(1, 0, 0)
        assert acct.mean_cost == pytest.approx(0.2)
        assert acct.mean_cost <= acct.bound(0.05)

    def test_bound_formula(self):
        assert cost_bound(0.2, 0.05, c_patch=0.5, c_throttle=0.25) == pytest.approx(
            0.2 + 0.5 * 0.05 + 0.25 * 0.05**2
        )

    def test_running_mean_tracks(self):
        acct = CostAccount(penalty_weight=1.0, c_patch=0.5, c_throttle=0.25)
        acct.record_step(0, 1, 0)
        acct.record_step(0, 0, 0)
        assert acct.running_mean == [pytest.approx(0.5), pytest.approx(0.25)]
