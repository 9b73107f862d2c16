"""Graded corrective actions, escalation, failsafe, and cost calculus.

Admitted alarms translate into one of three tiers aimed at the highest-
responsibility agents: additive reward penalties (default), an action cap
for repeat offenders, or communication-link attenuation for suspected
collusion.  A system-wide yellow flag freezes learning after clustered
alerts.  The closed-form calculators relate the per-step penalty weight,
the alarm budget, and an adversary's per-step gain to the ceiling on the
long-run fraction of violating steps.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

REWARD_SHAPING = "reward_shaping"
POLICY_PATCH = "policy_patch"
LINK_THROTTLE = "link_throttle"

TIER = {REWARD_SHAPING: 1, POLICY_PATCH: 2, LINK_THROTTLE: 3}

DEFAULT_WINDOW = 25
RECALCITRANCE_WINDOW = 100
RECALCITRANCE_COUNT = 2
FAILSAFE_REGIONS = 3
FAILSAFE_WINDOW = 300
DEFAULT_MOVING_AVERAGE_WINDOW = 1000
YELLOW_FLAG_CLIP = 0.1
DEFAULT_PATCH_COST = 0.5
DEFAULT_THROTTLE_COST = 0.25


class NoTargetsError(ValueError):
    """Raised when an alarm carries no responsibility mass to act on."""


@dataclass(frozen=True)
class Intervention:
    kind: str
    targets: tuple[int, ...]
    penalty_weight: float
    patch_cap: float
    window: int
    issued_at: int
    norm_id: str
    statistic: float
    scores: tuple[float, ...]

    @property
    def tier(self) -> int:
        return TIER[self.kind]

    @property
    def expires_after(self) -> int:
        return self.issued_at + self.window

    def log_line(self) -> str:
        tgt = " ".join(str(a) for a in self.targets)
        return (
            f"{self.issued_at},{self.kind},{tgt},{self.norm_id},"
            f"{self.penalty_weight},{self.window}"
        )


@dataclass
class CompromiseLedger:
    """Per-step violation indicators and their running ratio."""

    violations: int = 0
    steps: int = 0
    _ratios: deque = field(default_factory=lambda: deque(maxlen=DEFAULT_MOVING_AVERAGE_WINDOW))

    def append(self, violated: bool) -> None:
        self.steps += 1
        if violated:
            self.violations += 1
        self._ratios.append(self.ratio)

    @property
    def ratio(self) -> float:
        return self.violations / self.steps if self.steps else 0.0

    def moving_average(self) -> float:
        if not self._ratios:
            return 0.0
        return sum(self._ratios) / len(self._ratios)


@dataclass
class EscalationState:
    """Recalcitrance and failsafe bookkeeping.

    An alert region is a maximal run of consecutive alert steps; the
    yellow flag raises when ``region_limit`` regions start within the
    trailing ``region_window`` steps and clears once the violation ratio
    drops below its own moving average.
    """

    recalcitrance_window: int = RECALCITRANCE_WINDOW
    recalcitrance_count: int = RECALCITRANCE_COUNT
    region_window: int = FAILSAFE_WINDOW
    region_limit: int = FAILSAFE_REGIONS
    penalties: dict[int, list[int]] = field(default_factory=dict)
    region_starts: list[int] = field(default_factory=list)
    yellow_flag: bool = False
    yellow_flag_steps: int = 0
    _in_region: bool = False

    def record_penalty(self, agent: int, step: int) -> None:
        self.penalties.setdefault(agent, []).append(step)

    def is_recalcitrant(self, agent: int, step: int) -> bool:
        history = self.penalties.get(agent)
        if not history:
            return False
        floor = step - self.recalcitrance_window
        recent = sum(1 for s in history if s > floor)
        return recent >= self.recalcitrance_count


def plan_intervention(
    norm_kind: str,
    norm_id: str,
    statistic: float,
    step: int,
    scores: np.ndarray,
    escalation: EscalationState,
    k: int,
    penalty_weight: float,
    patch_cap: float,
    window: int = DEFAULT_WINDOW,
) -> Intervention:
    """Choose targets and tier for one admitted alarm.

    Collusion alarms throttle links; otherwise repeat offenders get the
    action cap and everyone else gets reward shaping.  Tier selection is
    monotone: conditions can only push the response upward.
    """
    from .attribution import top_k

    targets = top_k(scores, k)
    if not targets:
        raise NoTargetsError(f"alarm on {norm_id!r} carries no responsibility mass")
    if norm_kind == "collusion":
        kind = LINK_THROTTLE
    elif any(escalation.is_recalcitrant(a, step) for a in targets):
        kind = POLICY_PATCH
    else:
        kind = REWARD_SHAPING
    return Intervention(
        kind=kind,
        targets=tuple(targets),
        penalty_weight=penalty_weight,
        patch_cap=patch_cap,
        window=window,
        issued_at=step,
        norm_id=norm_id,
        statistic=float(statistic),
        scores=tuple(float(v) for v in scores),
    )


def apply_reward_shaping(rewards, targets, scores, penalty_weight: float) -> np.ndarray:
    """Subtract penalty_weight * windowed score from each target's reward."""
    shaped = np.array(rewards, dtype=float, copy=True)
    for agent in targets:
        shaped[agent] -= penalty_weight * scores[agent]
    return shaped


def apply_policy_patch(action: float, cap: float) -> float:
    """Clamp a request to the configured cap."""
    return action if action <= cap else cap


def _unit_clamp(v: float) -> float:
    return 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)


def apply_link_throttle(weights: dict, targets, scores) -> dict:
    """Attenuate links between targeted agents in place.

    Each edge with both endpoints targeted is scaled by
    ``1 - clamp(score_i) * clamp(score_j)`` (windowed mass can exceed 1, so
    factors are clamped into [0, 1] to keep weights nonnegative).  Returns
    the displaced weights so the caller can restore them bit-identically
    when the window expires.
    """
    target_set = set(targets)
    saved: dict = {}
    for key, w in weights.items():
        i, j = key
        if i in target_set and j in target_set:
            saved[key] = w
            weights[key] = w * (1.0 - _unit_clamp(scores[i]) * _unit_clamp(scores[j]))
    return saved


def restore_links(weights: dict, saved: dict) -> None:
    weights.update(saved)


def failsafe_update(
    state: EscalationState,
    alert_this_step: bool,
    compromise: CompromiseLedger,
    t: int,
) -> EscalationState:
    """Advance the yellow-flag state machine by one step."""
    if alert_this_step:
        if not state._in_region:
            state.region_starts.append(t)
            state._in_region = True
    else:
        state._in_region = False
    floor = t - state.region_window
    recent = sum(1 for s in state.region_starts if s > floor)
    if recent >= state.region_limit:
        state.yellow_flag = True
    if state.yellow_flag and compromise.steps >= 2:
        if compromise.ratio < compromise.moving_average():
            state.yellow_flag = False
    if state.yellow_flag:
        state.yellow_flag_steps += 1
    return state


def compromise_ceiling(alpha: float, window: int, penalty_weight: float, gain_max: float) -> float:
    """Ceiling alpha*H / (penalty*H - gain) on the long-run violation ratio.

    Defined only when the window's total penalty strictly dominates the
    adversary's window gain.
    """
    if alpha <= 0.0 or window < 1:
        raise ValueError("alpha must be positive and window at least 1")
    margin = penalty_weight * window - gain_max
    if margin <= 0.0:
        raise ValueError(
            "penalty budget does not dominate adversary gain; no finite ceiling"
        )
    return alpha * window / margin


def min_penalty(gain_max: float, alpha: float, window: int, ceiling: float) -> float:
    """Smallest per-step penalty weight whose ceiling equals ``ceiling``.

    Inverse of ``compromise_ceiling`` in its penalty argument:
    gain/H + alpha/ceiling.
    """
    if ceiling <= 0.0:
        raise ValueError("target ceiling must be positive")
    if window < 1:
        raise ValueError("window must be at least 1")
    return gain_max / window + alpha / ceiling


def cost_bound(penalty_weight: float, alpha: float,
               c_patch: float = DEFAULT_PATCH_COST,
               c_throttle: float = DEFAULT_THROTTLE_COST) -> float:
    """Analytic per-step supervisory spend: penalty + patch and throttle
    terms that only occur on (budgeted) alerts."""
    return penalty_weight + c_patch * alpha + c_throttle * alpha * alpha


@dataclass
class CostAccount:
    """Empirical per-step supervisory spend from a run.

    Shaping costs its per-step weight for every active window; patches and
    throttles are booked at issuance.  ``running_mean`` is the
    cumulative-average series compared against the analytic bound.
    """

    penalty_weight: float
    c_patch: float = DEFAULT_PATCH_COST
    c_throttle: float = DEFAULT_THROTTLE_COST
    total: float = 0.0
    steps: int = 0
    running_mean: list[float] = field(default_factory=list)

    def record_step(self, active_shaping_windows: int, patches_issued: int, throttles_issued: int) -> float:
        cost = (
            self.penalty_weight * active_shaping_windows
            + self.c_patch * patches_issued
            + self.c_throttle * throttles_issued
        )
        self.total += cost
        self.steps += 1
        self.running_mean.append(self.total / self.steps)
        return cost

    @property
    def mean_cost(self) -> float:
        return self.total / self.steps if self.steps else 0.0

    def bound(self, alpha: float) -> float:
        return cost_bound(self.penalty_weight, alpha, self.c_patch, self.c_throttle)
