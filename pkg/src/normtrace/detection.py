"""Norm diagnostics, adaptive cumulative-sum alarms, and alert budgeting.

Three scalar diagnostics feed one-sided Page detectors: an inequality
index over rewards, a maximum pairwise mutual-information pulse over
action streams, and shared-resource load.  Each detector's threshold is
steered by a stochastic-approximation update so its long-run alarm rate
settles on the configured budget, and simultaneous alarms are arbitrated
by an exponentiated-weights allocator holding a global alert budget.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NORM_INEQUITY = "inequity"
NORM_COLLUSION = "collusion"
NORM_LOAD = "load"
NORM_KINDS = (NORM_INEQUITY, NORM_COLLUSION, NORM_LOAD)

H_MIN = 1e-3
GAIN_EXPONENT = 0.6
DELAY_SENTINEL = 1e12


def gini(values) -> float:
    """Mean absolute difference over twice the mean, in [0, 1].

    Negative inputs are shifted up to zero first; an all-zero vector is
    perfectly equal by convention.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("gini expects a nonempty 1-d vector")
    lo = x.min()
    if lo < 0.0:
        x = x - lo
    total = x.sum()
    if total <= 0.0:
        return 0.0
    n = x.size
    xs = np.sort(x)
    ranked = np.arange(1, n + 1) @ xs
    return float((2.0 * ranked - (n + 1) * total) / (n * total))


def collusion_pulse(action_windows, window: int, bins: int = 8, value_range=None) -> float:
    """Max pairwise plug-in mutual information (nats) of binned actions.

    Returns 0 while fewer than ``window`` samples are available (warm-up);
    the plug-in estimator's positive small-sample bias is absorbed by the
    detector baseline rather than corrected here.
    """
    arr = np.asarray(action_windows, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError("need action streams for at least two agents")
    if arr.shape[1] < window:
        return 0.0
    arr = arr[:, -window:]
    if value_range is None:
        lo, hi = 0.0, float(arr.max())
    else:
        lo, hi = float(value_range[0]), float(value_range[1])
    span = hi - lo
    if span <= 0.0:
        binned = np.zeros_like(arr, dtype=np.intp)
    else:
        binned = np.clip(((arr - lo) / span * bins).astype(np.intp), 0, bins - 1)
    n_agents = arr.shape[0]
    best = 0.0
    for i in range(n_agents):
        for j in range(i + 1, n_agents):
            mi = _pair_mi(binned[i], binned[j], bins, window)
            if mi > best:
                best = mi
    return best


def _pair_mi(bi: np.ndarray, bj: np.ndarray, bins: int, window: int) -> float:
    joint = np.bincount(bi * bins + bj, minlength=bins * bins).reshape(bins, bins)
    p = joint / window
    pi = p.sum(axis=1)
    pj = p.sum(axis=0)
    mask = p > 0.0
    denom = np.outer(pi, pj)
    return float(np.sum(p[mask] * np.log(p[mask] / denom[mask])))


def load_statistic(queue_length: float, design_capacity: float) -> float:
    """Demand pressure on a shared resource; negative means head-room."""
    return float(queue_length) - float(design_capacity)


@dataclass(frozen=True)
class NormSpec:
    """One monitored norm: baseline, slack, and its per-norm alarm budget."""

    id: str
    kind: str
    mu0: float
    delta: float
    alpha: float

    def __post_init__(self):
        if self.delta <= 0.0:
            raise ValueError("slack must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie strictly between 0 and 1")


class CusumDetector:
    """One-sided Page statistic with a self-calibrating threshold.

    The statistic accumulates positive drift above baseline + slack and
    resets to zero on every alarm.  After each step the threshold moves by
    eta_t * (alert - alpha) with eta_t = t^-0.6, floored at ``h_min``, so
    the long-run alarm frequency is driven toward alpha; ``adaptive=False``
    freezes the threshold for fixed-threshold analyses.
    """

    def __init__(
        self,
        spec: NormSpec,
        h0: float,
        h_min: float = H_MIN,
        adaptive: bool = True,
    ) -> None:
        if h0 <= 0.0:
            raise ValueError("initial threshold must be positive")
        self.spec = spec
        self.h = float(h0)
        self.h_min = h_min
        self.adaptive = adaptive
        self.s = 0.0
        self.t = 0
        self.alarm_count = 0

    def step(self, z: float) -> bool:
        self.t += 1
        s = self.s + float(z) - self.spec.mu0 - self.spec.delta
        self.s = s if s > 0.0 else 0.0
        alert = self.s >= self.h
        if alert:
            self.alarm_count += 1
            self.s = 0.0
        if self.adaptive:
            eta = self.t ** -GAIN_EXPONENT
            self.h = max(self.h_min, self.h + eta * ((1.0 if alert else 0.0) - self.spec.alpha))
        return alert

    def bump(self, delta_h: float) -> None:
        if delta_h > 0.0:
            self.h += delta_h

    @property
    def alarm_rate(self) -> float:
        return self.alarm_count / self.t if self.t else 0.0


def lorden_delay_bound(h_star: float, drift: float, slack: float) -> float:
    """Worst-case mean detection delay h* / (drift - slack).

    Undetectable drifts (drift <= slack) are an error; ratios beyond the
    sentinel collapse to +inf.
    """
    if drift <= slack:
        raise ValueError("drift must exceed the slack for detection")
    bound = h_star / (drift - slack)
    return math.inf if bound > DELAY_SENTINEL else bound


@dataclass
class AllocationResult:
    winner: str | None
    admitted: bool
    bumps: dict[str, float] = field(default_factory=dict)


class BudgetAllocator:
    """Arbitrates simultaneous alarms under a global alert budget.

    Exponentiated-weights bookkeeping tracks which norms keep firing; the
    alert slot goes to the fired norm with the lowest running alarm
    frequency, an admission gate keeps total admitted alerts below the
    global budget, and losing norms receive (nonnegative) threshold bumps.
    """

    def __init__(
        self,
        norm_ids,
        global_budget: float = 0.05,
        learning_rate: float | None = None,
        bump_coefficient: float = 1.0,
        planned_steps: int = 10_000,
    ) -> None:
        self.norm_ids = list(norm_ids)
        if not self.norm_ids:
            raise ValueError("allocator needs at least one norm")
        if not 0.0 < global_budget < 1.0:
            raise ValueError("global budget must lie strictly between 0 and 1")
        m = len(self.norm_ids)
        self._pos = {nid: i for i, nid in enumerate(self.norm_ids)}
        self.global_budget = global_budget
        self.bump_coefficient = bump_coefficient
        if learning_rate is None:
            learning_rate = math.sqrt(math.log(max(m, 2)) / max(planned_steps, 1))
        self.learning_rate = learning_rate
        self.weights = np.full(m, 1.0 / m)
        self.fired_counts = np.zeros(m, dtype=np.int64)
        self.admitted_counts = np.zeros(m, dtype=np.int64)
        self.admitted_total = 0
        self.t = 0

    def alpha_hat(self, norm_id: str) -> float:
        if self.t == 0:
            return 0.0
        return self.fired_counts[self._pos[norm_id]] / self.t

    def observe(self, fired) -> AllocationResult:
        """Advance one step with the set of norms whose detectors fired."""
        self.t += 1
        fired = [nid for nid in self.norm_ids if nid in set(fired)]
        z = np.zeros(len(self.norm_ids))
        for nid in fired:
            idx = self._pos[nid]
            self.fired_counts[idx] += 1
            z[idx] = 1.0
        self.weights = self.weights * np.exp(-self.learning_rate * z)
        self.weights /= self.weights.sum()
        if not fired:
            return AllocationResult(winner=None, admitted=False)
        winner = min(fired, key=lambda nid: (self.alpha_hat(nid), self._pos[nid]))
        admitted = self.admitted_total < self.global_budget * self.t
        if admitted:
            self.admitted_total += 1
            self.admitted_counts[self._pos[winner]] += 1
        bumps: dict[str, float] = {}
        a_w = self.alpha_hat(winner)
        for nid in fired:
            if nid == winner:
                continue
            a_n = self.alpha_hat(nid)
            if a_w > 0.0 and a_n > 0.0:
                bumps[nid] = max(0.0, self.bump_coefficient * math.log(a_w / a_n))
            else:
                bumps[nid] = 0.0
        return AllocationResult(winner=winner, admitted=admitted, bumps=bumps)
