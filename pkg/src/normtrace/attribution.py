"""Responsibility scoring over the causal DAG.

An agent's score for an event is its share of discounted causal-path
mass: every path from one of the agent's records into the event
contributes discount^length, and scores are the per-agent path masses
normalized by their total.  Events nothing points at get a zero vector.
Path masses are accumulated by dynamic programming over in-edges, so the
cost is linear in the reachable subgraph rather than the path count; the
brute-force path enumeration lives in the test suite as the reference.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ledger import LedgerDag

DEFAULT_DISCOUNT = 0.8
DEFAULT_WINDOW = 25


def _path_mass(
    ledger: LedgerDag,
    event_id: int,
    floor_step: int,
    num_agents: int,
    discount: float,
    memo: dict,
) -> dict[int, float]:
    """Discounted path mass into ``event_id`` keyed by originating agent."""
    cached = memo.get(event_id)
    if cached is not None:
        return cached
    mass: dict[int, float] = {}
    for edge in ledger.in_edges_of(event_id):
        src = ledger.events[edge.source]
        if src.step < floor_step or src.agent >= num_agents:
            continue
        upstream = _path_mass(ledger, edge.source, floor_step, num_agents, discount, memo)
        mass[src.agent] = mass.get(src.agent, 0.0) + discount
        for agent, value in upstream.items():
            mass[agent] = mass.get(agent, 0.0) + discount * value
    memo[event_id] = mass
    return mass


def compute_rho(
    ledger: LedgerDag,
    event_id: int,
    num_agents: int,
    discount: float = DEFAULT_DISCOUNT,
    horizon: int | None = None,
) -> np.ndarray:
    """Normalized responsibility vector for one committed event.

    Scores live in [0, 1] and sum to exactly 1 whenever any causal path
    reaches the event; the all-zero vector means nothing upstream was
    linked.  Paths are confined to the retention horizon below the
    event's step.
    """
    if not 0.0 < discount < 1.0:
        raise ValueError("discount must lie strictly inside (0, 1)")
    event = ledger.events[event_id]
    floor_step = event.step - (ledger.horizon if horizon is None else horizon)
    mass = _path_mass(ledger, event_id, floor_step, num_agents, discount, {})
    scores = np.zeros(num_agents)
    total = 0.0
    for agent, value in mass.items():
        scores[agent] = value
        total += value
    if total > 0.0:
        scores /= total
    return scores


@dataclass
class WindowedScores:
    """Responsibility mass summed over a trailing step window.

    Per-agent totals are plain mass, not shares: each attributed event in
    the window contributes 1 across agents, so the vector sums to the
    number of attributed events.
    """

    window: int
    upto_step: int
    scores: np.ndarray
    attributed_events: int


def windowed_scores(
    ledger: LedgerDag,
    t: int,
    num_agents: int,
    window: int = DEFAULT_WINDOW,
    discount: float = DEFAULT_DISCOUNT,
    rho_cache: dict | None = None,
) -> WindowedScores:
    """Sum responsibility vectors of events with step in [t - window, t]."""
    if window < 1:
        raise ValueError("window must be at least one step")
    totals = np.zeros(num_agents)
    attributed = 0
    for eid, _ev in ledger.events_in_window(t - window, t):
        if rho_cache is not None and eid in rho_cache:
            rho = rho_cache[eid]
        else:
            rho = compute_rho(ledger, eid, num_agents, discount)
            if rho_cache is not None:
                rho_cache[eid] = rho
        s = rho.sum()
        if s > 0.0:
            totals += rho
            attributed += 1
    return WindowedScores(window=window, upto_step=t, scores=totals, attributed_events=attributed)


def top_k(scores, k: int) -> list[int]:
    """Agents with positive score in nonincreasing order, ties to the lower
    index, truncated to k entries."""
    if k < 1:
        raise ValueError("k must be positive")
    arr = np.asarray(scores, dtype=float)
    order = sorted(range(arr.shape[0]), key=lambda i: (-arr[i], i))
    return [i for i in order if arr[i] > 0.0][:k]


class ResponsibilityTracker:
    """Caching front-end used by the supervisor loop.

    A record's incoming edges are final once it is committed, so per-event
    responsibility vectors are safe to cache across queries.
    """

    def __init__(self, ledger: LedgerDag, num_agents: int, discount: float = DEFAULT_DISCOUNT):
        self.ledger = ledger
        self.num_agents = num_agents
        self.discount = discount
        self._cache: dict[int, np.ndarray] = {}

    def rho(self, event_id: int) -> np.ndarray:
        cached = self._cache.get(event_id)
        if cached is None:
            cached = compute_rho(self.ledger, event_id, self.num_agents, self.discount)
            self._cache[event_id] = cached
        return cached

    def windowed(self, t: int, window: int = DEFAULT_WINDOW) -> WindowedScores:
        return windowed_scores(
            self.ledger, t, self.num_agents, window, self.discount, rho_cache=self._cache
        )
