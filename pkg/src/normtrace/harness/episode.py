"""One seeded episode: world dynamics, audit pipeline, detection, response.

Per step the world delivers gossip, agents act and learn, and records flow
toward the ledger.  The supervisor commits delivered records, links causal
edges, feeds per-norm diagnostics into the adaptive detectors, arbitrates
alarms under the global budget, and converts admitted alarms into tiered
interventions whose effects feed back into the next step.  Byte accounting
tracks gossiped records and edge inserts against the declared budget.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .. import intervention as iv
from ..attribution import ResponsibilityTracker
from ..causal import GrangerBank, ThresholdSchedule, h0_for_alpha, insert_causal_edges
from ..detection import (
    NORM_COLLUSION,
    NORM_INEQUITY,
    NORM_LOAD,
    BudgetAllocator,
    CusumDetector,
    NormSpec,
    gini,
)
from ..environment import (
    GREED_FRACTION,
    REQUEST_LEVELS,
    ByzantinePolicy,
    CartelPolicy,
    LearnerPolicy,
    StaticGuardedLearner,
    StepControls,
    World,
    persistent_bits,
)
from ..hashing import HashConfig
from ..ledger import (
    SUPERVISOR_AGENT,
    LedgerDag,
    LiveResourceAccount,
    make_event,
)
from ..merkle import export_snapshot_file
from .config import (
    BASELINE_FULL,
    BASELINE_STATIC_GUARD,
    ExperimentConfig,
    canonical_json,
    config_hash,
)

GRANGER_LAGS = 8
GRANGER_WINDOW = 64
NORM_IDS = (NORM_INEQUITY, NORM_COLLUSION, NORM_LOAD)


@dataclass
class MetricsRecord:
    """One run's machine-readable result; serializes to a canonical JSON line."""

    config: dict
    config_hash: str
    seed: int
    avg_reward: float
    final_gini: float
    compromise_ratio: float
    detection_delay: int | None
    bytes_per_step_mean: float
    bytes_per_step_max: int
    bandwidth_bound: int
    events_emitted: int
    events_committed: int
    edges_inserted: int
    alarms_fired: dict
    alarms_admitted: int
    interventions: dict
    yellow_flag_steps: int
    max_degree: int
    degree_bound_exceeded: bool
    granger_resets: int
    cartel_gain_pre: float | None = None
    cartel_gain_post: float | None = None
    schema: int = 1

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "metrics": {
                "avg_reward": self.avg_reward,
                "final_gini": self.final_gini,
                "compromise_ratio": self.compromise_ratio,
                "detection_delay": self.detection_delay,
                "bytes_per_step_mean": self.bytes_per_step_mean,
                "bytes_per_step_max": self.bytes_per_step_max,
                "bandwidth_bound": self.bandwidth_bound,
                "events_emitted": self.events_emitted,
                "events_committed": self.events_committed,
                "edges_inserted": self.edges_inserted,
                "alarms_fired": self.alarms_fired,
                "alarms_admitted": self.alarms_admitted,
                "interventions": self.interventions,
                "yellow_flag_steps": self.yellow_flag_steps,
                "max_degree": self.max_degree,
                "degree_bound_exceeded": self.degree_bound_exceeded,
                "granger_resets": self.granger_resets,
                "cartel_gain_pre": self.cartel_gain_pre,
                "cartel_gain_post": self.cartel_gain_post,
            },
        }

    def to_json_line(self) -> str:
        return canonical_json(self.to_dict())


def record_from_json(line: str) -> dict:
    return json.loads(line)


def build_policies(
    config: ExperimentConfig, rng: np.random.Generator, world: World | None = None
) -> list:
    """Instantiate per-agent policies for the configured population."""
    world_cfg = config.world
    n = world_cfg.num_agents
    q_max = world_cfg.q_max
    r_max = world_cfg.r_max
    guard = config.baseline == BASELINE_STATIC_GUARD

    policies: list = []
    for _ in range(n):
        if guard:
            policies.append(StaticGuardedLearner(q_max, r_max))
        else:
            policies.append(LearnerPolicy(q_max, r_max))

    frac = world_cfg.byzantine_fraction
    if frac > 0.0 and n > 0:
        count = max(1, round(frac * n))
        for i in range(n - count, n):
            policies[i] = ByzantinePolicy(q_max)

    if config.scenario.kind == "cartel":
        schedule = persistent_bits(512, 0.2, rng)
        for i in range(config.scenario.cartel_size):
            policy = CartelPolicy(
                q_max, schedule, config.scenario.cartel_start, leader=0, member=i
            )
            policy.world = world
            policies[i] = policy
    return policies


class _AdjacentPairMI:
    """Sliding-window mutual information over graph-adjacent action streams."""

    def __init__(self, pairs, window: int, bins: int, q_max: float) -> None:
        self.pairs = list(pairs)
        self.window = window
        self.bins = bins
        self.q_max = q_max
        self._filled = 0
        self._pos = 0
        self._ring: np.ndarray | None = None
        if self.pairs:
            self._pi = np.array([p[0] for p in self.pairs])
            self._pj = np.array([p[1] for p in self.pairs])
            self._joint = np.zeros((len(self.pairs), bins, bins))
            self._idx = np.arange(len(self.pairs))

    def push(self, actions: np.ndarray) -> float:
        if not self.pairs:
            return 0.0
        b = np.clip((actions / self.q_max * self.bins).astype(np.intp), 0, self.bins - 1)
        if self._ring is None:
            self._ring = np.zeros((self.window, b.shape[0]), dtype=np.intp)
        if self._filled == self.window:
            old = self._ring[self._pos]
            self._joint[self._idx, old[self._pi], old[self._pj]] -= 1.0
        self._ring[self._pos] = b
        self._joint[self._idx, b[self._pi], b[self._pj]] += 1.0
        self._pos = (self._pos + 1) % self.window
        if self._filled < self.window:
            self._filled += 1
            return 0.0
        p = self._joint / self.window
        pi = p.sum(axis=2)
        pj = p.sum(axis=1)
        denom = pi[:, :, None] * pj[:, None, :]
        mask = p > 0.0
        terms = np.zeros_like(p)
        np.divide(p, denom, out=terms, where=mask)
        np.log(terms, out=terms, where=mask)
        terms *= p
        return float(terms.sum(axis=(1, 2)).max())


@dataclass
class _ActiveWindow:
    plan: iv.Intervention
    saved_weights: dict = field(default_factory=dict)


def run_episode(
    config: ExperimentConfig,
    seed: int,
    dump_ledger=None,
    trace_detectors=None,
    dump_edges=None,
    dump_interventions=None,
    probe: dict | None = None,
) -> MetricsRecord:
    """Deterministic run of one (config, seed) pair.

    ``probe``, when given, receives live internals (ledger, accounting,
    world, pair states, detectors) for the property suites.
    """
    config.validate()
    hash_cfg = HashConfig(config.hash_algorithm)
    world = World(config.world, seed, hash_cfg)
    policies = build_policies(config, world.rng, world)

    n = config.world.num_agents
    steps = config.episode_steps
    det_cfg = config.detection
    int_cfg = config.intervention
    full_stack = config.baseline == BASELINE_FULL

    ledger = LedgerDag(hash_cfg)
    tracker = ResponsibilityTracker(ledger, n)
    schedule = ThresholdSchedule(h0_for_alpha(det_cfg.edge_alpha))
    last_reward = np.zeros(max(n, 1))
    edge_budget_per_step = config.world.max_degree * GRANGER_LAGS

    # One incremental state per directed graph-adjacent pair (source, target).
    pair_index: dict[tuple[int, int], int] = {}
    for tgt in range(n):
        for src in world.graph.neighbors[tgt]:
            pair_index[(src, tgt)] = len(pair_index)
    bank = GrangerBank(len(pair_index), GRANGER_LAGS, GRANGER_WINDOW)
    in_pair_idx = [
        np.array(
            [pair_index[(src, tgt)] for src in world.graph.neighbors[tgt]],
            dtype=np.int64,
        )
        for tgt in range(n)
    ]
    in_nb = [np.array(world.graph.neighbors[tgt], dtype=np.int64) for tgt in range(n)]

    def _f_lookup(src: int, tgt: int) -> float:
        k = pair_index.get((src, tgt))
        return float(bank.f_stats[k]) if k is not None else 0.0

    adjacency_pairs = sorted(world.graph.weights.keys()) if n else []
    mi_tracker = _AdjacentPairMI(
        adjacency_pairs, det_cfg.mi_window, det_cfg.mi_bins, config.world.q_max
    )

    warm_stats: dict[str, list[float]] = {nid: [] for nid in NORM_IDS}
    detectors: dict[str, CusumDetector] = {}
    allocator: BudgetAllocator | None = None
    escalation = iv.EscalationState(
        recalcitrance_window=int_cfg.recalcitrance_window,
        region_window=int_cfg.failsafe_window,
    )
    compromise = iv.CompromiseLedger()
    compromise._ratios = type(compromise._ratios)(maxlen=int_cfg.moving_average_window)
    cost_account = iv.CostAccount(
        penalty_weight=int_cfg.penalty_weight,
        c_patch=int_cfg.c_patch,
        c_throttle=int_cfg.c_throttle,
    )
    live = LiveResourceAccount()
    active: list[_ActiveWindow] = []
    grid_increment = config.world.q_max / (REQUEST_LEVELS - 1)
    patch_cap = GREED_FRACTION * config.world.r_max - grid_increment
    penalty_weight = int_cfg.penalty_weight

    alarms_fired = {nid: 0 for nid in NORM_IDS}
    alarms_admitted = 0
    alarms_without_target = 0
    intervention_counts = {iv.REWARD_SHAPING: 0, iv.POLICY_PATCH: 0, iv.LINK_THROTTLE: 0}
    trace_lines: list[str] = []
    intervention_lines: list[str] = []
    reward_means: list[float] = []
    cumulative_rewards = np.zeros(max(n, 1))
    admitted_alarm_steps: list[int] = []
    intervention_steps: list[int] = []
    cartel = config.scenario.kind == "cartel"
    cartel_agents = list(range(config.scenario.cartel_size)) if cartel else []
    cartel_gains: list[tuple[int, float]] = []

    for t in range(1, steps + 1):
        controls_patches: dict[int, float] = {}
        controls_shaping: list = []
        for win in active:
            if win.plan.kind == iv.REWARD_SHAPING:
                controls_shaping.append(
                    (win.plan.targets, np.asarray(win.plan.scores), win.plan.penalty_weight)
                )
            elif win.plan.kind == iv.POLICY_PATCH:
                for a in win.plan.targets:
                    cap = win.plan.patch_cap
                    if a in controls_patches:
                        cap = min(cap, controls_patches[a])
                    controls_patches[a] = cap

        result = world.step(
            policies,
            StepControls(
                patch_caps=controls_patches,
                shaping=controls_shaping,
                yellow_flag=escalation.yellow_flag,
            ),
        )

        reward_means.append(float(result.rewards_total.mean()) if n else 0.0)
        if n:
            cumulative_rewards[:n] += result.rewards_total
        if cartel:
            # Gain = resource units extracted per member per step.
            cartel_gains.append((t, float(result.allocations[cartel_agents].mean())))

        edges_this_step = 0
        admitted_this_step = False
        if full_stack:
            # Commit the step's deliveries, then advance all touched pair
            # statistics in one batched kernel call before causal testing.
            fresh_events: list[tuple[int, object]] = []
            batch_idx: list[np.ndarray] = []
            batch_src: list[np.ndarray] = []
            batch_tgt: list[np.ndarray] = []
            for _sender, _seq, ev in result.delivered:
                eid, fresh = ledger.commit(ev)
                if not fresh:
                    continue
                idxs = in_pair_idx[ev.agent]
                if idxs.size:
                    batch_idx.append(idxs)
                    batch_src.append(last_reward[in_nb[ev.agent]])
                    batch_tgt.append(np.full(idxs.size, ev.reward))
                last_reward[ev.agent] = ev.reward
                fresh_events.append((eid, ev))
            if batch_idx:
                bank.update_pairs(
                    np.concatenate(batch_idx),
                    np.concatenate(batch_src),
                    np.concatenate(batch_tgt),
                )
            for eid, ev in fresh_events:
                remaining = edge_budget_per_step - edges_this_step
                if remaining <= 0:
                    break
                idxs = in_pair_idx[ev.agent]
                if idxs.size and bank.f_stats[idxs].max() > schedule.at(max(1, ev.step)):
                    edges = insert_causal_edges(
                        ledger, eid, ev, world.graph.neighbors[ev.agent],
                        _f_lookup, schedule, max_candidates=GRANGER_LAGS,
                        max_edges=remaining,
                    )
                    edges_this_step += len(edges)

            z_ineq = gini(result.rewards_total) if n else 0.0
            z_coll = mi_tracker.push(result.requests) if n else 0.0
            z_load = float(result.requests.sum()) - config.world.r_max
            z_by_norm = {NORM_INEQUITY: z_ineq, NORM_COLLUSION: z_coll, NORM_LOAD: z_load}

            if t <= det_cfg.warmup_steps:
                for nid in NORM_IDS:
                    warm_stats[nid].append(z_by_norm[nid])
                if t == det_cfg.warmup_steps:
                    for nid in NORM_IDS:
                        samples = np.asarray(warm_stats[nid])
                        spec = NormSpec(
                            id=nid,
                            kind=nid,
                            mu0=float(samples.mean()),
                            delta=max(0.5 * float(samples.std()), det_cfg.min_delta),
                            alpha=det_cfg.global_budget / len(NORM_IDS),
                        )
                        detectors[nid] = CusumDetector(spec, det_cfg.h0_init)
                    allocator = BudgetAllocator(
                        NORM_IDS,
                        global_budget=det_cfg.global_budget,
                        bump_coefficient=det_cfg.bump_coefficient,
                        planned_steps=steps,
                    )
            else:
                fired = []
                for nid in NORM_IDS:
                    det = detectors[nid]
                    alert = det.step(z_by_norm[nid])
                    if alert:
                        fired.append(nid)
                        alarms_fired[nid] += 1
                    if trace_detectors is not None:
                        trace_lines.append(
                            f"{t},{nid},{z_by_norm[nid]:.6g},{det.s:.6g},{det.h:.6g},{int(alert)}"
                        )
                outcome = allocator.observe(fired)
                for nid, dh in outcome.bumps.items():
                    detectors[nid].bump(dh)
                patches_issued = throttles_issued = 0
                if outcome.admitted and outcome.winner is not None:
                    admitted_this_step = True
                    alarms_admitted += 1
                    admitted_alarm_steps.append(t)
                    scores = tracker.windowed(t, int_cfg.window).scores
                    try:
                        plan = iv.plan_intervention(
                            detectors[outcome.winner].spec.kind,
                            outcome.winner,
                            z_by_norm[outcome.winner],
                            t,
                            scores,
                            escalation,
                            int_cfg.k_targets,
                            penalty_weight,
                            patch_cap,
                            int_cfg.window,
                        )
                    except iv.NoTargetsError:
                        alarms_without_target += 1
                        plan = None
                    if plan is not None:
                        win = _ActiveWindow(plan)
                        if plan.kind == iv.LINK_THROTTLE:
                            win.saved_weights = iv.apply_link_throttle(
                                world.graph.weights, plan.targets, scores
                            )
                            throttles_issued += 1
                        elif plan.kind == iv.POLICY_PATCH:
                            patches_issued += 1
                        if plan.kind in (iv.REWARD_SHAPING, iv.POLICY_PATCH):
                            for a in plan.targets:
                                escalation.record_penalty(a, t)
                        active.append(win)
                        intervention_counts[plan.kind] += 1
                        intervention_steps.append(t)
                        intervention_lines.append(plan.log_line())
                        sup_ev = make_event(
                            t,
                            SUPERVISOR_AGENT,
                            plan.norm_id.encode(),
                            plan.log_line().encode(),
                            0.0,
                            hash_cfg,
                        )
                        ledger.commit(sup_ev, ring=False)
                cost_account.record_step(
                    sum(1 for w in active if w.plan.kind == iv.REWARD_SHAPING),
                    patches_issued,
                    throttles_issued,
                )

            violated = (
                bool(np.any(result.requests >= GREED_FRACTION * config.world.r_max))
                if n
                else False
            )
            compromise.append(violated)
            iv.failsafe_update(escalation, admitted_this_step, compromise, t)

            still_active: list[_ActiveWindow] = []
            for win in active:
                if t >= win.plan.expires_after:
                    if win.plan.kind == iv.LINK_THROTTLE:
                        iv.restore_links(world.graph.weights, win.saved_weights)
                else:
                    still_active.append(win)
            active = still_active

            if t % ledger.snapshot_interval == 0:
                ledger.seal_snapshot(t)
        else:
            violated = (
                bool(np.any(result.requests >= GREED_FRACTION * config.world.r_max))
                if n
                else False
            )
            compromise.append(violated)

        live.record_step(len(result.emitted), edges_this_step)

    detection_delay = None
    gain_pre = gain_post = None
    if cartel:
        onset = config.scenario.cartel_start
        post_onset_alarms = [t for t in admitted_alarm_steps if t >= onset]
        if post_onset_alarms:
            detection_delay = post_onset_alarms[0] - onset
        post_onset_interventions = [t for t in intervention_steps if t >= onset]
        split = post_onset_interventions[0] if post_onset_interventions else steps + 1
        pre = [g for s, g in cartel_gains if onset <= s <= split]
        post = [g for s, g in cartel_gains if s > split]
        gain_pre = float(np.mean(pre)) if pre else None
        gain_post = float(np.mean(post)) if post else None

    bound = 40 * n + 32 * config.world.max_degree * GRANGER_LAGS
    record = MetricsRecord(
        config=config.to_dict(),
        config_hash=config_hash(config),
        seed=seed,
        avg_reward=float(np.mean(reward_means)) if reward_means else 0.0,
        final_gini=gini(cumulative_rewards[:n]) if n else 0.0,
        compromise_ratio=compromise.ratio,
        detection_delay=detection_delay,
        bytes_per_step_mean=live.mean_bytes_per_step,
        bytes_per_step_max=live.max_bytes_per_step,
        bandwidth_bound=bound,
        events_emitted=live.events_emitted,
        events_committed=ledger.events_count,
        edges_inserted=ledger.edges_count,
        alarms_fired=alarms_fired,
        alarms_admitted=alarms_admitted,
        interventions=intervention_counts,
        yellow_flag_steps=escalation.yellow_flag_steps,
        max_degree=world.graph.max_degree(),
        degree_bound_exceeded=world.graph.max_degree() > config.world.max_degree,
        granger_resets=bank.total_resets,
        cartel_gain_pre=gain_pre,
        cartel_gain_post=gain_post,
    )

    if probe is not None:
        probe.update(
            ledger=ledger,
            live=live,
            world=world,
            bank=bank,
            pair_index=pair_index,
            detectors=detectors,
            allocator=allocator,
            cost_account=cost_account,
            escalation=escalation,
            compromise=compromise,
            tracker=tracker,
            intervention_steps=intervention_steps,
            admitted_alarm_steps=admitted_alarm_steps,
        )
    if dump_ledger is not None:
        export_snapshot_file(ledger.merkle, dump_ledger)
    if trace_detectors is not None:
        with open(trace_detectors, "w", encoding="utf-8") as fh:
            fh.write("\n".join(trace_lines) + ("\n" if trace_lines else ""))
    if dump_edges is not None:
        with open(dump_edges, "w", encoding="utf-8") as fh:
            for e in ledger.edges:
                fh.write(f"{e.source},{e.target},{e.f_stat:.6g},{e.inserted_at}\n")
    if dump_interventions is not None:
        with open(dump_interventions, "w", encoding="utf-8") as fh:
            fh.write("\n".join(intervention_lines) + ("\n" if intervention_lines else ""))
    return record
