"""Resource-sharing stochastic game on a small-world communication graph.

Agents request units from a shared pool each step; over-subscription is
resolved by a proportional-share rule with a tunable exponent.  Rewards
mix a private allocation term (with a greed penalty above 0.6 of the pool
cap) and a social bonus.  Audit records travel to the ledger over a lossy,
delaying gossip channel.  All randomness flows through one generator in a
fixed draw order, so a seed pins the whole trajectory.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .hashing import DEFAULT_HASH, HashConfig
from .ledger import Event, make_event

GREED_FRACTION = 0.6
REQUEST_LEVELS = 11


# ---------------------------------------------------------------------------
# configuration


@dataclass
class WorldConfig:
    num_agents: int = 10
    r_max: float = 100.0
    r_in: float = 100.0
    q_max: float | None = None
    alpha_dist: float = 1.0
    penalty_factor: float = 0.2
    social_weight: float = 0.3
    partial_obs: bool = True
    graph_k: int = 4
    graph_p_rewire: float = 0.1
    max_degree: int = 8
    eps_loss: float = 0.2
    delay_max: int = 3
    obs_noise: float = 5.0
    byzantine_fraction: float = 0.0

    def __post_init__(self):
        if self.q_max is None:
            self.q_max = self.r_max

    def validate(self) -> None:
        if not 0.0 <= self.eps_loss <= 0.2:
            raise ValueError(
                "channel-loss bound violated: eps_loss must lie in [0, 0.2]"
            )
        if self.delay_max not in (0, 1, 2, 3):
            raise ValueError("delay bound violated: delay_max must be in {0,1,2,3}")
        if not 0.0 <= self.alpha_dist <= 1.0:
            raise ValueError("alpha_dist must lie in [0, 1]")
        if self.num_agents > 0:
            if self.graph_k % 2 != 0 or not 0 < self.graph_k < self.num_agents:
                raise ValueError("graph_k must be even and smaller than num_agents")
        if self.max_degree < 1:
            raise ValueError("degree bound violated: max_degree must be declared finite")
        if not 0.0 <= self.byzantine_fraction <= 1.0:
            raise ValueError("byzantine_fraction must lie in [0, 1]")


# ---------------------------------------------------------------------------
# communication graph


class Graph:
    """Undirected weighted graph with cached 1- and 2-hop neighborhoods."""

    def __init__(self, n: int, edges) -> None:
        self.n = n
        self.weights: dict[tuple[int, int], float] = {}
        self.neighbors: list[list[int]] = [[] for _ in range(n)]
        for i, j in edges:
            self.add_edge(i, j)
        self._two_hop: list[np.ndarray] | None = None

    @staticmethod
    def edge_key(i: int, j: int) -> tuple[int, int]:
        return (i, j) if i < j else (j, i)

    def add_edge(self, i: int, j: int, weight: float = 1.0) -> None:
        if i == j:
            raise ValueError("self-loops are not allowed")
        key = self.edge_key(i, j)
        if key in self.weights:
            return
        self.weights[key] = weight
        self.neighbors[i].append(j)
        self.neighbors[j].append(i)
        self.neighbors[i].sort()
        self.neighbors[j].sort()
        self._two_hop = None

    @property
    def edge_count(self) -> int:
        return len(self.weights)

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def max_degree(self) -> int:
        return max((len(nb) for nb in self.neighbors), default=0)

    def two_hop(self, i: int) -> np.ndarray:
        if self._two_hop is None:
            self._two_hop = []
            for v in range(self.n):
                seen = set(self.neighbors[v])
                for u in self.neighbors[v]:
                    seen.update(self.neighbors[u])
                seen.discard(v)
                self._two_hop.append(np.array(sorted(seen), dtype=np.intp))
        return self._two_hop[i]

    def is_connected(self) -> bool:
        if self.n == 0:
            return True
        seen = {0}
        frontier = [0]
        while frontier:
            v = frontier.pop()
            for u in self.neighbors[v]:
                if u not in seen:
                    seen.add(u)
                    frontier.append(u)
        return len(seen) == self.n


def build_graph(n: int, k: int, p_rewire: float, seed: int, max_tries: int = 100) -> Graph:
    """Ring lattice of even degree k with independent edge rewiring.

    Rewiring preserves the edge count n*k/2; disconnected outcomes retry
    with an incremented sub-seed.
    """
    if n == 0:
        return Graph(0, [])
    if k % 2 != 0 or not 0 < k < n:
        raise ValueError("k must be even and 0 < k < n")
    for attempt in range(max_tries):
        rng = np.random.default_rng(seed + attempt)
        lattice = [
            (i, (i + off) % n) for i in range(n) for off in range(1, k // 2 + 1)
        ]
        present = {Graph.edge_key(i, j) for i, j in lattice}
        edges: list[tuple[int, int]] = []
        for i, j in lattice:
            key = Graph.edge_key(i, j)
            if p_rewire > 0.0 and rng.random() < p_rewire:
                # Replace (i, j) with (i, w); keep the count by skipping the
                # rewire when no free endpoint remains.
                for _ in range(4 * n):
                    w = int(rng.integers(0, n))
                    cand = Graph.edge_key(i, w)
                    if w != i and cand not in present:
                        present.discard(key)
                        present.add(cand)
                        key = cand
                        break
            edges.append(key)
        graph = Graph(n, present)
        if graph.is_connected():
            return graph
    raise RuntimeError(f"no connected graph after {max_tries} sub-seeded tries")


# ---------------------------------------------------------------------------
# allocation and rewards


def allocate(requests, r_max: float, alpha_dist: float) -> np.ndarray:
    """Grant requests outright under the cap, else split the cap by the
    alpha-powered proportional-share rule (0^0 counts as 0)."""
    q = np.asarray(requests, dtype=float)
    if q.size == 0:
        return q.copy()
    if np.any(q < 0.0):
        raise ValueError("requests must be nonnegative")
    if q.sum() <= r_max:
        return q.copy()
    shares = np.where(q > 0.0, np.power(q, alpha_dist, where=q > 0.0), 0.0)
    total = shares.sum()
    if total <= 0.0:
        return np.zeros_like(q)
    return shares / total * r_max


def reward(
    allocation: float,
    request: float,
    penalty_factor: float,
    social_mean: float,
    social_weight: float,
    r_max: float = 100.0,
) -> tuple[float, float]:
    """Private reward (allocation minus the greed penalty) and its total
    with the weighted social bonus."""
    greedy = request >= GREED_FRACTION * r_max
    r_private = allocation - (penalty_factor if greedy else 0.0)
    return r_private, r_private + social_weight * social_mean


# ---------------------------------------------------------------------------
# lossy, delaying gossip channel


class Channel:
    """Erasure-and-delay channel for ledger gossip.

    Each message is dropped independently with probability ``eps_loss``;
    survivors are assigned an integer delay uniform on {0..delay_max} and
    delivered in (sender, sequence) order within their delivery step.
    """

    def __init__(self, eps_loss: float, delay_max: int, rng: np.random.Generator) -> None:
        if not 0.0 <= eps_loss <= 1.0:
            raise ValueError("eps_loss must be a probability")
        if delay_max < 0:
            raise ValueError("delay_max must be nonnegative")
        self.eps_loss = eps_loss
        self.delay_max = delay_max
        self.rng = rng
        self._queue: dict[int, list[tuple[int, int, object]]] = {}
        self._seq = 0
        self.sent = 0
        self.dropped = 0

    def send(self, sender: int, payload, step: int) -> None:
        self._seq += 1
        self.sent += 1
        if self.eps_loss > 0.0 and self.rng.random() < self.eps_loss:
            self.dropped += 1
            return
        delay = int(self.rng.integers(0, self.delay_max + 1)) if self.delay_max else 0
        self._queue.setdefault(step + delay, []).append((sender, self._seq, payload))

    def send_batch(self, senders, payloads, step: int) -> None:
        """Send many messages with one vectorized drop/delay draw."""
        count = len(senders)
        if count == 0:
            return
        if self.eps_loss > 0.0:
            kept = self.rng.random(count) >= self.eps_loss
        else:
            kept = np.ones(count, dtype=bool)
        survivors = int(kept.sum())
        if self.delay_max and survivors:
            delays = self.rng.integers(0, self.delay_max + 1, size=survivors)
        else:
            delays = np.zeros(survivors, dtype=np.int64)
        self.sent += count
        self.dropped += count - survivors
        k = 0
        for i in range(count):
            self._seq += 1
            if not kept[i]:
                continue
            due = step + int(delays[k])
            k += 1
            self._queue.setdefault(due, []).append((senders[i], self._seq, payloads[i]))

    def deliver(self, step: int) -> list[tuple[int, int, object]]:
        """All messages due at or before ``step``; a record sent during
        step t is therefore visible from the start of step t+1 at the
        earliest."""
        due = [k for k in self._queue if k <= step]
        batch: list[tuple[int, int, object]] = []
        for k in due:
            batch.extend(self._queue.pop(k))
        batch.sort(key=lambda m: (m[0], m[1]))
        return batch

    @property
    def in_flight(self) -> int:
        return sum(len(v) for v in self._queue.values())


# ---------------------------------------------------------------------------
# policies


class LearnerPolicy:
    """Tabular epsilon-greedy learner over an 11-level request grid.

    State is the agent's own last allocation discretized into the same
    number of buckets; values update toward the received total reward with
    a decaying step size.  Under the yellow flag the step size freezes at
    its flag-time value and update magnitudes are clipped.
    """

    kind = "learner"

    def __init__(self, q_max: float, r_max: float, levels: int = REQUEST_LEVELS,
                 epsilon_floor: float = 0.05, clip: float = 0.1) -> None:
        self.levels = np.linspace(0.0, q_max, levels)
        self.values = np.zeros((levels, levels))
        self._bucket_scale = (levels - 1) / r_max
        self.epsilon_floor = epsilon_floor
        self.clip = clip
        self._last: tuple[int, int] | None = None
        self._frozen_lr: float | None = None

    def bucket(self, last_alloc: float) -> int:
        b = int(last_alloc * self._bucket_scale)
        hi = len(self.levels) - 1
        return 0 if b < 0 else (hi if b > hi else b)

    def act(self, step: int, last_alloc: float, rng: np.random.Generator,
            explore: bool = True) -> float:
        s = self.bucket(last_alloc)
        eps = max(self.epsilon_floor, step ** -0.5)
        if explore and rng.random() < eps:
            a = int(rng.integers(0, len(self.levels)))
        else:
            a = int(np.argmax(self.values[s]))
        self._last = (s, a)
        return float(self.levels[a])

    def learn(self, total_reward: float, step: int, yellow_flag: bool = False) -> None:
        if self._last is None:
            return
        if yellow_flag:
            if self._frozen_lr is None:
                self._frozen_lr = step ** -0.6
            lr = self._frozen_lr
        else:
            self._frozen_lr = None
            lr = step ** -0.6
        s, a = self._last
        delta = lr * (total_reward - self.values[s, a])
        if yellow_flag:
            delta = float(np.clip(delta, -self.clip, self.clip))
        self.values[s, a] += delta


class StaticGuardedLearner(LearnerPolicy):
    """Learner whose requests are capped at the greed threshold."""

    kind = "static_guarded_learner"

    def __init__(self, q_max: float, r_max: float, **kw) -> None:
        super().__init__(q_max, r_max, **kw)
        self._cap = GREED_FRACTION * r_max

    def act(self, step, last_alloc, rng, explore=True) -> float:
        q = super().act(step, last_alloc, rng, explore)
        return min(q, self._cap)


class ByzantinePolicy:
    """Adversary that always requests the maximum."""

    kind = "byzantine"

    def __init__(self, q_max: float) -> None:
        self.q_max = q_max

    def act(self, step, last_alloc, rng, explore=True) -> float:
        return self.q_max

    def learn(self, total_reward, step, yellow_flag=False) -> None:
        pass


class CartelPolicy:
    """Scripted colluder with a leader-follower structure.

    The leader plays large requests that switch between two levels on a
    persistent bit schedule; followers replay the leader's previous
    *realized* request (read from the world), so a cap imposed on the
    leader propagates through the whole cartel one step later.  The lagged
    copying is also what makes the coalition attributable: the leader's
    reward stream predicts the followers' beyond their own history.
    """

    kind = "cartel"

    def __init__(self, q_max: float, schedule: np.ndarray, start_step: int,
                 leader: int, member: int, idle_fraction: float = 0.3) -> None:
        self.q_max = q_max
        self.schedule = schedule
        self.start_step = start_step
        self.leader = leader
        self.is_leader = member == leader
        self.idle = idle_fraction * q_max
        self.world: "World | None" = None

    def act(self, step, last_alloc, rng, explore=True) -> float:
        if step < self.start_step:
            return self.idle
        if self.is_leader:
            bit = self.schedule[step % len(self.schedule)]
            return self.q_max * (0.7 + 0.3 * bit)
        if self.world is not None and step > self.start_step:
            return float(self.world.last_requests[self.leader])
        bit = self.schedule[step % len(self.schedule)]
        return self.q_max * (0.7 + 0.3 * bit)

    def learn(self, total_reward, step, yellow_flag=False) -> None:
        pass


def persistent_bits(length: int, flip_probability: float, rng: np.random.Generator) -> np.ndarray:
    """0/1 schedule with temporal persistence (flips with the given
    probability), so lagged copies stay correlated with the original."""
    bits = np.empty(length)
    state = float(rng.integers(0, 2))
    for i in range(length):
        if rng.random() < flip_probability:
            state = 1.0 - state
        bits[i] = state
    return bits


# ---------------------------------------------------------------------------
# world


@dataclass
class StepControls:
    """Supervisor-applied controls for one step."""

    patch_caps: dict[int, float] = field(default_factory=dict)
    shaping: list[tuple[tuple[int, ...], np.ndarray, float]] = field(default_factory=list)
    yellow_flag: bool = False


@dataclass
class StepResult:
    step: int
    delivered: list
    emitted: list
    observations: list
    requests: np.ndarray
    allocations: np.ndarray
    rewards_private: np.ndarray
    rewards_total: np.ndarray
    social_mean: float


class World:
    """Owns the pool, the graph, in-flight gossip, and the single RNG."""

    def __init__(
        self,
        config: WorldConfig,
        seed: int,
        hash_config: HashConfig | None = None,
    ) -> None:
        config.validate()
        self.config = config
        self.hash_config = hash_config or DEFAULT_HASH
        self.rng = np.random.default_rng(seed)
        n = config.num_agents
        graph_seed = int(self.rng.integers(0, 2**63 - 1))
        self.graph = build_graph(n, config.graph_k, config.graph_p_rewire, graph_seed) \
            if n > 0 else Graph(0, [])
        self.channel = Channel(config.eps_loss, config.delay_max, self.rng)
        self.pool = config.r_max
        self.t = 0
        self.last_alloc = np.zeros(n)
        self.last_requests = np.zeros(n)
        self.last_total_requests = 0.0
        self._pack_action = struct.Struct("<d").pack
        self._layout = None

    def _obs_layout(self):
        # Slice offsets into one flat per-step noise block, in canonical
        # agent order: [hood values..., global] per agent.
        if self._layout is None:
            cfg = self.config
            hoods = [self.graph.two_hop(i) for i in range(cfg.num_agents)]
            offsets = []
            pos = 0
            for h in hoods:
                width = h.size + (1 if cfg.partial_obs else 0)
                offsets.append(pos)
                pos += width
            self._layout = (hoods, offsets, pos)
        return self._layout

    def observe_all(self, include_noise: bool = True) -> list[np.ndarray]:
        """Observations for every agent; one noise block per step keeps the
        draw order canonical."""
        cfg = self.config
        n = cfg.num_agents
        sigma = cfg.obs_noise if include_noise else 0.0
        hoods, offsets, total = self._obs_layout()
        noise = self.rng.normal(0.0, sigma, total) if sigma > 0.0 and total else None
        obs: list[np.ndarray] = []
        for i in range(n):
            hood = hoods[i]
            width = hood.size
            out = np.empty(1 + width + (1 if cfg.partial_obs else 0))
            out[0] = self.last_alloc[i]
            vals = self.last_alloc[hood]
            if noise is not None and width:
                vals = np.maximum(vals + noise[offsets[i] : offsets[i] + width], 0.0)
            out[1 : 1 + width] = vals
            if cfg.partial_obs:
                g = self.last_total_requests
                if noise is not None:
                    g = max(g + noise[offsets[i] + width], 0.0)
                out[1 + width] = g
            obs.append(out)
        return obs

    def step(self, policies, controls: StepControls | None = None) -> StepResult:
        cfg = self.config
        controls = controls or StepControls()
        self.t += 1
        t = self.t
        n = cfg.num_agents

        delivered = self.channel.deliver(t)
        observations = self.observe_all()

        requests = np.zeros(n)
        for i in range(n):
            q = policies[i].act(t, float(self.last_alloc[i]), self.rng)
            cap = controls.patch_caps.get(i)
            if cap is not None and q > cap:
                q = cap
            requests[i] = min(max(q, 0.0), cfg.q_max)

        allocations = allocate(requests, cfg.r_max, cfg.alpha_dist)
        social_mean = float(allocations.mean()) if n else 0.0
        greedy = requests >= GREED_FRACTION * cfg.r_max
        rewards_private = allocations - np.where(greedy, cfg.penalty_factor, 0.0)
        rewards_total = rewards_private + cfg.social_weight * social_mean

        for targets, scores, weight in controls.shaping:
            for a in targets:
                rewards_total[a] -= weight * scores[a]

        for i in range(n):
            policies[i].learn(float(rewards_total[i]), t, controls.yellow_flag)

        emitted: list[Event] = []
        for i in range(n):
            ev = make_event(
                t,
                i,
                observations[i].tobytes(),
                self._pack_action(requests[i]),
                float(rewards_total[i]),
                self.hash_config,
            )
            emitted.append(ev)
        self.channel.send_batch(list(range(n)), emitted, t)

        self.pool = min(cfg.r_max, max(0.0, self.pool - float(allocations.sum()) + cfg.r_in))
        self.last_alloc = allocations
        self.last_requests = requests
        self.last_total_requests = float(requests.sum())

        return StepResult(
            step=t,
            delivered=delivered,
            emitted=emitted,
            observations=observations,
            requests=requests,
            allocations=allocations,
            rewards_private=rewards_private,
            rewards_total=rewards_total,
            social_mean=social_mean,
        )
