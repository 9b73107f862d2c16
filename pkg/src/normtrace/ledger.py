"""Audit event records and the append-only causal ledger.

Every control step each agent contributes one fixed-width 40-byte record:
time index, agent index, two 16-byte payload digests, and a fixed-point
reward.  Records are committed into per-agent ring buffers and a Merkle
log; causal edges between committed records form a DAG whose edges never
point backward in time.  Snapshots seal the Merkle root on a fixed step
schedule and the whole structure is deterministic given the input stream.
"""
from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field
from operator import itemgetter

from .hashing import DEFAULT_HASH, HashConfig
from .merkle import MerkleLog

_CANDIDATE_KEY = itemgetter(0, 1)

# Canonical little-endian record layout:
#   [step:u32][agent:u16][obs_digest:16B][act_digest:16B][reward:i16 fixed-point]
_EVENT_STRUCT = struct.Struct("<IH16s16sh")
EVENT_BYTES = 40
assert _EVENT_STRUCT.size == EVENT_BYTES

REWARD_SCALE = 256
REWARD_MAX = 32767 / REWARD_SCALE
REWARD_MIN = -32768 / REWARD_SCALE

# Reserved agent index for governor-issued audit records; never a player.
SUPERVISOR_AGENT = 0xFFFF

RING_CAPACITY = 256
SNAPSHOT_INTERVAL = 256
HORIZON_STEPS = 256


def quantize_reward(value: float) -> int:
    """Saturating fixed-point encoding at 1/256 resolution."""
    q = round(value * REWARD_SCALE)
    if q > 32767:
        return 32767
    if q < -32768:
        return -32768
    return int(q)


@dataclass(frozen=True, slots=True)
class Event:
    """One 40-byte audit record."""

    step: int
    agent: int
    obs_digest: bytes
    act_digest: bytes
    reward_q: int

    @property
    def reward(self) -> float:
        return self.reward_q / REWARD_SCALE

    def encode(self) -> bytes:
        return _EVENT_STRUCT.pack(
            self.step, self.agent, self.obs_digest, self.act_digest, self.reward_q
        )

    @classmethod
    def decode(cls, data: bytes) -> "Event":
        if len(data) != EVENT_BYTES:
            raise ValueError(f"event record must be {EVENT_BYTES} bytes")
        step, agent, obs_d, act_d, reward_q = _EVENT_STRUCT.unpack(data)
        return cls(step, agent, obs_d, act_d, reward_q)

    def digest16(self, hash_config: HashConfig | None = None) -> bytes:
        return (hash_config or DEFAULT_HASH).digest16(self.encode())

    def event_id(self, hash_config: HashConfig | None = None) -> int:
        return (hash_config or DEFAULT_HASH).id64(self.encode())


def make_event(
    step: int,
    agent: int,
    obs_payload: bytes,
    act_payload: bytes,
    reward: float,
    hash_config: HashConfig | None = None,
) -> Event:
    """Build a record; payloads of any size collapse to 16-byte digests."""
    if step < 0:
        raise ValueError("step must be nonnegative")
    if not 0 <= agent <= 0xFFFF:
        raise ValueError("agent index out of range")
    cfg = hash_config or DEFAULT_HASH
    return Event(
        step=step,
        agent=agent,
        obs_digest=cfg.digest16(obs_payload),
        act_digest=cfg.digest16(act_payload),
        reward_q=quantize_reward(reward),
    )


class RingBuffer:
    """Bounded per-agent record buffer; oldest entries evicted first."""

    __slots__ = ("capacity", "_entries")

    def __init__(self, capacity: int = RING_CAPACITY) -> None:
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._entries: deque = deque(maxlen=capacity)

    def append(self, item) -> None:
        self._entries.append(item)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __reversed__(self):
        return reversed(self._entries)

    @property
    def newest(self):
        return self._entries[-1]

    @property
    def oldest(self):
        return self._entries[0]


@dataclass(frozen=True, slots=True)
class CausalEdge:
    source: int
    target: int
    f_stat: float
    inserted_at: int


@dataclass(frozen=True, slots=True)
class MerkleSnapshot:
    root: bytes
    step_sealed: int
    leaf_count: int


class LedgerDag:
    """Append-only event DAG with Merkle commitments and sealed snapshots.

    Single committer; commits are idempotent under gossip redelivery, and
    causal edges are only accepted when the source strictly precedes the
    target in time.
    """

    def __init__(
        self,
        hash_config: HashConfig | None = None,
        ring_capacity: int = RING_CAPACITY,
        snapshot_interval: int = SNAPSHOT_INTERVAL,
        horizon: int = HORIZON_STEPS,
    ) -> None:
        self.hash_config = hash_config or DEFAULT_HASH
        self.ring_capacity = ring_capacity
        self.snapshot_interval = snapshot_interval
        self.horizon = horizon
        self.events: dict[int, Event] = {}
        self.commit_order: list[int] = []
        self.rings: dict[int, RingBuffer] = {}
        self.in_edges: dict[int, list[CausalEdge]] = {}
        self.edges: list[CausalEdge] = []
        self._edge_keys: set[tuple[int, int]] = set()
        self._by_step: dict[int, list[int]] = {}
        self.merkle = MerkleLog(self.hash_config)
        self.snapshots: list[MerkleSnapshot] = []

    @property
    def events_count(self) -> int:
        return len(self.events)

    @property
    def edges_count(self) -> int:
        return len(self.edges)

    def commit(self, event: Event, ring: bool = True) -> tuple[int, bool]:
        """Commit a record; returns ``(event_id, newly_committed)``."""
        # Identifier and leaf digest are both prefixes of one record hash.
        d32 = self.hash_config.digest32(event.encode())
        eid = int.from_bytes(d32[:8], "little")
        if eid in self.events:
            return eid, False
        self.events[eid] = event
        self.commit_order.append(eid)
        self._by_step.setdefault(event.step, []).append(eid)
        if ring:
            buf = self.rings.get(event.agent)
            if buf is None:
                buf = self.rings[event.agent] = RingBuffer(self.ring_capacity)
            buf.append((eid, event))
        self.merkle.insert(d32[:16])
        return eid, True

    def add_edge(
        self, source_id: int, target_id: int, f_stat: float, step: int
    ) -> CausalEdge | None:
        """Insert a causal edge; duplicates are ignored, back-edges rejected."""
        src = self.events.get(source_id)
        tgt = self.events.get(target_id)
        if src is None or tgt is None:
            raise KeyError("both endpoints must be committed before linking")
        if src.step >= tgt.step:
            raise ValueError("causal edges must move forward in time")
        key = (source_id, target_id)
        if key in self._edge_keys:
            return None
        self._edge_keys.add(key)
        edge = CausalEdge(source_id, target_id, float(f_stat), step)
        self.edges.append(edge)
        self.in_edges.setdefault(target_id, []).append(edge)
        return edge

    def in_edges_of(self, event_id: int) -> list[CausalEdge]:
        return self.in_edges.get(event_id, [])

    def recent_upstream(
        self,
        agents,
        before_step: int,
        limit: int,
        horizon: int | None = None,
    ) -> list[tuple[int, Event]]:
        """Up to ``limit`` most recent committed records from ``agents``
        strictly before ``before_step`` and within the step horizon.

        Ordered newest first; ties broken by lower agent index.
        """
        if horizon is None:
            horizon = self.horizon
        floor = before_step - horizon
        pool: list[tuple[int, int, int, Event]] = []
        for a in agents:
            buf = self.rings.get(a)
            if buf is None:
                continue
            taken = 0
            for eid, ev in reversed(buf):
                if ev.step >= before_step:
                    continue
                if ev.step < floor:
                    break
                pool.append((-ev.step, ev.agent, eid, ev))
                taken += 1
                if taken >= limit:
                    break
        pool.sort(key=_CANDIDATE_KEY)
        return [(eid, ev) for _, _, eid, ev in pool[:limit]]

    def events_in_window(self, lo_step: int, hi_step: int):
        """Iterate ``(event_id, event)`` with step in [lo_step, hi_step]."""
        for step in range(max(lo_step, 0), hi_step + 1):
            for eid in self._by_step.get(step, ()):
                yield eid, self.events[eid]

    def seal_snapshot(self, step: int) -> MerkleSnapshot:
        """Seal the current root; only valid on the snapshot schedule."""
        if step <= 0 or step % self.snapshot_interval != 0:
            raise ValueError(
                f"snapshots seal every {self.snapshot_interval} steps; got {step}"
            )
        if self.snapshots and step <= self.snapshots[-1].step_sealed:
            raise ValueError("snapshot schedule must advance")
        snap = MerkleSnapshot(
            root=self.merkle.root(),
            step_sealed=step,
            leaf_count=self.merkle.leaf_count,
        )
        self.snapshots.append(snap)
        return snap


@dataclass(frozen=True, slots=True)
class ResourceAccount:
    """Per-step and cumulative storage/bandwidth tallies in bytes."""

    bytes_per_step: int
    total_bytes: int
    events_count: int
    edges_count: int


def account_resources(
    num_agents: int, max_degree: int, horizon: int, steps: int = 1
) -> ResourceAccount:
    """Worst-case byte budget: 40 per record and 32 per causal edge."""
    if min(num_agents, max_degree, horizon, steps) < 0:
        raise ValueError("parameters must be nonnegative")
    per_step = EVENT_BYTES * num_agents + 32 * max_degree * horizon
    return ResourceAccount(
        bytes_per_step=per_step,
        total_bytes=per_step * steps,
        events_count=num_agents * steps,
        edges_count=max_degree * horizon * steps,
    )


@dataclass
class LiveResourceAccount:
    """Actual per-step accounting from a run; one entry per control step."""

    events_emitted: int = 0
    edges_inserted: int = 0
    total_bytes: int = 0
    max_bytes_per_step: int = 0
    steps: int = 0
    bytes_history: list[int] = field(default_factory=list)

    def record_step(self, events: int, edges: int) -> int:
        b = EVENT_BYTES * events + 32 * edges
        self.events_emitted += events
        self.edges_inserted += edges
        self.total_bytes += b
        self.steps += 1
        if b > self.max_bytes_per_step:
            self.max_bytes_per_step = b
        self.bytes_history.append(b)
        return b

    @property
    def mean_bytes_per_step(self) -> float:
        return self.total_bytes / self.steps if self.steps else 0.0
