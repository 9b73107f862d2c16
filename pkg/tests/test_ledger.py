import pytest
from hypothesis import given, strategies as st

from normtrace.hashing import DEFAULT_HASH, HashConfig
from normtrace.ledger import (
    EVENT_BYTES,
    Event,
    LedgerDag,
    LiveResourceAccount,
    RingBuffer,
    account_resources,
    make_event,
    quantize_reward,
)


class TestMakeEvent:
    def test_identical_inputs_identical_event(self):
        a = make_event(3, 1, b"obs-payload", b"act-payload", 1.25)
        b = make_event(3, 1, b"obs-payload", b"act-payload", 1.25)
        assert a == b
        assert a.encode() == b.encode()
        assert a.event_id() == b.event_id()

    def test_reward_changes_event_id(self):
        a = make_event(3, 1, b"o", b"a", 1.0)
        b = make_event(3, 1, b"o", b"a", 2.0)
        assert a.event_id() != b.event_id()

    def test_large_payload_still_forty_bytes(self):
        big = b"\xab" * (1 << 20)
        ev = make_event(0, 0, big, big, 0.0)
        assert len(ev.encode()) == EVENT_BYTES == 40

    def test_empty_payloads_ok(self):
        ev = make_event(0, 0, b"", b"", 0.0)
        assert len(ev.encode()) == 40

    def test_preconditions(self):
        with pytest.raises(ValueError):
            make_event(-1, 0, b"", b"", 0.0)
        with pytest.raises(ValueError):
            make_event(0, 1 << 16, b"", b"", 0.0)

    def test_digest_is_truncated_configured_hash(self):
        cfg = HashConfig("sha256")
        ev = make_event(0, 0, b"payload", b"x", 0.0, cfg)
        assert ev.obs_digest == cfg.digest32(b"payload")[:16]

    @given(
        step=st.integers(0, 2**32 - 1),
        agent=st.integers(0, 2**16 - 1),
        obs=st.binary(max_size=64),
        act=st.binary(max_size=64),
        reward=st.floats(-200, 200, allow_nan=False),
    )
    def test_encode_decode_round_trip(self, step, agent, obs, act, reward):
        ev = make_event(step, agent, obs, act, reward)
        data = ev.encode()
        assert len(data) == 40
        assert Event.decode(data) == ev


class TestRewardQuantization:
    def test_resolution(self):
        assert quantize_reward(1.0) == 256
        assert quantize_reward(-1.0) == -256

    def test_saturation(self):
        assert quantize_reward(1e9) == 32767
        assert quantize_reward(-1e9) == -32768

    def test_round_trip_within_half_lsb(self):
        for r in (0.0, 0.123, -17.7, 99.99):
            ev = make_event(0, 0, b"", b"", r)
            assert abs(ev.reward - r) <= 0.5 / 256 + 1e-12


class TestRingBuffer:
    def test_empty_append(self):
        ring = RingBuffer()
        ring.append("e")
        assert len(ring) == 1
        assert ring.newest == "e"

    def test_eviction_at_capacity(self):
        ring = RingBuffer(capacity=256)
        for i in range(256):
            ring.append(i)
        assert ring.oldest == 0
        ring.append(256)
        assert len(ring) == 256
        assert ring.oldest == 1

    def test_three_hundred_appends_keep_45_through_300(self):
        ring = RingBuffer(capacity=256)
        for i in range(1, 301):
            ring.append(i)
        held = list(ring)
        assert held == list(range(45, 301))


class TestLedgerDag:
    def _event(self, step, agent, reward=0.0):
        return make_event(step, agent, f"o{step}-{agent}".encode(), b"a", reward)

    def test_commit_idempotent(self):
        dag = LedgerDag()
        ev = self._event(1, 0)
        eid, fresh = dag.commit(ev)
        assert fresh
        eid2, fresh2 = dag.commit(ev)
        assert eid2 == eid and not fresh2
        assert dag.events_count == 1
        assert dag.merkle.leaf_count == 1

    def test_add_edge_requires_forward_time(self):
        dag = LedgerDag()
        a, _ = dag.commit(self._event(1, 0))
        b, _ = dag.commit(self._event(2, 1))
        edge = dag.add_edge(a, b, 9.0, 2)
        assert edge is not None and edge.source == a
        with pytest.raises(ValueError):
            dag.add_edge(b, a, 9.0, 2)
        with pytest.raises(KeyError):
            dag.add_edge(a, 123456, 9.0, 2)

    def test_duplicate_edge_ignored(self):
        dag = LedgerDag()
        a, _ = dag.commit(self._event(1, 0))
        b, _ = dag.commit(self._event(2, 1))
        assert dag.add_edge(a, b, 9.0, 2) is not None
        assert dag.add_edge(a, b, 9.0, 2) is None
        assert dag.edges_count == 1

    def test_recent_upstream_order_and_limit(self):
        dag = LedgerDag()
        ids = {}
        for step in range(1, 6):
            for agent in (0, 1):
                eid, _ = dag.commit(self._event(step, agent))
                ids[(step, agent)] = eid
        got = dag.recent_upstream([0, 1], before_step=5, limit=3)
        # Newest first (step desc), ties broken by lower agent index.
        assert [(ev.step, ev.agent) for _, ev in got] == [(4, 0), (4, 1), (3, 0)]

    def test_recent_upstream_respects_horizon(self):
        dag = LedgerDag(horizon=10)
        old, _ = dag.commit(self._event(1, 0))
        new, _ = dag.commit(self._event(95, 0))
        got = dag.recent_upstream([0], before_step=100, limit=8)
        assert [eid for eid, _ in got] == [new]

    def test_seal_snapshot_schedule(self):
        dag = LedgerDag()
        with pytest.raises(ValueError):
            dag.seal_snapshot(100)
        with pytest.raises(ValueError):
            dag.seal_snapshot(0)
        snap = dag.seal_snapshot(256)
        assert snap.root == dag.merkle.empty_root
        assert snap.leaf_count == 0

    def test_snapshot_unchanged_without_inserts(self):
        dag = LedgerDag()
        dag.commit(self._event(10, 0))
        s1 = dag.seal_snapshot(256)
        s2 = dag.seal_snapshot(512)
        assert s1.root == s2.root
        assert s1.leaf_count == s2.leaf_count == 1
        with pytest.raises(ValueError):
            dag.seal_snapshot(512)

    def test_snapshot_leaf_count_tracks_inserts(self):
        dag = LedgerDag()
        for step in range(1, 8):
            dag.commit(self._event(step, 0))
        snap = dag.seal_snapshot(256)
        assert snap.leaf_count == 7


class TestResourceAccounting:
    def test_reference_constants(self):
        acct = account_resources(100, 8, 8)
        assert acct.bytes_per_step == 4000 + 2048 == 6048

    def test_zero_agents_keeps_edge_budget(self):
        acct = account_resources(0, 8, 8)
        assert acct.bytes_per_step == 32 * 64 == 2048

    def test_total_scales_with_steps(self):
        acct = account_resources(100, 8, 8, steps=10**6)
        assert acct.total_bytes == 6048 * 10**6

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            account_resources(-1, 8, 8)

    def test_live_account(self):
        live = LiveResourceAccount()
        assert live.record_step(10, 3) == 40 * 10 + 32 * 3
        live.record_step(0, 0)
        assert live.steps == 2
        assert live.max_bytes_per_step == 496
        assert live.mean_bytes_per_step == (496 + 0) / 2
        assert live.bytes_history == [496, 0]


class TestDeterminism:
    def test_ledger_rebuild_bit_identical(self):
        def build():
            dag = LedgerDag()
            for step in range(1, 40):
                ev = make_event(step, step % 3, b"o" * step, b"a", step * 0.5)
                dag.commit(ev)
            return dag

        a, b = build(), build()
        assert a.merkle.root() == b.merkle.root()
        assert a.commit_order == b.commit_order
