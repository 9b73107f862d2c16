import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from normtrace.hashing import DEFAULT_HASH, HashConfig
from normtrace.merkle import (
    EMPTY_TAG,
    LEAF_TAG,
    MerkleLog,
    export_snapshot_bytes,
    export_snapshot_file,
    import_snapshot_bytes,
    import_snapshot_file,
    verify_inclusion,
)


def _digest(i: int) -> bytes:
    return i.to_bytes(16, "little")


class TestRoots:
    def test_empty_root_is_tagged_hash(self):
        log = MerkleLog()
        assert log.root() == DEFAULT_HASH.digest32(EMPTY_TAG)

    def test_single_leaf_root(self):
        log = MerkleLog()
        d = _digest(7)
        assert log.insert(d)
        assert log.root() == DEFAULT_HASH.digest32(LEAF_TAG + d)

    def test_root_changes_with_each_new_leaf(self):
        log = MerkleLog()
        seen = {log.root()}
        for i in range(64):
            log.insert(_digest(i))
            root = log.root()
            assert root not in seen
            seen.add(root)

    def test_duplicate_insert_is_noop(self):
        log = MerkleLog()
        log.insert(_digest(1))
        root_before = log.root()
        inserted = log.insert(_digest(1))
        assert not inserted
        assert log.root() == root_before
        assert log.leaf_count == 1

    def test_rejects_wrong_width(self):
        with pytest.raises(ValueError):
            MerkleLog().insert(b"short")


class TestInclusionProofs:
    def test_round_trip(self):
        log = MerkleLog()
        d = _digest(3)
        log.insert(d)
        proof = log.prove(d)
        assert verify_inclusion(log.root(), proof, d)

    def test_thousand_leaves_all_verify_with_log_length_proofs(self):
        log = MerkleLog()
        rng = np.random.default_rng(42)
        digests = [bytes(rng.integers(0, 256, 16, dtype=np.uint8)) for _ in range(1000)]
        for d in digests:
            log.insert(d)
        root = log.root()
        limit = math.ceil(math.log2(1000)) + 1
        for d in digests:
            proof = log.prove(d)
            assert len(proof.siblings) <= limit
            assert verify_inclusion(root, proof, d)

    def test_bit_flip_fails(self):
        log = MerkleLog()
        d = _digest(9)
        log.insert(d)
        proof = log.prove(d)
        tampered = bytes([d[0] ^ 0x01]) + d[1:]
        assert not verify_inclusion(log.root(), proof, tampered)

    def test_proof_against_earlier_root_fails(self):
        log = MerkleLog()
        for i in range(10):
            log.insert(_digest(i))
        earlier_root = log.root()
        late = _digest(99)
        log.insert(late)
        proof = log.prove(late)
        assert verify_inclusion(log.root(), proof, late)
        assert not verify_inclusion(earlier_root, proof, late)

    def test_prove_absent_digest_raises(self):
        log = MerkleLog()
        log.insert(_digest(0))
        with pytest.raises(KeyError):
            log.prove(_digest(1))

    def test_prove_before_insertion_point_raises(self):
        log = MerkleLog()
        log.insert(_digest(0))
        log.insert(_digest(1))
        with pytest.raises(ValueError):
            log.prove(_digest(1), tree_size=1)

    def test_historical_roots_remain_verifiable(self):
        log = MerkleLog()
        digests = [_digest(i) for i in range(33)]
        roots = []
        for d in digests:
            log.insert(d)
            roots.append(log.root())
        # Every committed digest verifies against every root sealed at or
        # after its insertion (append-only ledger contract).
        for i, d in enumerate(digests):
            for size in range(i + 1, len(digests) + 1):
                proof = log.prove(d, tree_size=size)
                assert verify_inclusion(roots[size - 1], proof, d)
        # A proof is pinned to its tree size: it fails against other roots.
        proof = log.prove(digests[0], tree_size=20)
        assert not verify_inclusion(roots[9], proof, digests[0])

    def test_never_inserted_digest_never_accepted(self):
        log = MerkleLog()
        rng = np.random.default_rng(7)
        for i in range(64):
            log.insert(_digest(i))
        root = log.root()
        template = log.prove(_digest(17))
        accepted = 0
        for _ in range(10_000):
            fake = bytes(rng.integers(0, 256, 16, dtype=np.uint8))
            if fake in log:
                continue
            if verify_inclusion(root, template, fake):
                accepted += 1
        assert accepted == 0

    @given(st.lists(st.integers(0, 2**60), min_size=1, max_size=40, unique=True))
    @settings(max_examples=50, deadline=None)
    def test_all_proofs_verify_property(self, values):
        log = MerkleLog()
        for v in values:
            log.insert(_digest(v))
        root = log.root()
        for v in values:
            proof = log.prove(_digest(v))
            assert verify_inclusion(root, proof, _digest(v))


class TestAppendOnly:
    def test_leaf_sets_nested_across_snapshots(self):
        log = MerkleLog()
        for i in range(20):
            log.insert(_digest(i))
        early = [log.digest_at(k) for k in range(10)]
        for i in range(20, 30):
            log.insert(_digest(i))
        later = [log.digest_at(k) for k in range(log.leaf_count)]
        assert set(early) <= set(later)


class TestSnapshotExport:
    def test_round_trip_bytes(self):
        log = MerkleLog()
        for i in range(17):
            log.insert(_digest(i))
        data = export_snapshot_bytes(log)
        assert data[:4] == b"AAFL"
        rebuilt = import_snapshot_bytes(data)
        assert rebuilt.root() == log.root()
        assert rebuilt.leaf_count == log.leaf_count

    def test_round_trip_file(self, tmp_path):
        log = MerkleLog(HashConfig("sha256"))
        for i in range(5):
            log.insert(_digest(i))
        path = tmp_path / "snap.bin"
        export_snapshot_file(log, path)
        rebuilt = import_snapshot_file(path)
        assert rebuilt.hash_config.algorithm == "sha256"
        assert rebuilt.root() == log.root()

    def test_tampered_root_rejected(self):
        log = MerkleLog()
        log.insert(_digest(1))
        data = bytearray(export_snapshot_bytes(log))
        data[-1] ^= 0xFF
        with pytest.raises(ValueError, match="root mismatch"):
            import_snapshot_bytes(bytes(data))

    def test_tampered_leaf_rejected(self):
        log = MerkleLog()
        log.insert(_digest(1))
        log.insert(_digest(2))
        data = bytearray(export_snapshot_bytes(log))
        data[10] ^= 0x01  # inside the first digest
        with pytest.raises(ValueError):
            import_snapshot_bytes(bytes(data))

    def test_bad_magic_rejected(self):
        log = MerkleLog()
        data = bytearray(export_snapshot_bytes(log))
        data[0] = 0x00
        with pytest.raises(ValueError, match="magic"):
            import_snapshot_bytes(bytes(data))
