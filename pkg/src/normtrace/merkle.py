"""Append-only Merkle tree over committed record digests.

The tree is the canonical balanced binary tree over leaves in insertion
order: the subtree over n > 1 leaves splits at the largest power of two
strictly below n.  Shape is a pure function of the insertion sequence, so
roots are reproducible, inclusion proofs carry at most ceil(log2 n)
sibling hashes, and any historical root stays verifiable against its own
leaf count.  Leaf and internal nodes are domain-separated by tag bytes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

from .hashing import DEFAULT_HASH, HashConfig, from_wire_id

LEAF_TAG = b"\x00"
NODE_TAG = b"\x01"
EMPTY_TAG = b"\x02"

SNAPSHOT_MAGIC = b"AAFL"
SNAPSHOT_VERSION = 1

_HEADER = struct.Struct("<4sHH")
_LEN_PREFIX = struct.Struct("<H")


@dataclass(frozen=True)
class InclusionProof:
    """Sibling path for one leaf against the root over ``tree_size`` leaves."""

    leaf_index: int
    tree_size: int
    siblings: tuple[bytes, ...]


def _split(n: int) -> int:
    # Largest power of two strictly below n, for n >= 2.
    return 1 << (n - 1).bit_length() - 1


class MerkleLog:
    """Deduplicating, append-only log of 16-byte digests with Merkle roots."""

    def __init__(self, hash_config: HashConfig | None = None) -> None:
        self.hash_config = hash_config or DEFAULT_HASH
        self._digests: list[bytes] = []
        self._leaves: list[bytes] = []
        self._index: dict[bytes, int] = {}
        self._peaks: list[tuple[int, bytes]] = []
        self.empty_root = self.hash_config.digest32(EMPTY_TAG)

    def __len__(self) -> int:
        return len(self._leaves)

    def __contains__(self, digest: bytes) -> bool:
        return digest in self._index

    @property
    def leaf_count(self) -> int:
        return len(self._leaves)

    def digest_at(self, index: int) -> bytes:
        return self._digests[index]

    def index_of(self, digest: bytes) -> int:
        return self._index[digest]

    def _leaf_hash(self, digest: bytes) -> bytes:
        return self.hash_config.digest32(LEAF_TAG + digest)

    def _node_hash(self, left: bytes, right: bytes) -> bytes:
        return self.hash_config.digest32(NODE_TAG + left + right)

    def insert(self, digest: bytes) -> bool:
        """Append a digest; returns False (no state change) when the digest
        was already present, so redelivered gossip cannot corrupt the log.

        The new root is available from ``root()``, computed on demand.
        """
        if len(digest) != 16:
            raise ValueError("digest must be exactly 16 bytes")
        if digest in self._index:
            return False
        self._index[digest] = len(self._leaves)
        self._digests.append(digest)
        leaf = self._leaf_hash(digest)
        self._leaves.append(leaf)
        # Binary-counter merge keeps perfect subtrees as peaks; amortized
        # O(1) hashing per append.
        height = 0
        node = leaf
        while self._peaks and self._peaks[-1][0] == height:
            _, left = self._peaks.pop()
            node = self._node_hash(left, node)
            height += 1
        self._peaks.append((height, node))
        return True

    def root(self, size: int | None = None) -> bytes:
        """Root over the first ``size`` leaves (default: all)."""
        n = len(self._leaves)
        if size is None:
            size = n
        if size < 0 or size > n:
            raise ValueError(f"size {size} out of range 0..{n}")
        if size == 0:
            return self.empty_root
        if size == n:
            acc = self._peaks[-1][1]
            for _, h in reversed(self._peaks[:-1]):
                acc = self._node_hash(h, acc)
            return acc
        return self._subtree(0, size)

    def _subtree(self, lo: int, hi: int) -> bytes:
        if hi - lo == 1:
            return self._leaves[lo]
        k = _split(hi - lo)
        return self._node_hash(self._subtree(lo, lo + k), self._subtree(lo + k, hi))

    def prove(self, digest: bytes, tree_size: int | None = None) -> InclusionProof:
        """Inclusion proof for a committed digest against a (historical) root.

        Raises KeyError for digests never inserted and ValueError when the
        digest postdates the requested tree size.
        """
        if digest not in self._index:
            raise KeyError("digest not present in the log")
        index = self._index[digest]
        if tree_size is None:
            tree_size = len(self._leaves)
        if not 0 < tree_size <= len(self._leaves):
            raise ValueError(f"tree size {tree_size} out of range")
        if index >= tree_size:
            raise ValueError("digest was inserted after the requested root")
        return InclusionProof(index, tree_size, tuple(self._path(index, 0, tree_size)))

    def _path(self, index: int, lo: int, hi: int) -> list[bytes]:
        if hi - lo == 1:
            return []
        k = _split(hi - lo)
        if index - lo < k:
            return self._path(index, lo, lo + k) + [self._subtree(lo + k, hi)]
        return self._path(index, lo + k, hi) + [self._subtree(lo, lo + k)]


def verify_inclusion(
    root: bytes,
    proof: InclusionProof,
    digest: bytes,
    hash_config: HashConfig | None = None,
) -> bool:
    """True iff ``digest`` is proven under ``root``; never raises."""
    cfg = hash_config or DEFAULT_HASH
    try:
        if len(digest) != 16 or proof.tree_size < 1:
            return False
        if not 0 <= proof.leaf_index < proof.tree_size:
            return False
        leaf = cfg.digest32(LEAF_TAG + digest)
        computed = _root_from_path(
            leaf, proof.leaf_index, proof.tree_size, list(proof.siblings), cfg
        )
    except Exception:
        return False
    return computed == root


def _root_from_path(
    leaf: bytes, index: int, size: int, siblings: list[bytes], cfg: HashConfig
) -> bytes:
    if size == 1:
        if siblings:
            raise ValueError("excess siblings")
        return leaf
    if not siblings:
        raise ValueError("missing siblings")
    k = _split(size)
    sib = siblings[-1]
    rest = siblings[:-1]
    if index < k:
        sub = _root_from_path(leaf, index, k, rest, cfg)
        return cfg.digest32(NODE_TAG + sub + sib)
    sub = _root_from_path(leaf, index - k, size - k, rest, cfg)
    return cfg.digest32(NODE_TAG + sib + sub)


def export_snapshot_bytes(log: MerkleLog) -> bytes:
    """Serialize the log: header, length-prefixed digests in insertion
    order, then the 32-byte root."""
    parts = [_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, log.hash_config.wire_id)]
    for i in range(len(log)):
        d = log.digest_at(i)
        parts.append(_LEN_PREFIX.pack(len(d)))
        parts.append(d)
    parts.append(log.root())
    return b"".join(parts)


def import_snapshot_bytes(data: bytes) -> MerkleLog:
    """Rebuild a log from exported bytes; fails unless the recomputed root
    matches the stored one bit for bit."""
    if len(data) < _HEADER.size + 32:
        raise ValueError("snapshot file truncated")
    magic, version, wire_id = _HEADER.unpack_from(data, 0)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"bad magic: {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version: {version}")
    cfg = from_wire_id(wire_id)
    log = MerkleLog(cfg)
    pos = _HEADER.size
    end = len(data) - 32
    while pos < end:
        if pos + _LEN_PREFIX.size > end:
            raise ValueError("snapshot file corrupt: dangling length prefix")
        (n,) = _LEN_PREFIX.unpack_from(data, pos)
        pos += _LEN_PREFIX.size
        if pos + n > end:
            raise ValueError("snapshot file corrupt: digest overruns root")
        log.insert(data[pos : pos + n])
        pos += n
    stored_root = data[end:]
    if log.root() != stored_root:
        raise ValueError("snapshot root mismatch after rebuild")
    return log


def export_snapshot_file(log: MerkleLog, path) -> None:
    with open(path, "wb") as fh:
        fh.write(export_snapshot_bytes(log))


def import_snapshot_file(path) -> MerkleLog:
    with open(path, "rb") as fh:
        return import_snapshot_bytes(fh.read())
