"""Pluggable content hashing for audit records and tree nodes."""
from __future__ import annotations

import hashlib

# Wire identifiers used in the snapshot export header.
ALGORITHM_IDS = {"blake2b": 1, "sha256": 2}
_ALGORITHMS_BY_ID = {v: k for k, v in ALGORITHM_IDS.items()}


class HashConfig:
    """A named collision-resistant hash bound to the digest widths used here.

    Record fields carry 16-byte digests, tree nodes 32-byte digests, and
    record identifiers are the first 8 digest bytes read as an unsigned
    little-endian integer.  The algorithm name travels with exported
    snapshots so imports can verify roots with the same primitive.
    """

    __slots__ = ("algorithm", "wire_id", "digest32")

    def __init__(self, algorithm: str = "blake2b") -> None:
        if algorithm not in ALGORITHM_IDS:
            raise ValueError(f"unknown hash algorithm: {algorithm!r}")
        self.algorithm = algorithm
        self.wire_id = ALGORITHM_IDS[algorithm]
        if algorithm == "blake2b":
            def _digest(data: bytes) -> bytes:
                return hashlib.blake2b(data, digest_size=32).digest()
        else:
            def _digest(data: bytes) -> bytes:
                return hashlib.sha256(data).digest()
        self.digest32 = _digest

    def digest16(self, data: bytes) -> bytes:
        return self.digest32(data)[:16]

    def id64(self, data: bytes) -> int:
        return int.from_bytes(self.digest32(data)[:8], "little")

    def __repr__(self) -> str:
        return f"HashConfig({self.algorithm!r})"


def from_wire_id(wire_id: int) -> HashConfig:
    try:
        return HashConfig(_ALGORITHMS_BY_ID[wire_id])
    except KeyError:
        raise ValueError(f"unknown hash algorithm id: {wire_id}") from None


DEFAULT_HASH = HashConfig()
