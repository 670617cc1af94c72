"""Seeded 64-bit hashes used for partition and tablet placement.

Both hashes are fixed and deterministic across runs and platforms; the string
seed is persisted in snapshot headers and the uid seed in tablet manifests so
a store can always be re-read with the seeds it was built with.
"""

from __future__ import annotations

import numpy as np
import xxhash

# Default seeds. Distinct so external-id partitioning and uid tablet
# placement are statistically independent.
ID_HASH_SEED = 0x42495455_50494453  # string ids -> allocator partition
TABLET_HASH_SEED = 0x42495455_5054424C  # numeric uids -> tablet index


def hash_external_id(external_id: str, seed: int = ID_HASH_SEED) -> int:
    """xxh64 of the UTF-8 bytes of an external id."""
    return xxhash.xxh64_intdigest(external_id.encode("utf-8"), seed & 0xFFFFFFFFFFFFFFFF)


def partition_of(external_id: str, partition_count: int, seed: int = ID_HASH_SEED) -> int:
    return hash_external_id(external_id, seed) % partition_count


_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)


def mix_uids(uids: np.ndarray, seed: int = TABLET_HASH_SEED) -> np.ndarray:
    """Vectorized splitmix64 finalizer over a uint64 uid array."""
    z = uids.astype(np.uint64, copy=True)
    z ^= np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    z += _GAMMA
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def tablet_of(uids: np.ndarray | int, tablet_count: int, seed: int = TABLET_HASH_SEED) -> np.ndarray | int:
    """Tablet index for one uid or a uid array."""
    if isinstance(uids, (int, np.integer)):
        return int(tablet_of(np.asarray([uids], dtype=np.uint64), tablet_count, seed)[0])
    return (mix_uids(uids, seed) % np.uint64(tablet_count)).astype(np.uint64)
