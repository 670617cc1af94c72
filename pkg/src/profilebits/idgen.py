"""Consecutive id generator: stable external-id to numeric-id mapping.

External string ids are hashed into fixed partitions; each partition owns a
contiguous numeric range and allocates offsets from a per-partition counter.
Day N's assignment starts from day N-1's snapshot, so an id that ever received
a number keeps it forever. Snapshots are sealed after assignment and safe to
share between readers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable

from .errors import (
    CapacityOverflowError,
    CorruptionError,
    PartitionExhaustedError,
    PlanMismatchError,
)
from .hashing import ID_HASH_SEED, hash_external_id
from .ioutil import atomic_write_bytes

ADDRESS_SPACE = 2**33  # numeric ids the two-segment bitmap pair can hold

_MAGIC = b"BUPS"
_VERSION = 1
_HEADER = struct.Struct("<4sHIIQQQ")  # magic, version, day, partitions, capacity, seed, records
_RECORD_ID = struct.Struct("<Q")
_LEN = struct.Struct("<H")


def partition_count_for(expected_id_count: int, target_per_partition: int) -> int:
    """Ceiling split of the expected id volume into partitions."""
    if expected_id_count <= 0 or target_per_partition <= 0:
        raise ValueError("expected_id_count and target_per_partition must be positive")
    return -(-expected_id_count // target_per_partition)


@dataclass(frozen=True)
class PartitionPlan:
    """Disjoint, contiguous numeric-id ranges, one per partition."""

    partition_count: int
    per_partition_capacity: int

    def __post_init__(self) -> None:
        if self.partition_count <= 0 or self.per_partition_capacity <= 0:
            raise ValueError("plan dimensions must be positive")
        if self.partition_count * self.per_partition_capacity > ADDRESS_SPACE:
            raise CapacityOverflowError(
                f"{self.partition_count} partitions x {self.per_partition_capacity} ids "
                f"= {self.partition_count * self.per_partition_capacity} exceeds the "
                f"2**33 addressable id space"
            )

    def base(self, partition: int) -> int:
        return partition * self.per_partition_capacity

    @property
    def total_capacity(self) -> int:
        return self.partition_count * self.per_partition_capacity


def plan_partitions(
    expected_id_count: int, target_per_partition: int, headroom: int = 2
) -> PartitionPlan:
    """Size a plan for an expected id volume.

    Each partition gets ``headroom`` times the target so hash skew and growth
    do not exhaust it immediately. Raises CapacityOverflowError when the total
    would not fit the addressable space.
    """
    count = partition_count_for(expected_id_count, target_per_partition)
    return PartitionPlan(count, headroom * target_per_partition)


@dataclass
class IdSnapshot:
    """One day's sealed external-id to numeric-id mapping plus allocator state."""

    day: date
    plan: PartitionPlan
    hash_seed: int
    records: dict[str, int]
    next_offsets: list[int]
    _reverse: dict[int, str] | None = field(default=None, repr=False, compare=False)

    @classmethod
    def empty(
        cls,
        plan: PartitionPlan,
        day: date,
        hash_seed: int = ID_HASH_SEED,
        initial_offsets: dict[int, int] | None = None,
    ) -> "IdSnapshot":
        """Fresh snapshot with no records; offsets may be pre-seeded."""
        offsets = [0] * plan.partition_count
        for partition, offset in (initial_offsets or {}).items():
            if not 0 <= partition < plan.partition_count:
                raise ValueError(f"partition {partition} outside plan")
            if not 0 <= offset <= plan.per_partition_capacity:
                raise ValueError(f"offset {offset} outside partition capacity")
            offsets[partition] = offset
        return cls(day=day, plan=plan, hash_seed=hash_seed, records={}, next_offsets=offsets)

    # -- lookups ----------------------------------------------------------

    def lookup(self, external_id: str) -> int | None:
        return self.records.get(external_id)

    def reverse_lookup(self, numeric_id: int) -> str | None:
        if self._reverse is None:
            self._reverse = {n: e for e, n in self.records.items()}
        return self._reverse.get(numeric_id)

    def partition_of(self, external_id: str) -> int:
        return hash_external_id(external_id, self.hash_seed) % self.plan.partition_count

    def __len__(self) -> int:
        return len(self.records)

    # -- allocation ----------------------------------------------------------

    def allocate(self, partition: int) -> int:
        """Next numeric id in a partition; advances the partition counter."""
        if not 0 <= partition < self.plan.partition_count:
            raise ValueError(f"partition {partition} outside plan")
        offset = self.next_offsets[partition]
        if offset >= self.plan.per_partition_capacity:
            raise PartitionExhaustedError(
                f"partition {partition} exhausted at {offset} of "
                f"{self.plan.per_partition_capacity} ids"
            )
        self.next_offsets[partition] = offset + 1
        return self.plan.base(partition) + offset

    # -- persistence ----------------------------------------------------------

    def save(self, path: Path) -> None:
        parts = [
            _HEADER.pack(
                _MAGIC,
                _VERSION,
                self.day.toordinal(),
                self.plan.partition_count,
                self.plan.per_partition_capacity,
                self.hash_seed,
                len(self.records),
            )
        ]
        for external, numeric in sorted(
            ((e.encode("utf-8"), n) for e, n in self.records.items())
        ):
            parts.append(_LEN.pack(len(external)))
            parts.append(external)
            parts.append(_RECORD_ID.pack(numeric))
        for offset in self.next_offsets:
            parts.append(_RECORD_ID.pack(offset))
        atomic_write_bytes(Path(path), b"".join(parts))

    @classmethod
    def load(cls, path: Path) -> "IdSnapshot":
        data = Path(path).read_bytes()
        if len(data) < _HEADER.size:
            raise CorruptionError(f"{path}: truncated snapshot header")
        magic, version, day_ord, partitions, capacity, seed, n_records = _HEADER.unpack_from(
            data, 0
        )
        if magic != _MAGIC:
            raise CorruptionError(f"{path}: bad snapshot magic {magic!r}")
        if version != _VERSION:
            raise CorruptionError(f"{path}: unsupported snapshot version {version}")
        pos = _HEADER.size
        records: dict[str, int] = {}
        for _ in range(n_records):
            if pos + _LEN.size > len(data):
                raise CorruptionError(f"{path}: truncated snapshot record")
            (length,) = _LEN.unpack_from(data, pos)
            pos += _LEN.size
            end = pos + length + _RECORD_ID.size
            if end > len(data):
                raise CorruptionError(f"{path}: truncated snapshot record")
            external = data[pos : pos + length].decode("utf-8")
            (numeric,) = _RECORD_ID.unpack_from(data, pos + length)
            records[external] = numeric
            pos = end
        table_end = pos + partitions * _RECORD_ID.size
        if table_end != len(data):
            raise CorruptionError(f"{path}: snapshot allocator table has wrong size")
        offsets = [
            _RECORD_ID.unpack_from(data, pos + i * _RECORD_ID.size)[0] for i in range(partitions)
        ]
        return cls(
            day=date.fromordinal(day_ord),
            plan=PartitionPlan(partitions, capacity),
            hash_seed=seed,
            records=records,
            next_offsets=offsets,
        )


def next_id(snapshot: IdSnapshot, partition: int) -> int:
    """Allocate the next numeric id from one partition of a snapshot."""
    return snapshot.allocate(partition)


def assign_day(
    previous: IdSnapshot | None,
    todays_ids: Iterable[str],
    *,
    day: date,
    plan: PartitionPlan | None = None,
    hash_seed: int | None = None,
) -> IdSnapshot:
    """Produce the day's snapshot: keep every known id, allocate the new ones.

    New ids are deduplicated, sorted by their UTF-8 bytes, and allocated per
    hash partition, so identical inputs always yield identical snapshots.
    Ids from earlier days are never recycled, even if absent today.
    """
    if previous is None:
        if plan is None:
            raise ValueError("a fresh assignment needs a partition plan")
        snapshot = IdSnapshot.empty(plan, day, hash_seed if hash_seed is not None else ID_HASH_SEED)
    else:
        if plan is not None and plan != previous.plan:
            raise PlanMismatchError(
                f"previous snapshot used plan {previous.plan}, got {plan}"
            )
        if hash_seed is not None and hash_seed != previous.hash_seed:
            raise PlanMismatchError(
                f"previous snapshot used hash seed {previous.hash_seed:#x}, got {hash_seed:#x}"
            )
        snapshot = IdSnapshot(
            day=day,
            plan=previous.plan,
            hash_seed=previous.hash_seed,
            records=dict(previous.records),
            next_offsets=list(previous.next_offsets),
        )
    fresh = {e for e in todays_ids if e not in snapshot.records}
    for external in sorted(fresh, key=lambda e: e.encode("utf-8")):
        snapshot.records[external] = snapshot.allocate(snapshot.partition_of(external))
    return snapshot
