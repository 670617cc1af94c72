"""Two-segment bitmap pair covering numeric uids in [0, 2**33).

A plain 32-bit bitmap cannot address more than 2**32 users, and a 64-bit set
costs too much to store and scan. Instead each (label, value) keeps two 32-bit
bitmaps: ``low`` holds uids below 2**32 as-is, ``high`` holds uids in
[2**32, 2**33) shifted down by 2**32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bitmap import CompressedBitmap
from .errors import UidOutOfRangeError

SEGMENT_SPLIT = 2**32
UID_SPACE = 2**33

SEGMENT_LOW = "low"
SEGMENT_HIGH = "high"


def split_uid(uid: int) -> tuple[str, int]:
    """Map a numeric uid to its (segment, 32-bit offset) coordinate."""
    if not 0 <= uid < UID_SPACE:
        raise UidOutOfRangeError(f"uid {uid} outside [0, 2**33)")
    if uid < SEGMENT_SPLIT:
        return SEGMENT_LOW, uid
    return SEGMENT_HIGH, uid - SEGMENT_SPLIT


@dataclass
class BitmapPair:
    """Low/high segment bitmaps jointly addressing [0, 2**33)."""

    low: CompressedBitmap = field(default_factory=CompressedBitmap)
    high: CompressedBitmap = field(default_factory=CompressedBitmap)

    @classmethod
    def from_uids(cls, uids: np.ndarray) -> "BitmapPair":
        """Build from a uint64 uid array (need not be sorted or unique)."""
        arr = np.asarray(uids, dtype=np.uint64)
        if arr.size and int(arr.max()) >= UID_SPACE:
            raise UidOutOfRangeError(f"uid {int(arr.max())} outside [0, 2**33)")
        arr = np.sort(arr)
        cut = int(np.searchsorted(arr, SEGMENT_SPLIT))
        low = arr[:cut].astype(np.uint32)
        high = (arr[cut:] - np.uint64(SEGMENT_SPLIT)).astype(np.uint32)
        return cls(CompressedBitmap(low), CompressedBitmap(high))

    def add(self, uid: int) -> None:
        segment, offset = split_uid(uid)
        (self.low if segment == SEGMENT_LOW else self.high).add(offset)

    def contains(self, uid: int) -> bool:
        segment, offset = split_uid(uid)
        return offset in (self.low if segment == SEGMENT_LOW else self.high)

    @property
    def cardinality(self) -> int:
        return len(self.low) + len(self.high)

    def __len__(self) -> int:
        return self.cardinality

    def __bool__(self) -> bool:
        return self.cardinality > 0

    def to_uids(self) -> np.ndarray:
        """All logical members as an ascending uint64 array."""
        return np.concatenate(
            [
                self.low.to_array().astype(np.uint64),
                self.high.to_array().astype(np.uint64) + np.uint64(SEGMENT_SPLIT),
            ]
        )

    # Segment-wise algebra: the two segments partition the uid space, so each
    # set operation distributes over them independently.

    def __and__(self, other: "BitmapPair") -> "BitmapPair":
        return BitmapPair(self.low & other.low, self.high & other.high)

    def __or__(self, other: "BitmapPair") -> "BitmapPair":
        return BitmapPair(self.low | other.low, self.high | other.high)

    def __xor__(self, other: "BitmapPair") -> "BitmapPair":
        return BitmapPair(self.low ^ other.low, self.high ^ other.high)

    def __sub__(self, other: "BitmapPair") -> "BitmapPair":
        return BitmapPair(self.low - other.low, self.high - other.high)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitmapPair):
            return NotImplemented
        return self.low == other.low and self.high == other.high

    __hash__ = None  # type: ignore[assignment]

    def copy(self) -> "BitmapPair":
        return BitmapPair(self.low.copy(), self.high.copy())

    def __repr__(self) -> str:
        return f"BitmapPair(low={len(self.low)}, high={len(self.high)})"
