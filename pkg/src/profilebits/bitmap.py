"""Compressed bitmap over 32-bit unsigned offsets.

The value space is split into 2**16 chunks keyed by the high 16 bits. Each
non-empty chunk holds one container: a sorted uint16 array while the chunk has
at most ``ARRAY_CONTAINER_MAX`` members, and a packed 8 KiB bitset once it has
more. Containers never stay empty and the total cardinality is cached, so
counting is O(1).

A bitmap is safe for any number of concurrent readers; mutation requires
exclusive access and is the caller's job to synchronize.
"""

from __future__ import annotations

import struct
from bisect import bisect_left
from collections.abc import Iterable, Iterator

import numpy as np

from .errors import CorruptionError

ARRAY_CONTAINER_MAX = 4096  # members; one more converts the chunk to a bitset
BITSET_WORDS = 1024  # 1024 * 64 bits = 65536 bits = 8 KiB
MAX_OFFSET = 2**32 - 1

_MAGIC = b"CBM1"
_KIND_ARRAY = 0
_KIND_BITSET = 1
_HEADER = struct.Struct("<4sI")
_CONT_HEADER = struct.Struct("<HBI")
_ONE = np.uint64(1)
_SIX3 = np.uint64(63)


def _is_array(container: np.ndarray) -> bool:
    return container.dtype == np.uint16


def _array_to_bitset(values: np.ndarray) -> np.ndarray:
    words = np.zeros(BITSET_WORDS, dtype=np.uint64)
    np.bitwise_or.at(words, values >> 6, _ONE << (values.astype(np.uint64) & _SIX3))
    return words


def _bitset_to_array(words: np.ndarray) -> np.ndarray:
    bits = np.unpackbits(words.view(np.uint8), bitorder="little")
    return np.flatnonzero(bits).astype(np.uint16)


def _bitset_cardinality(words: np.ndarray) -> int:
    return int(np.bitwise_count(words).sum())


def _member_mask(words: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Boolean membership of uint16 ``values`` in a bitset container."""
    return ((words[values >> 6] >> (values.astype(np.uint64) & _SIX3)) & _ONE).astype(bool)


def _mask_words(values: np.ndarray) -> np.ndarray:
    """Bitset words with exactly ``values`` set (values unique uint16)."""
    return _array_to_bitset(values)


def _normalize(container: np.ndarray) -> tuple[np.ndarray, int]:
    """Enforce the container-type threshold; returns (container, cardinality)."""
    if _is_array(container):
        if container.size > ARRAY_CONTAINER_MAX:
            return _array_to_bitset(container), int(container.size)
        return container, int(container.size)
    card = _bitset_cardinality(container)
    if card <= ARRAY_CONTAINER_MAX:
        return _bitset_to_array(container), card
    return container, card


def _container_and(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a_arr, b_arr = _is_array(a), _is_array(b)
    if a_arr and b_arr:
        return np.intersect1d(a, b, assume_unique=True).astype(np.uint16)
    if a_arr:
        return a[_member_mask(b, a)]
    if b_arr:
        return b[_member_mask(a, b)]
    return a & b


def _container_or(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a_arr, b_arr = _is_array(a), _is_array(b)
    if a_arr and b_arr:
        return np.union1d(a, b).astype(np.uint16)
    if a_arr:
        return b | _mask_words(a)
    if b_arr:
        return a | _mask_words(b)
    return a | b


def _container_xor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a_arr, b_arr = _is_array(a), _is_array(b)
    if a_arr and b_arr:
        return np.setxor1d(a, b, assume_unique=True).astype(np.uint16)
    if a_arr:
        return b ^ _mask_words(a)
    if b_arr:
        return a ^ _mask_words(b)
    return a ^ b


def _container_andnot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a_arr, b_arr = _is_array(a), _is_array(b)
    if a_arr and b_arr:
        return np.setdiff1d(a, b, assume_unique=True).astype(np.uint16)
    if a_arr:
        return a[~_member_mask(b, a)]
    if b_arr:
        return a & ~_mask_words(b)
    return a & ~b


class CompressedBitmap:
    """A set of uint32 offsets stored in chunked, type-adaptive containers."""

    __slots__ = ("_keys", "_containers", "_cards", "_card")

    def __init__(self, values: Iterable[int] | np.ndarray | None = None) -> None:
        self._keys: list[int] = []
        self._containers: list[np.ndarray] = []
        self._cards: list[int] = []
        self._card = 0
        if values is not None:
            self._bulk_insert(values)

    # -- construction ------------------------------------------------------

    @classmethod
    def from_values(cls, values: Iterable[int] | np.ndarray) -> "CompressedBitmap":
        """Bulk-build from any iterable or array of uint32 values."""
        return cls(values)

    def _bulk_insert(self, values: Iterable[int] | np.ndarray) -> None:
        vals = np.asarray(values if isinstance(values, np.ndarray) else list(values))
        if vals.size == 0:
            return
        if vals.dtype.kind not in "iu":
            raise ValueError(f"offsets must be integers, got dtype {vals.dtype}")
        if vals.min() < 0 or vals.max() > MAX_OFFSET:
            raise ValueError("offsets must lie in [0, 2**32)")
        vals = np.unique(vals.astype(np.uint64)).astype(np.uint32)
        if self._card:
            # Merging into existing content: fold through a union.
            merged = self | CompressedBitmap(vals)
            self._keys = merged._keys
            self._containers = merged._containers
            self._cards = merged._cards
            self._card = merged._card
            return
        chunks = (vals >> 16).astype(np.uint16)
        starts = np.flatnonzero(np.diff(chunks)) + 1
        for seg in np.split(vals, starts):
            lows = (seg & np.uint32(0xFFFF)).astype(np.uint16)
            cont, card = _normalize(lows)
            self._keys.append(int(seg[0] >> 16))
            self._containers.append(cont)
            self._cards.append(card)
            self._card += card

    @classmethod
    def _from_parts(
        cls, keys: list[int], containers: list[np.ndarray], cards: list[int]
    ) -> "CompressedBitmap":
        out = cls()
        out._keys = keys
        out._containers = containers
        out._cards = cards
        out._card = sum(cards)
        return out

    def copy(self) -> "CompressedBitmap":
        return CompressedBitmap._from_parts(
            list(self._keys), [c.copy() for c in self._containers], list(self._cards)
        )

    # -- point operations ----------------------------------------------------

    def add(self, offset: int) -> None:
        """Insert one offset; converts the chunk container past the threshold."""
        if not 0 <= offset <= MAX_OFFSET:
            raise ValueError("offsets must lie in [0, 2**32)")
        key, low = offset >> 16, offset & 0xFFFF
        idx = bisect_left(self._keys, key)
        if idx == len(self._keys) or self._keys[idx] != key:
            self._keys.insert(idx, key)
            self._containers.insert(idx, np.asarray([low], dtype=np.uint16))
            self._cards.insert(idx, 1)
            self._card += 1
            return
        cont = self._containers[idx]
        if _is_array(cont):
            pos = int(np.searchsorted(cont, low))
            if pos < cont.size and cont[pos] == low:
                return
            cont = np.insert(cont, pos, low)
            if cont.size > ARRAY_CONTAINER_MAX:
                cont = _array_to_bitset(cont)
            self._containers[idx] = cont
        else:
            word, bit = low >> 6, np.uint64(1) << np.uint64(low & 63)
            if cont[word] & bit:
                return
            cont[word] |= bit
        self._cards[idx] += 1
        self._card += 1

    def __contains__(self, offset: int) -> bool:
        if not 0 <= offset <= MAX_OFFSET:
            return False
        key, low = offset >> 16, offset & 0xFFFF
        idx = bisect_left(self._keys, key)
        if idx == len(self._keys) or self._keys[idx] != key:
            return False
        cont = self._containers[idx]
        if _is_array(cont):
            pos = int(np.searchsorted(cont, low))
            return pos < cont.size and cont[pos] == low
        return bool((cont[low >> 6] >> np.uint64(low & 63)) & _ONE)

    def __len__(self) -> int:
        return self._card

    @property
    def cardinality(self) -> int:
        return self._card

    def __bool__(self) -> bool:
        return self._card > 0

    # -- iteration -----------------------------------------------------------

    def __iter__(self) -> Iterator[int]:
        """Members in strictly ascending order."""
        for key, cont in zip(self._keys, self._containers):
            base = key << 16
            values = cont if _is_array(cont) else _bitset_to_array(cont)
            for low in values.tolist():
                yield base | low

    def to_array(self) -> np.ndarray:
        """All members as an ascending uint32 array."""
        if not self._keys:
            return np.empty(0, dtype=np.uint32)
        parts = []
        for key, cont in zip(self._keys, self._containers):
            lows = cont if _is_array(cont) else _bitset_to_array(cont)
            parts.append(np.uint32(key << 16) | lows.astype(np.uint32))
        return np.concatenate(parts)

    # -- set algebra -----------------------------------------------------------

    def _combine(self, other: "CompressedBitmap", op: str) -> "CompressedBitmap":
        if not isinstance(other, CompressedBitmap):
            raise TypeError(f"expected CompressedBitmap, got {type(other).__name__}")
        keys: list[int] = []
        conts: list[np.ndarray] = []
        cards: list[int] = []
        fn = {
            "and": _container_and,
            "or": _container_or,
            "xor": _container_xor,
            "andnot": _container_andnot,
        }[op]
        keep_left = op in ("or", "xor", "andnot")
        keep_right = op in ("or", "xor")
        i = j = 0
        a_keys, b_keys = self._keys, other._keys
        while i < len(a_keys) or j < len(b_keys):
            if j == len(b_keys) or (i < len(a_keys) and a_keys[i] < b_keys[j]):
                if keep_left:
                    keys.append(a_keys[i])
                    conts.append(self._containers[i].copy())
                    cards.append(self._cards[i])
                i += 1
            elif i == len(a_keys) or b_keys[j] < a_keys[i]:
                if keep_right:
                    keys.append(b_keys[j])
                    conts.append(other._containers[j].copy())
                    cards.append(other._cards[j])
                j += 1
            else:
                cont, card = _normalize(fn(self._containers[i], other._containers[j]))
                if card:
                    keys.append(a_keys[i])
                    conts.append(cont)
                    cards.append(card)
                i += 1
                j += 1
        return CompressedBitmap._from_parts(keys, conts, cards)

    def __and__(self, other: "CompressedBitmap") -> "CompressedBitmap":
        return self._combine(other, "and")

    def __or__(self, other: "CompressedBitmap") -> "CompressedBitmap":
        return self._combine(other, "or")

    def __xor__(self, other: "CompressedBitmap") -> "CompressedBitmap":
        return self._combine(other, "xor")

    def __sub__(self, other: "CompressedBitmap") -> "CompressedBitmap":
        return self._combine(other, "andnot")

    def and_(self, other: "CompressedBitmap") -> "CompressedBitmap":
        return self & other

    def or_(self, other: "CompressedBitmap") -> "CompressedBitmap":
        return self | other

    def xor(self, other: "CompressedBitmap") -> "CompressedBitmap":
        return self ^ other

    def and_not(self, other: "CompressedBitmap") -> "CompressedBitmap":
        return self - other

    # -- comparison --------------------------------------------------------------

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CompressedBitmap):
            return NotImplemented
        if self._card != other._card or self._keys != other._keys:
            return False
        return all(
            np.array_equal(a, b) for a, b in zip(self._containers, other._containers)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"CompressedBitmap(cardinality={self._card}, chunks={len(self._keys)})"

    # -- serialization ------------------------------------------------------------

    def serialize(self) -> bytes:
        """Canonical byte form: containers in chunk order, little-endian."""
        parts = [_HEADER.pack(_MAGIC, len(self._keys))]
        for key, cont, card in zip(self._keys, self._containers, self._cards):
            if _is_array(cont):
                parts.append(_CONT_HEADER.pack(key, _KIND_ARRAY, card))
                parts.append(cont.astype("<u2", copy=False).tobytes())
            else:
                parts.append(_CONT_HEADER.pack(key, _KIND_BITSET, card))
                parts.append(cont.astype("<u8", copy=False).tobytes())
        return b"".join(parts)

    @classmethod
    def deserialize(cls, data: bytes) -> "CompressedBitmap":
        """Rebuild from ``serialize`` output, validating every invariant."""
        if len(data) < _HEADER.size:
            raise CorruptionError("bitmap blob truncated before header")
        magic, count = _HEADER.unpack_from(data, 0)
        if magic != _MAGIC:
            raise CorruptionError(f"bad bitmap magic {magic!r}")
        pos = _HEADER.size
        keys: list[int] = []
        conts: list[np.ndarray] = []
        cards: list[int] = []
        prev_key = -1
        for _ in range(count):
            if pos + _CONT_HEADER.size > len(data):
                raise CorruptionError("bitmap blob truncated in container header")
            key, kind, card = _CONT_HEADER.unpack_from(data, pos)
            pos += _CONT_HEADER.size
            if key <= prev_key:
                raise CorruptionError("container keys not strictly increasing")
            prev_key = key
            if kind == _KIND_ARRAY:
                if not 1 <= card <= ARRAY_CONTAINER_MAX:
                    raise CorruptionError(f"array container cardinality {card} out of range")
                end = pos + 2 * card
                if end > len(data):
                    raise CorruptionError("bitmap blob truncated in array container")
                cont = np.frombuffer(data, dtype="<u2", count=card, offset=pos).astype(np.uint16)
                if cont.size > 1 and not np.all(cont[1:] > cont[:-1]):
                    raise CorruptionError("array container values not strictly increasing")
                pos = end
            elif kind == _KIND_BITSET:
                if card <= ARRAY_CONTAINER_MAX:
                    raise CorruptionError(f"bitset container cardinality {card} out of range")
                end = pos + 8 * BITSET_WORDS
                if end > len(data):
                    raise CorruptionError("bitmap blob truncated in bitset container")
                cont = np.frombuffer(data, dtype="<u8", count=BITSET_WORDS, offset=pos).astype(
                    np.uint64
                )
                if _bitset_cardinality(cont) != card:
                    raise CorruptionError("bitset popcount disagrees with declared cardinality")
                pos = end
            else:
                raise CorruptionError(f"unknown container kind {kind}")
            keys.append(key)
            conts.append(cont)
            cards.append(card)
        if pos != len(data):
            raise CorruptionError(f"{len(data) - pos} trailing bytes after last container")
        return cls._from_parts(keys, conts, cards)

    # -- invariants --------------------------------------------------------------

    def validate(self) -> None:
        """Raise AssertionError if any structural invariant is broken."""
        assert self._keys == sorted(set(self._keys)), "keys not strictly increasing"
        assert len(self._keys) == len(self._containers) == len(self._cards)
        total = 0
        for cont, card in zip(self._containers, self._cards):
            if _is_array(cont):
                assert 1 <= cont.size <= ARRAY_CONTAINER_MAX, "array container size out of range"
                assert cont.size == card, "cached container cardinality wrong"
                if cont.size > 1:
                    assert np.all(cont[1:] > cont[:-1]), "array container not sorted unique"
            else:
                assert cont.size == BITSET_WORDS
                actual = _bitset_cardinality(cont)
                assert actual == card, "cached container cardinality wrong"
                assert actual > ARRAY_CONTAINER_MAX, "bitset container under threshold"
            total += card
        assert total == self._card, "cached total cardinality wrong"
