"""Sealed tablet files: one shard of the (label, value) -> bitmap-pair index.

Each tablet covers one hash shard of the uid space and is written once,
atomically, as a single file: a header, a sorted (label, value) index with
blob offsets, the serialized bitmaps, and a trailing 64-bit checksum. The
sorted index lets a reader locate and decode only the bitmaps a query names
instead of materializing the whole tablet.

Store layout: ``<root>/<build_day>/tablet_<id>.bupt`` plus ``manifest.json``
recording the declared tablet count and build metrics.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .bitmap import CompressedBitmap
from .errors import CorruptionError, DuplicateTabletError, StoreError
from .hashing import TABLET_HASH_SEED, tablet_of
from .ioutil import atomic_write_bytes, checksum64
from .pairs import BitmapPair

TABLET_MAGIC = b"BUPT"
TABLET_VERSION = 1
TABLET_SUFFIX = ".bupt"
MANIFEST_FILENAME = "manifest.json"

_FILE_HEADER = struct.Struct("<4sHIIII")  # magic, version, tablet_id, tablet_count, day, entries
_INDEX_FIXED = struct.Struct("<QQQQ")  # low offset/length, high offset/length
_LEN = struct.Struct("<H")
_CHECKSUM = struct.Struct("<Q")


@dataclass
class Tablet:
    """A build-side tablet: mutable until sealed, then sink-able."""

    tablet_id: int
    tablet_count: int
    build_day: date
    entries: dict[tuple[str, str], BitmapPair] = field(default_factory=dict)
    sealed: bool = False
    checksum: int | None = None

    def set_entry(self, label: str, value: str, pair: BitmapPair) -> None:
        if self.sealed:
            raise StoreError(f"tablet {self.tablet_id} is sealed")
        self.entries[(label, value)] = pair

    def merge_entry(self, label: str, value: str, pair: BitmapPair) -> None:
        """Union a pair into an existing entry (labels fed by several tables)."""
        if self.sealed:
            raise StoreError(f"tablet {self.tablet_id} is sealed")
        key = (label, value)
        current = self.entries.get(key)
        self.entries[key] = pair if current is None else (current | pair)

    def seal(self) -> "Tablet":
        self.sealed = True
        return self

    def get(self, label: str, value: str) -> BitmapPair | None:
        return self.entries.get((label, value))

    def verify_placement(self, seed: int = TABLET_HASH_SEED) -> None:
        """Check every member uid hashes to this tablet."""
        for (label, value), pair in self.entries.items():
            uids = pair.to_uids()
            if uids.size == 0:
                continue
            where = tablet_of(uids, self.tablet_count, seed)
            if not bool(np.all(where == np.uint64(self.tablet_id))):
                raise StoreError(
                    f"entry ({label!r}, {value!r}) holds uids outside tablet {self.tablet_id}"
                )


def serialize_tablet(tablet: Tablet) -> bytes:
    """Canonical tablet file bytes (without needing a store)."""
    items = sorted(
        ((label.encode("utf-8"), value.encode("utf-8"), pair) for (label, value), pair in tablet.entries.items())
    )
    index_size = sum(
        _LEN.size * 2 + len(lb) + len(vb) + _INDEX_FIXED.size for lb, vb, _ in items
    )
    blob_start = _FILE_HEADER.size + index_size
    blobs: list[bytes] = []
    index_parts: list[bytes] = []
    cursor = blob_start
    for label_bytes, value_bytes, pair in items:
        low_blob = pair.low.serialize()
        high_blob = pair.high.serialize()
        index_parts.append(_LEN.pack(len(label_bytes)))
        index_parts.append(label_bytes)
        index_parts.append(_LEN.pack(len(value_bytes)))
        index_parts.append(value_bytes)
        index_parts.append(
            _INDEX_FIXED.pack(cursor, len(low_blob), cursor + len(low_blob), len(high_blob))
        )
        cursor += len(low_blob) + len(high_blob)
        blobs.append(low_blob)
        blobs.append(high_blob)
    body = b"".join(
        [
            _FILE_HEADER.pack(
                TABLET_MAGIC,
                TABLET_VERSION,
                tablet.tablet_id,
                tablet.tablet_count,
                tablet.build_day.toordinal(),
                len(items),
            ),
            *index_parts,
            *blobs,
        ]
    )
    return body + _CHECKSUM.pack(checksum64(body))


@dataclass(frozen=True)
class TabletRef:
    """Location-transparent handle to a sealed tablet file."""

    path: Path
    tablet_id: int
    build_day: date
    checksum: int


class TabletReader:
    """Immutable view over a verified tablet file.

    The whole file is read and checksum-verified once at open; individual
    bitmaps are decoded lazily through the index and cached.
    """

    def __init__(self, path: Path, data: bytes) -> None:
        self.path = Path(path)
        if len(data) < _FILE_HEADER.size + _CHECKSUM.size:
            raise CorruptionError(f"{path}: tablet file truncated")
        (stored,) = _CHECKSUM.unpack_from(data, len(data) - _CHECKSUM.size)
        body = data[: -_CHECKSUM.size]
        if checksum64(body) != stored:
            raise CorruptionError(f"{path}: tablet checksum mismatch")
        magic, version, tablet_id, tablet_count, day_ord, entry_count = _FILE_HEADER.unpack_from(
            body, 0
        )
        if magic != TABLET_MAGIC:
            raise CorruptionError(f"{path}: bad tablet magic {magic!r}")
        if version != TABLET_VERSION:
            raise CorruptionError(f"{path}: unsupported tablet version {version}")
        self.tablet_id = tablet_id
        self.tablet_count = tablet_count
        self.build_day = date.fromordinal(day_ord)
        self.checksum = stored
        self._data = data
        self._index: dict[tuple[str, str], tuple[int, int, int, int]] = {}
        pos = _FILE_HEADER.size
        prev_key: tuple[bytes, bytes] | None = None
        for _ in range(entry_count):
            try:
                (label_len,) = _LEN.unpack_from(body, pos)
                pos += _LEN.size
                label_bytes = bytes(body[pos : pos + label_len])
                pos += label_len
                (value_len,) = _LEN.unpack_from(body, pos)
                pos += _LEN.size
                value_bytes = bytes(body[pos : pos + value_len])
                pos += value_len
                low_off, low_len, high_off, high_len = _INDEX_FIXED.unpack_from(body, pos)
                pos += _INDEX_FIXED.size
            except struct.error as exc:
                raise CorruptionError(f"{path}: tablet index truncated") from exc
            key = (label_bytes, value_bytes)
            if prev_key is not None and key <= prev_key:
                raise CorruptionError(f"{path}: tablet index not sorted")
            prev_key = key
            if max(low_off + low_len, high_off + high_len) > len(body):
                raise CorruptionError(f"{path}: tablet blob range out of bounds")
            self._index[(label_bytes.decode("utf-8"), value_bytes.decode("utf-8"))] = (
                low_off,
                low_len,
                high_off,
                high_len,
            )
        self._cache: dict[tuple[str, str], BitmapPair] = {}

    @property
    def entry_count(self) -> int:
        return len(self._index)

    def keys(self) -> list[tuple[str, str]]:
        return sorted(self._index)

    def labels(self) -> list[str]:
        return sorted({label for label, _ in self._index})

    def list_values(self, label: str) -> list[str]:
        """All values stored for a label, lexicographically; [] if absent."""
        return sorted(value for key_label, value in self._index if key_label == label)

    def get_bitmap(self, label: str, value: str) -> BitmapPair | None:
        key = (label, value)
        spans = self._index.get(key)
        if spans is None:
            return None
        cached = self._cache.get(key)
        if cached is None:
            low_off, low_len, high_off, high_len = spans
            cached = BitmapPair(
                CompressedBitmap.deserialize(self._data[low_off : low_off + low_len]),
                CompressedBitmap.deserialize(self._data[high_off : high_off + high_len]),
            )
            self._cache[key] = cached
        return cached

    def entries(self) -> dict[tuple[str, str], BitmapPair]:
        return {key: self.get_bitmap(*key) for key in self._index}


@dataclass(frozen=True)
class TabletListing:
    build_day: date
    tablet_count: int
    refs: tuple[TabletRef, ...]
    missing: tuple[int, ...]

    @property
    def complete(self) -> bool:
        return not self.missing and self.tablet_count > 0


class TabletStore:
    """Unified writer/reader over a directory of sealed tablet files."""

    def __init__(self, root: Path) -> None:
        self.root = Path(root)

    def day_dir(self, day: date) -> Path:
        return self.root / day.isoformat()

    def tablet_path(self, day: date, tablet_id: int) -> Path:
        return self.day_dir(day) / f"tablet_{tablet_id}{TABLET_SUFFIX}"

    # -- write ------------------------------------------------------------

    def sink_tablet(self, tablet: Tablet, overwrite: bool = False) -> TabletRef:
        """Atomically persist a sealed tablet; readers never see partials."""
        if not tablet.sealed:
            raise StoreError(f"tablet {tablet.tablet_id} must be sealed before sinking")
        path = self.tablet_path(tablet.build_day, tablet.tablet_id)
        if path.exists() and not overwrite:
            raise DuplicateTabletError(
                f"tablet {tablet.tablet_id} for {tablet.build_day.isoformat()} already exists"
            )
        data = serialize_tablet(tablet)
        atomic_write_bytes(path, data)
        (checksum,) = _CHECKSUM.unpack_from(data, len(data) - _CHECKSUM.size)
        tablet.checksum = checksum
        return TabletRef(
            path=path, tablet_id=tablet.tablet_id, build_day=tablet.build_day, checksum=checksum
        )

    def write_manifest(self, day: date, tablet_count: int, metrics: dict) -> Path:
        payload = {
            "format": "profilebits-tabletset",
            "version": TABLET_VERSION,
            "build_day": day.isoformat(),
            "tablet_count": tablet_count,
            "tablet_hash_seed": TABLET_HASH_SEED,
            "metrics": metrics,
        }
        path = self.day_dir(day) / MANIFEST_FILENAME
        atomic_write_bytes(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode())
        return path

    def read_manifest(self, day: date) -> dict | None:
        path = self.day_dir(day) / MANIFEST_FILENAME
        if not path.exists():
            return None
        return json.loads(path.read_text("utf-8"))

    def has_build(self, day: date) -> bool:
        return self.read_manifest(day) is not None

    # -- read -----------------------------------------------------------------

    def open_tablet(self, ref: TabletRef | Path) -> TabletReader:
        path = ref.path if isinstance(ref, TabletRef) else Path(ref)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise
        return TabletReader(path, data)

    def list_tablets(self, day: date) -> TabletListing:
        """Every sealed tablet present for the day, plus gaps versus the manifest."""
        day_dir = self.day_dir(day)
        present: dict[int, TabletRef] = {}
        if day_dir.is_dir():
            for path in sorted(day_dir.glob(f"tablet_*{TABLET_SUFFIX}")):
                try:
                    tablet_id = int(path.stem.split("_", 1)[1])
                except (IndexError, ValueError):
                    continue
                data = path.read_bytes()
                if len(data) < _CHECKSUM.size:
                    continue
                (checksum,) = _CHECKSUM.unpack_from(data, len(data) - _CHECKSUM.size)
                present[tablet_id] = TabletRef(
                    path=path, tablet_id=tablet_id, build_day=day, checksum=checksum
                )
        manifest = self.read_manifest(day)
        if manifest is not None:
            tablet_count = int(manifest["tablet_count"])
        elif present:
            tablet_count = max(present) + 1
        else:
            tablet_count = 0
        missing = tuple(sorted(set(range(tablet_count)) - set(present)))
        refs = tuple(present[i] for i in sorted(present))
        return TabletListing(build_day=day, tablet_count=tablet_count, refs=refs, missing=missing)

    def build_days(self) -> list[date]:
        days = []
        if self.root.is_dir():
            for child in self.root.iterdir():
                if child.is_dir():
                    try:
                        days.append(date.fromisoformat(child.name))
                    except ValueError:
                        continue
        return sorted(days)
