"""Shared file plumbing: atomic writes and the 64-bit integrity code."""

from __future__ import annotations

import hashlib
import os
import uuid
from pathlib import Path


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via a temp file and rename so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{uuid.uuid4().hex}.tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def checksum64(data: bytes | memoryview) -> int:
    """64-bit integrity code over a byte region."""
    return int.from_bytes(hashlib.blake2b(bytes(data), digest_size=8).digest(), "little")
