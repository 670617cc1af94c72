"""Exception hierarchy shared by every profilebits module."""

from __future__ import annotations


class StoreError(Exception):
    """Base class for all profilebits errors."""


class CorruptionError(StoreError):
    """A persisted artifact failed validation (bad magic, truncation, checksum)."""


class CapacityOverflowError(StoreError):
    """A partition plan would exceed the addressable numeric-id space."""


class PartitionExhaustedError(StoreError):
    """An id allocator partition has no free offsets left."""


class PlanMismatchError(StoreError):
    """A snapshot was combined with a snapshot built under a different plan."""


class UidOutOfRangeError(StoreError):
    """A numeric id fell outside the space the bitmap pair can address."""


class DuplicateTabletError(StoreError):
    """A tablet file for this (build day, tablet id) already exists."""


class IncompleteTabletSetError(StoreError):
    """A query needed every tablet of a build day but some were missing."""

    def __init__(self, day: str, missing: tuple[int, ...]) -> None:
        self.day = day
        self.missing = tuple(missing)
        if self.missing:
            detail = f"missing indices {list(self.missing)}"
        else:
            detail = "no tablets found"
        super().__init__(f"tablet set for {day} is incomplete: {detail}")


class MissingReverseMappingError(StoreError):
    """A query member uid is absent from the id snapshot (snapshot/build mismatch)."""


class DuplicateNameError(StoreError):
    """A catalog entity with this name is already registered."""


class DanglingColumnError(StoreError):
    """A label registration referenced a column its source table does not have."""


class UnknownEntityError(StoreError):
    """A catalog lookup referenced an entity that was never registered."""


class CycleError(StoreError):
    """A lineage edge would make the catalog graph cyclic."""


class LifecycleOrderError(StoreError):
    """A label lifecycle transition tried to move backward."""


class TableNotReadyError(StoreError):
    """A build touched a table the catalog has not marked ready for the day."""


class PipelineError(StoreError):
    """A build pipeline run could not proceed (e.g. nothing to build)."""


class ParseError(StoreError):
    """A delimited table failed to parse; carries the offending line number."""

    def __init__(self, message: str, line: int) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}")


class ExprSyntaxError(StoreError):
    """A query expression failed to parse; carries the character position."""

    def __init__(self, message: str, position: int) -> None:
        self.position = position
        super().__init__(message)
