"""Scatter-gather query engine over sealed tablets.

An audience expression is a boolean tree over label=value predicates. The
same expression is evaluated independently on every tablet of a build day
(tablets partition the uid space, so partial counts simply add and partial
member sets union disjointly), with per-tablet work spread over a bounded
number of parallel slots. Absent (label, value) pairs evaluate as empty sets;
negation exists only as binary difference, never absolute complement.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date
from functools import reduce
from typing import Union

import numpy as np

from .errors import IncompleteTabletSetError, MissingReverseMappingError
from .idgen import IdSnapshot
from .pairs import BitmapPair
from .tablets import TabletReader, TabletRef, TabletStore

QueryExpr = Union["Predicate", "And", "Or", "Xor", "AndNot"]


def _check_expr(node: object) -> None:
    if not isinstance(node, (Predicate, And, Or, Xor, AndNot)):
        raise TypeError(f"not a query expression: {node!r}")


@dataclass(frozen=True)
class Predicate:
    label: str
    value: str

    def __post_init__(self) -> None:
        if not self.label or not self.value:
            raise ValueError("predicate label and value must be non-empty")


@dataclass(frozen=True)
class And:
    children: tuple[QueryExpr, ...]

    def __post_init__(self) -> None:
        if not self.children:
            raise ValueError("And needs at least one child")
        for child in self.children:
            _check_expr(child)


@dataclass(frozen=True)
class Or:
    children: tuple[QueryExpr, ...]

    def __post_init__(self) -> None:
        if not self.children:
            raise ValueError("Or needs at least one child")
        for child in self.children:
            _check_expr(child)


@dataclass(frozen=True)
class Xor:
    a: QueryExpr
    b: QueryExpr

    def __post_init__(self) -> None:
        _check_expr(self.a)
        _check_expr(self.b)


@dataclass(frozen=True)
class AndNot:
    a: QueryExpr
    b: QueryExpr

    def __post_init__(self) -> None:
        _check_expr(self.a)
        _check_expr(self.b)


def predicates(expr: QueryExpr) -> list[Predicate]:
    """Every predicate leaf, left to right."""
    if isinstance(expr, Predicate):
        return [expr]
    if isinstance(expr, (And, Or)):
        out: list[Predicate] = []
        for child in expr.children:
            out.extend(predicates(child))
        return out
    return predicates(expr.a) + predicates(expr.b)


def expr_text(expr: QueryExpr) -> str:
    """Render an expression in the query grammar."""
    if isinstance(expr, Predicate):
        return f"{expr.label}={expr.value}"
    if isinstance(expr, And):
        return "(" + " & ".join(expr_text(c) for c in expr.children) + ")"
    if isinstance(expr, Or):
        return "(" + " | ".join(expr_text(c) for c in expr.children) + ")"
    if isinstance(expr, Xor):
        return f"({expr_text(expr.a)} ^ {expr_text(expr.b)})"
    return f"({expr_text(expr.a)} - {expr_text(expr.b)})"


@dataclass
class PartialResult:
    """One tablet's contribution to a scatter-gather answer."""

    tablet_id: int
    count: int
    members: BitmapPair | None = None


def _eval(reader: TabletReader, expr: QueryExpr) -> BitmapPair:
    if isinstance(expr, Predicate):
        pair = reader.get_bitmap(expr.label, expr.value)
        return pair if pair is not None else BitmapPair()
    if isinstance(expr, And):
        return reduce(lambda a, b: a & b, (_eval(reader, c) for c in expr.children))
    if isinstance(expr, Or):
        return reduce(lambda a, b: a | b, (_eval(reader, c) for c in expr.children))
    if isinstance(expr, Xor):
        return _eval(reader, expr.a) ^ _eval(reader, expr.b)
    if isinstance(expr, AndNot):
        return _eval(reader, expr.a) - _eval(reader, expr.b)
    raise TypeError(f"not a query expression: {expr!r}")


def evaluate_on_tablet(
    reader: TabletReader, expr: QueryExpr, want_members: bool = False
) -> PartialResult:
    """Evaluate an expression on one tablet; loads only the named bitmaps."""
    pair = _eval(reader, expr)
    return PartialResult(
        tablet_id=reader.tablet_id,
        count=pair.cardinality,
        members=pair if want_members else None,
    )


@dataclass(frozen=True)
class ExecutionPlan:
    """Deterministic round-robin assignment of tablets to parallel slots."""

    slots: tuple[tuple[TabletRef, ...], ...]

    @property
    def parallelism(self) -> int:
        return len(self.slots)


def plan(expr: QueryExpr, tablet_refs: list[TabletRef], parallelism: int) -> ExecutionPlan:
    """Assign tablets to at most ``parallelism`` slots, round-robin.

    The combining fold is commutative, so any slot layout yields the same
    final answer; the layout itself is deterministic for fixed inputs.
    """
    _check_expr(expr)
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    refs = list(tablet_refs)
    slots = tuple(
        tuple(refs[k::parallelism]) for k in range(min(parallelism, len(refs)))
    )
    return ExecutionPlan(slots=slots)


class QuerySession:
    """Open tablets of one build day, reusable across many queries."""

    def __init__(
        self,
        store: TabletStore,
        day: date,
        snapshot: IdSnapshot | None = None,
        parallelism: int | None = None,
    ) -> None:
        listing = store.list_tablets(day)
        if listing.tablet_count == 0 or listing.missing:
            raise IncompleteTabletSetError(day.isoformat(), listing.missing)
        self.store = store
        self.day = day
        self.snapshot = snapshot
        self.listing = listing
        self.default_parallelism = parallelism or listing.tablet_count
        self._readers = {ref.tablet_id: store.open_tablet(ref) for ref in listing.refs}

    def _scatter(
        self, expr: QueryExpr, parallelism: int | None, want_members: bool
    ) -> list[PartialResult]:
        par = parallelism or self.default_parallelism
        exec_plan = plan(expr, list(self.listing.refs), par)

        def run_slot(slot: tuple[TabletRef, ...]) -> list[PartialResult]:
            return [
                evaluate_on_tablet(self._readers[ref.tablet_id], expr, want_members)
                for ref in slot
            ]

        if len(exec_plan.slots) <= 1:
            partials = [p for slot in exec_plan.slots for p in run_slot(slot)]
        else:
            with ThreadPoolExecutor(max_workers=len(exec_plan.slots)) as pool:
                partials = [p for batch in pool.map(run_slot, exec_plan.slots) for p in batch]
        return sorted(partials, key=lambda p: p.tablet_id)

    def count(self, expr: QueryExpr, parallelism: int | None = None) -> int:
        """Total members matching the expression across all tablets."""
        return sum(p.count for p in self._scatter(expr, parallelism, want_members=False))

    def member_uids(self, expr: QueryExpr, parallelism: int | None = None) -> np.ndarray:
        """Matching numeric uids, ascending."""
        partials = self._scatter(expr, parallelism, want_members=True)
        arrays = [p.members.to_uids() for p in partials if p.members is not None]
        if not arrays:
            return np.empty(0, dtype=np.uint64)
        return np.sort(np.concatenate(arrays))

    def members(self, expr: QueryExpr, parallelism: int | None = None) -> list[str]:
        """Matching external ids, sorted lexicographically."""
        if self.snapshot is None:
            raise ValueError("member queries need an id snapshot for reverse mapping")
        uids = self.member_uids(expr, parallelism)
        out: list[str] = []
        for uid in uids.tolist():
            external = self.snapshot.reverse_lookup(uid)
            if external is None:
                raise MissingReverseMappingError(
                    f"uid {uid} has no reverse mapping in the {self.snapshot.day.isoformat()} "
                    f"snapshot (snapshot/build mismatch?)"
                )
            out.append(external)
        return sorted(out)


def query_count(
    store: TabletStore, day: date, expr: QueryExpr, parallelism: int | None = None
) -> int:
    """One-shot count; requires the day's tablet set to be complete."""
    return QuerySession(store, day, parallelism=parallelism).count(expr)


def query_members(
    store: TabletStore,
    day: date,
    expr: QueryExpr,
    snapshot: IdSnapshot,
    parallelism: int | None = None,
) -> list[str]:
    """One-shot member list as sorted external ids."""
    return QuerySession(store, day, snapshot=snapshot, parallelism=parallelism).members(expr)


TIMING_CSV_HEADER = "expr,predicates,tablets,millis"


def timing_csv_row(expr: QueryExpr, tablet_count: int, millis: float) -> str:
    """One instrumentation row: expression, predicate count, tablets, millis."""
    buf = io.StringIO()
    csv.writer(buf).writerow(
        [expr_text(expr), len(predicates(expr)), tablet_count, f"{millis:.3f}"]
    )
    return buf.getvalue().strip("\r\n")
