"""Catalog of source tables, labels, lineage, readiness, and quality metrics.

Single-writer registry persisted as one human-readable JSON file per store
root; every mutation can be flushed with ``save``. Entity ids are typed
strings ("table:users", "label:age", "task:ingest", ...) and lineage is a
directed acyclic graph over them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from .errors import (
    CycleError,
    DanglingColumnError,
    DuplicateNameError,
    LifecycleOrderError,
    UnknownEntityError,
)
from .ioutil import atomic_write_bytes

ROLE_ID = "id"
ROLE_LABEL_VALUE = "label-value"

LIFECYCLE_STATES = ("registered", "mapping", "building", "serving")

DEFAULT_SLA_EMPTY_RATIO = 0.5

CATALOG_FILENAME = "catalog.json"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    role: str  # ROLE_ID or ROLE_LABEL_VALUE

    def __post_init__(self) -> None:
        if self.role not in (ROLE_ID, ROLE_LABEL_VALUE):
            raise ValueError(f"unknown column role {self.role!r}")


@dataclass
class TableMeta:
    name: str
    columns: list[ColumnSpec]
    upstream_task: str = "ingest"
    owners: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        id_columns = [c for c in self.columns if c.role == ROLE_ID]
        if len(id_columns) != 1:
            raise ValueError(f"table {self.name!r} needs exactly one id column")

    @property
    def id_column(self) -> str:
        return next(c.name for c in self.columns if c.role == ROLE_ID)

    def column(self, name: str) -> ColumnSpec | None:
        return next((c for c in self.columns if c.name == name), None)


@dataclass
class LabelMeta:
    name: str
    source_table: str
    source_column: str
    state: str = "registered"
    sla_empty_ratio: float = DEFAULT_SLA_EMPTY_RATIO


@dataclass
class QualityMetrics:
    row_count: int
    empty_ratio: float
    value_cardinality: int
    unresolved_id_count: int
    last_updated: date

    def __post_init__(self) -> None:
        if not 0.0 <= self.empty_ratio <= 1.0:
            raise ValueError("empty_ratio must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "row_count": self.row_count,
            "empty_ratio": self.empty_ratio,
            "value_cardinality": self.value_cardinality,
            "unresolved_id_count": self.unresolved_id_count,
            "last_updated": self.last_updated.isoformat(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "QualityMetrics":
        return cls(
            row_count=raw["row_count"],
            empty_ratio=raw["empty_ratio"],
            value_cardinality=raw["value_cardinality"],
            unresolved_id_count=raw["unresolved_id_count"],
            last_updated=date.fromisoformat(raw["last_updated"]),
        )


@dataclass(frozen=True)
class Lineage:
    upstream: frozenset[str]
    downstream: frozenset[str]


class Catalog:
    """In-memory registry with JSON persistence. Single writer, many readers."""

    def __init__(self) -> None:
        self._tables: dict[str, dict] = {}
        self._labels: dict[str, dict] = {}
        self._tasks: set[str] = set()
        self._extra: set[str] = set()  # snapshot:<day>, tabletset:<day>
        self._edges: set[tuple[str, str]] = set()
        self._task_runs: dict[str, dict] = {}

    # -- entity ids -----------------------------------------------------------

    @staticmethod
    def table_id(name: str) -> str:
        return f"table:{name}"

    @staticmethod
    def label_id(name: str) -> str:
        return f"label:{name}"

    @staticmethod
    def task_id(name: str) -> str:
        return f"task:{name}"

    def _entities(self) -> set[str]:
        return (
            {self.table_id(n) for n in self._tables}
            | {self.label_id(n) for n in self._labels}
            | {self.task_id(n) for n in self._tasks}
            | self._extra
        )

    def has_entity(self, entity: str) -> bool:
        return entity in self._entities()

    # -- registration -----------------------------------------------------------

    def register_table(self, meta: TableMeta) -> str:
        if meta.name in self._tables:
            raise DuplicateNameError(f"table {meta.name!r} already registered")
        self._tables[meta.name] = {
            "columns": [(c.name, c.role) for c in meta.columns],
            "upstream_task": meta.upstream_task,
            "owners": list(meta.owners),
            "days": {},
        }
        self._tasks.add(meta.upstream_task)
        self._add_edge(self.task_id(meta.upstream_task), self.table_id(meta.name))
        return self.table_id(meta.name)

    def ensure_table(self, meta: TableMeta) -> str:
        """Register, or reuse an identical prior registration (daily re-ingest)."""
        existing = self._tables.get(meta.name)
        if existing is None:
            return self.register_table(meta)
        same = existing["columns"] == [(c.name, c.role) for c in meta.columns] and existing[
            "upstream_task"
        ] == meta.upstream_task
        if not same:
            raise DuplicateNameError(
                f"table {meta.name!r} already registered with a different shape"
            )
        return self.table_id(meta.name)

    def register_label(self, meta: LabelMeta) -> str:
        if meta.name in self._labels:
            raise DuplicateNameError(f"label {meta.name!r} already registered")
        table = self._tables.get(meta.source_table)
        if table is None:
            raise UnknownEntityError(f"label source table {meta.source_table!r} not registered")
        roles = dict(table["columns"])
        if roles.get(meta.source_column) != ROLE_LABEL_VALUE:
            raise DanglingColumnError(
                f"table {meta.source_table!r} has no label-value column {meta.source_column!r}"
            )
        if meta.state not in LIFECYCLE_STATES:
            raise ValueError(f"unknown lifecycle state {meta.state!r}")
        self._labels[meta.name] = {
            "source_table": meta.source_table,
            "source_column": meta.source_column,
            "state": meta.state,
            "sla_empty_ratio": meta.sla_empty_ratio,
            "metrics": {},
        }
        self._add_edge(self.table_id(meta.source_table), self.label_id(meta.name))
        return self.label_id(meta.name)

    def ensure_label(self, meta: LabelMeta) -> str:
        if meta.name in self._labels:
            return self.label_id(meta.name)
        return self.register_label(meta)

    # -- table access -----------------------------------------------------------

    def table_names(self) -> list[str]:
        return sorted(self._tables)

    def table_meta(self, name: str) -> TableMeta:
        raw = self._raw_table(name)
        return TableMeta(
            name=name,
            columns=[ColumnSpec(n, r) for n, r in raw["columns"]],
            upstream_task=raw["upstream_task"],
            owners=list(raw["owners"]),
        )

    def _raw_table(self, name: str) -> dict:
        if name not in self._tables:
            raise UnknownEntityError(f"table {name!r} not registered")
        return self._tables[name]

    def stage_table_day(
        self,
        name: str,
        day: date,
        staged_path: str,
        row_count: int,
        empty_counts: dict[str, int],
    ) -> None:
        raw = self._raw_table(name)
        raw["days"][day.isoformat()] = {
            "ready": False,
            "staged_path": staged_path,
            "row_count": row_count,
            "empty_counts": dict(sorted(empty_counts.items())),
        }

    def mark_ready(self, name: str, day: date) -> None:
        raw = self._raw_table(name)
        day_info = raw["days"].setdefault(
            day.isoformat(),
            {"ready": False, "staged_path": None, "row_count": None, "empty_counts": {}},
        )
        day_info["ready"] = True

    def table_day(self, name: str, day: date) -> dict | None:
        return self._raw_table(name)["days"].get(day.isoformat())

    def is_ready(self, name: str, day: date) -> bool:
        if name not in self._tables:
            return False
        info = self.table_day(name, day)
        return bool(info and info["ready"])

    def ready_tables(self, day: date) -> list[str]:
        return sorted(n for n in self._tables if self.is_ready(n, day))

    # -- labels ----------------------------------------------------------------

    def label_names(self) -> list[str]:
        return sorted(self._labels)

    def labels_of_table(self, table: str) -> list[str]:
        return sorted(
            n for n, raw in self._labels.items() if raw["source_table"] == table
        )

    def label_meta(self, name: str) -> LabelMeta:
        raw = self._raw_label(name)
        return LabelMeta(
            name=name,
            source_table=raw["source_table"],
            source_column=raw["source_column"],
            state=raw["state"],
            sla_empty_ratio=raw["sla_empty_ratio"],
        )

    def _raw_label(self, name: str) -> dict:
        if name not in self._labels:
            raise UnknownEntityError(f"label {name!r} not registered")
        return self._labels[name]

    def set_label_state(self, name: str, state: str) -> None:
        """Advance a label's lifecycle; moving backward is an error."""
        raw = self._raw_label(name)
        if state not in LIFECYCLE_STATES:
            raise ValueError(f"unknown lifecycle state {state!r}")
        if LIFECYCLE_STATES.index(state) < LIFECYCLE_STATES.index(raw["state"]):
            raise LifecycleOrderError(
                f"label {name!r} cannot move {raw['state']} -> {state}"
            )
        raw["state"] = state

    def advance_label_state(self, name: str, state: str) -> None:
        """Forward-only transition that ignores states already passed."""
        raw = self._raw_label(name)
        if LIFECYCLE_STATES.index(state) > LIFECYCLE_STATES.index(raw["state"]):
            raw["state"] = state

    def record_metrics(self, name: str, metrics: QualityMetrics) -> None:
        raw = self._raw_label(name)
        raw["metrics"][metrics.last_updated.isoformat()] = metrics.to_dict()

    def metrics_for(self, name: str, day: date) -> QualityMetrics | None:
        raw = self._raw_label(name)["metrics"].get(day.isoformat())
        return QualityMetrics.from_dict(raw) if raw else None

    def latest_metrics(self, name: str) -> QualityMetrics | None:
        metrics = self._raw_label(name)["metrics"]
        if not metrics:
            return None
        return QualityMetrics.from_dict(metrics[max(metrics)])

    def sla_violations(self, day: date | None = None) -> list[dict]:
        """Labels whose (latest or day-stamped) empty_ratio breaks their bound."""
        out = []
        for name in sorted(self._labels):
            bound = self._labels[name]["sla_empty_ratio"]
            metrics = self.metrics_for(name, day) if day else self.latest_metrics(name)
            if metrics is not None and metrics.empty_ratio > bound:
                out.append(
                    {
                        "label": name,
                        "empty_ratio": metrics.empty_ratio,
                        "bound": bound,
                        "day": metrics.last_updated.isoformat(),
                    }
                )
        return out

    # -- lineage ---------------------------------------------------------------

    def _add_edge(self, src: str, dst: str) -> None:
        if (src, dst) in self._edges:
            return
        if src == dst or self._reaches(dst, src):
            raise CycleError(f"edge {src} -> {dst} would create a cycle")
        self._edges.add((src, dst))

    def add_edge(self, src: str, dst: str) -> None:
        for entity in (src, dst):
            if not self.has_entity(entity):
                raise UnknownEntityError(f"unknown entity {entity!r}")
        self._add_edge(src, dst)

    def _reaches(self, start: str, goal: str) -> bool:
        stack = [start]
        seen = set()
        while stack:
            node = stack.pop()
            if node == goal:
                return True
            if node in seen:
                continue
            seen.add(node)
            stack.extend(dst for src, dst in self._edges if src == node)
        return False

    def _closure(self, start: str, forward: bool) -> frozenset[str]:
        result: set[str] = set()
        stack = [start]
        while stack:
            node = stack.pop()
            for src, dst in self._edges:
                nxt = dst if forward else src
                if (src if forward else dst) == node and nxt not in result:
                    result.add(nxt)
                    stack.append(nxt)
        return frozenset(result)

    def lineage(self, entity: str) -> Lineage:
        if not self.has_entity(entity):
            raise UnknownEntityError(f"unknown entity {entity!r}")
        return Lineage(
            upstream=self._closure(entity, forward=False),
            downstream=self._closure(entity, forward=True),
        )

    def register_build(self, day: date, tables: list[str], labels: list[str]) -> dict[str, str]:
        """Record the day's id-mapping and build tasks plus their lineage."""
        iso = day.isoformat()
        mapping_task = f"id-mapping:{iso}"
        build_task = f"bitmap-build:{iso}"
        snapshot_entity = f"snapshot:{iso}"
        tabletset_entity = f"tabletset:{iso}"
        self._tasks.update((mapping_task, build_task))
        self._extra.update((snapshot_entity, tabletset_entity))
        for table in tables:
            self._add_edge(self.table_id(table), self.task_id(mapping_task))
        self._add_edge(self.task_id(mapping_task), snapshot_entity)
        self._add_edge(snapshot_entity, self.task_id(build_task))
        for label in labels:
            self._add_edge(self.label_id(label), self.task_id(build_task))
        self._add_edge(self.task_id(build_task), tabletset_entity)
        return {
            "mapping_task": self.task_id(mapping_task),
            "build_task": self.task_id(build_task),
            "snapshot": snapshot_entity,
            "tabletset": tabletset_entity,
        }

    # -- task runs ----------------------------------------------------------------

    def record_task_run(self, instance_id: str, payload: dict) -> None:
        self._task_runs[instance_id] = dict(payload)

    def task_runs(self) -> dict[str, dict]:
        return dict(self._task_runs)

    # -- persistence ----------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "tables": {n: self._tables[n] for n in sorted(self._tables)},
            "labels": {n: self._labels[n] for n in sorted(self._labels)},
            "tasks": sorted(self._tasks),
            "extra_entities": sorted(self._extra),
            "edges": sorted(list(e) for e in self._edges),
            "task_runs": {k: self._task_runs[k] for k in sorted(self._task_runs)},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Catalog":
        cat = cls()
        cat._tables = {n: t for n, t in raw.get("tables", {}).items()}
        for table in cat._tables.values():
            table["columns"] = [tuple(c) for c in table["columns"]]
        cat._labels = dict(raw.get("labels", {}))
        cat._tasks = set(raw.get("tasks", []))
        cat._extra = set(raw.get("extra_entities", []))
        cat._edges = {tuple(e) for e in raw.get("edges", [])}
        cat._task_runs = dict(raw.get("task_runs", {}))
        return cat

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Catalog):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def save(self, root: Path) -> Path:
        path = Path(root) / CATALOG_FILENAME
        payload = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        atomic_write_bytes(path, payload.encode("utf-8"))
        return path

    @classmethod
    def load(cls, root: Path) -> "Catalog":
        path = Path(root) / CATALOG_FILENAME
        if not path.exists():
            return cls()
        return cls.from_dict(json.loads(path.read_text("utf-8")))
