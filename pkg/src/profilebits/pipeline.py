"""End-to-end build pipeline: ingest, id mapping, bitmap build, sink.

All state lives under one store root::

    <root>/catalog.json          registry (tables, labels, lineage, metrics)
    <root>/instances.json        scheduler task-instance states
    <root>/staging/<table>/<day>.tsv   canonicalized ingested rows
    <root>/snapshots/<day>.bups  id snapshots, one per build day
    <root>/<day>/tablet_<i>.bupt + manifest.json   sealed tablet sets

``run_build`` drives the day through the scheduler: a checker pass creates
the id-mapping and bitmap-build instances, then an in-process executor runs
them. Re-running a finished day is a no-op, byte for byte.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from .builder import build_all
from .catalog import Catalog, ColumnSpec, LabelMeta, TableMeta
from .errors import DuplicateNameError, ParseError, PipelineError
from .idgen import IdSnapshot, PartitionPlan, assign_day, plan_partitions
from .scheduler import (
    INSTANCES_FILENAME,
    KIND_BITMAP_BUILD,
    KIND_ID_MAPPING,
    STATE_DONE,
    Scheduler,
    TaskInstance,
)
from .tables import DEFAULT_DELIMITER, read_delimited, write_delimited
from .tablets import TabletStore

logger = logging.getLogger(__name__)

DEFAULT_TABLET_COUNT = 6
DEFAULT_EXPECTED_IDS = 10_000_000
DEFAULT_TARGET_PER_PARTITION = 100_000

SNAPSHOTS_DIRNAME = "snapshots"
STAGING_DIRNAME = "staging"


def snapshot_path(root: Path, day: date) -> Path:
    return Path(root) / SNAPSHOTS_DIRNAME / f"{day.isoformat()}.bups"


def instances_path(root: Path) -> Path:
    return Path(root) / INSTANCES_FILENAME


def previous_snapshot_day(root: Path, day: date) -> date | None:
    snap_dir = Path(root) / SNAPSHOTS_DIRNAME
    if not snap_dir.is_dir():
        return None
    days = []
    for path in snap_dir.glob("*.bups"):
        try:
            d = date.fromisoformat(path.stem)
        except ValueError:
            continue
        if d < day:
            days.append(d)
    return max(days) if days else None


@dataclass
class IngestReport:
    table: str
    day: date
    row_count: int
    staged_path: Path
    empty_counts: dict[str, int]
    labels: list[str]


def ingest_table(
    root: Path,
    source_path: Path,
    table_name: str,
    id_column: str,
    label_columns: list[str] | None = None,
    *,
    day: date,
    delimiter: str = DEFAULT_DELIMITER,
    upstream_task: str = "ingest",
    owners: list[str] | None = None,
) -> IngestReport:
    """Parse a delimited table, register it, and stage canonical rows.

    Fields are trimmed; an empty id field is a parse error naming its line.
    The table is registered (or matched against its previous registration),
    one label per label column, staged under the store root, and marked
    ready for the day.
    """
    root = Path(root)
    columns, rows = read_delimited(Path(source_path), delimiter)
    if id_column not in columns:
        raise ParseError(f"id column {id_column!r} not in header {columns}", line=1)
    if label_columns is None:
        label_columns = [c for c in columns if c != id_column]
    for column in label_columns:
        if column not in columns:
            raise ParseError(f"label column {column!r} not in header {columns}", line=1)
        if column == id_column:
            raise ParseError(f"column {column!r} cannot be both id and label", line=1)

    catalog = Catalog.load(root)
    meta = TableMeta(
        name=table_name,
        columns=[ColumnSpec(id_column, "id")]
        + [ColumnSpec(c, "label-value") for c in label_columns],
        upstream_task=upstream_task,
        owners=list(owners or []),
    )
    catalog.ensure_table(meta)
    if catalog.table_day(table_name, day) is not None:
        raise DuplicateNameError(
            f"table {table_name!r} already ingested for {day.isoformat()}"
        )
    for column in label_columns:
        catalog.ensure_label(LabelMeta(name=column, source_table=table_name, source_column=column))

    id_idx = columns.index(id_column)
    label_idx = [(c, columns.index(c)) for c in label_columns]
    empty_counts = {c: 0 for c in label_columns}
    staged_rows: list[list[str]] = []
    row_count = 0
    for lineno_offset, fields in enumerate(rows):
        row_count += 1
        external = fields[id_idx]
        if not external:
            raise ParseError("empty id field", line=lineno_offset + 2)
        staged = [external]
        for column, idx in label_idx:
            value = fields[idx]
            if not value:
                empty_counts[column] += 1
            staged.append(value)
        staged_rows.append(staged)

    rel_staged = Path(STAGING_DIRNAME) / table_name / f"{day.isoformat()}.tsv"
    write_delimited(root / rel_staged, [id_column, *label_columns], staged_rows)
    catalog.stage_table_day(
        table_name, day, str(rel_staged), row_count=row_count, empty_counts=empty_counts
    )
    catalog.mark_ready(table_name, day)
    catalog.save(root)
    logger.info("ingested %s for %s: %d rows", table_name, day.isoformat(), row_count)
    return IngestReport(
        table=table_name,
        day=day,
        row_count=row_count,
        staged_path=root / rel_staged,
        empty_counts=empty_counts,
        labels=list(label_columns),
    )


class InProcessExecutor:
    """Runs scheduler instances against the local store.

    The dispatch interface is a plain callable so a remote execution platform
    could be swapped in without touching the scheduler.
    """

    def __init__(
        self,
        root: Path,
        catalog: Catalog,
        tablet_count: int = DEFAULT_TABLET_COUNT,
        expected_ids: int = DEFAULT_EXPECTED_IDS,
        target_per_partition: int = DEFAULT_TARGET_PER_PARTITION,
    ) -> None:
        self.root = Path(root)
        self.catalog = catalog
        self.tablet_count = tablet_count
        self.expected_ids = expected_ids
        self.target_per_partition = target_per_partition

    def __call__(self, instance: TaskInstance) -> None:
        if instance.kind == KIND_ID_MAPPING:
            self._run_id_mapping(instance)
        elif instance.kind == KIND_BITMAP_BUILD:
            self._run_bitmap_build(instance)
        else:
            raise PipelineError(f"unknown task kind {instance.kind!r}")

    # -- id mapping -------------------------------------------------------

    def _gather_external_ids(self, tables: tuple[str, ...], day: date) -> list[str]:
        ids: list[str] = []
        for table in tables:
            day_info = self.catalog.table_day(table, day)
            if not day_info or not day_info.get("staged_path"):
                raise PipelineError(f"table {table!r} has no staged rows for {day.isoformat()}")
            meta = self.catalog.table_meta(table)
            columns, rows = read_delimited(self.root / day_info["staged_path"])
            id_idx = columns.index(meta.id_column)
            ids.extend(fields[id_idx] for fields in rows)
        return ids

    def _run_id_mapping(self, instance: TaskInstance) -> None:
        day = instance.day
        path = snapshot_path(self.root, day)
        if path.exists():
            logger.info("snapshot for %s already exists, skipping", day.isoformat())
        else:
            previous_day = previous_snapshot_day(self.root, day)
            previous = (
                IdSnapshot.load(snapshot_path(self.root, previous_day))
                if previous_day is not None
                else None
            )
            plan = (
                None
                if previous is not None
                else plan_partitions(self.expected_ids, self.target_per_partition)
            )
            snapshot = assign_day(
                previous, self._gather_external_ids(instance.target, day), day=day, plan=plan
            )
            snapshot.save(path)
        for table in instance.target:
            for label in self.catalog.labels_of_table(table):
                self.catalog.advance_label_state(label, "mapping")

    # -- bitmap build ----------------------------------------------------------

    def _run_bitmap_build(self, instance: TaskInstance) -> None:
        day = instance.day
        store = TabletStore(self.root)
        if store.has_build(day):
            logger.info("tablet set for %s already exists, skipping", day.isoformat())
            return
        snap_file = snapshot_path(self.root, day)
        if not snap_file.exists():
            raise PipelineError(f"no id snapshot for {day.isoformat()}")
        snapshot = IdSnapshot.load(snap_file)
        for table in instance.target:
            for label in self.catalog.labels_of_table(table):
                self.catalog.advance_label_state(label, "building")
        result = build_all(
            self.root,
            self.catalog,
            snapshot,
            snapshot.plan,
            self.tablet_count,
            day,
            tables=list(instance.target),
        )
        for tablet in result.tablets:
            store.sink_tablet(tablet)
        store.write_manifest(day, self.tablet_count, result.metrics_dict())
        for table in instance.target:
            for label in self.catalog.labels_of_table(table):
                self.catalog.advance_label_state(label, "serving")


@dataclass
class BuildRunReport:
    day: date
    no_op: bool
    outcomes: dict[str, str] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors


def run_build(
    root: Path,
    day: date,
    tablet_count: int = DEFAULT_TABLET_COUNT,
    expected_ids: int = DEFAULT_EXPECTED_IDS,
    target_per_partition: int = DEFAULT_TARGET_PER_PARTITION,
    budget: int = 2,
    retries: int = 0,
) -> BuildRunReport:
    """Run the day's pipeline: check cycle, dispatch, persist catalog.

    Raises PipelineError when there is nothing to build for the day. A day
    whose manifest already exists is reported as a no-op without touching
    any file.
    """
    root = Path(root)
    store = TabletStore(root)
    catalog = Catalog.load(root)
    scheduler = Scheduler.load(instances_path(root))
    if store.has_build(day):
        done = {
            i.instance_id: i.state for i in scheduler.instances_for_day(day)
        }
        return BuildRunReport(day=day, no_op=True, outcomes=done)
    scheduler.check_cycle(catalog, day)
    day_instances = scheduler.instances_for_day(day)
    if not day_instances:
        raise PipelineError(f"nothing to build: no ready tables for {day.isoformat()}")
    executor = InProcessExecutor(
        root,
        catalog,
        tablet_count=tablet_count,
        expected_ids=expected_ids,
        target_per_partition=target_per_partition,
    )
    scheduler.dispatch(executor, budget=budget, retries=retries, catalog=catalog)
    catalog.save(root)
    outcomes = {i.instance_id: i.state for i in scheduler.instances_for_day(day)}
    errors = {
        i.instance_id: i.error or "failed"
        for i in scheduler.instances_for_day(day)
        if i.state != STATE_DONE
    }
    return BuildRunReport(day=day, no_op=False, outcomes=outcomes, errors=errors)
