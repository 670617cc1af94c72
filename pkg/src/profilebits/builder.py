"""Bitmap builder: label rows in, per-tablet bitmap pairs out.

For every label the rows are grouped by canonical value, each uid is hashed
to its tablet shard, and each (value, tablet) cell becomes a two-segment
bitmap pair. Cells are independent, so a build is a flat pass over
vectorized groups; rebuilding identical inputs yields identical tablets.
"""

from __future__ import annotations

import logging
import sys
from collections.abc import Iterable
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .catalog import Catalog, QualityMetrics
from .errors import PipelineError, TableNotReadyError, UidOutOfRangeError
from .hashing import tablet_of
from .idgen import IdSnapshot, PartitionPlan
from .pairs import UID_SPACE, BitmapPair, split_uid  # noqa: F401  (split_uid is part of the public surface)
from .tables import read_delimited
from .tablets import Tablet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelRow:
    """One (uid, label, value) observation with the id already numeric."""

    uid: int
    label: str
    value: str


CellMap = dict[int, dict[tuple[str, str], BitmapPair]]


def _uid_bound(plan: PartitionPlan | None) -> int:
    return min(UID_SPACE, plan.total_capacity) if plan is not None else UID_SPACE


def _build_cells(
    uids: np.ndarray,
    values: list[str],
    label: str,
    plan: PartitionPlan | None,
    tablet_count: int,
) -> CellMap:
    """Group (uid, value) pairs into per-tablet bitmap pairs."""
    result: CellMap = {}
    if uids.size == 0:
        return result
    bound = _uid_bound(plan)
    bad = np.flatnonzero(uids >= np.uint64(bound))
    if bad.size:
        row = int(bad[0])
        raise UidOutOfRangeError(
            f"label {label!r} row {row}: uid {int(uids[row])} outside [0, {bound})"
        )
    value_arr = np.asarray(values, dtype=str)
    unique_values, codes = np.unique(value_arr, return_inverse=True)
    shards = tablet_of(uids, tablet_count)
    order = np.lexsort((uids, shards, codes))
    sorted_codes = codes[order]
    sorted_shards = shards[order]
    sorted_uids = uids[order]
    breaks = np.flatnonzero(
        (np.diff(sorted_codes) != 0) | (np.diff(sorted_shards) != 0)
    )
    starts = [0, *(breaks + 1).tolist(), sorted_codes.size]
    for i in range(len(starts) - 1):
        lo, hi = starts[i], starts[i + 1]
        value = str(unique_values[sorted_codes[lo]])
        shard = int(sorted_shards[lo])
        pair = BitmapPair.from_uids(sorted_uids[lo:hi])
        result.setdefault(shard, {})[(label, value)] = pair
    return result


def build_label(
    rows: Iterable[LabelRow],
    label: str,
    plan: PartitionPlan | None,
    tablet_count: int,
) -> CellMap:
    """Build one label's per-tablet bitmap pairs from a row stream.

    Values are canonicalized by trimming surrounding whitespace; a row whose
    value is empty after trimming carries no membership and is skipped. A uid
    holding several distinct values appears in each value's pair.
    """
    uids: list[int] = []
    values: list[str] = []
    for row in rows:
        if row.label != label:
            raise ValueError(f"row labeled {row.label!r} fed to build of {label!r}")
        value = row.value.strip()
        if not value:
            continue
        uids.append(row.uid)
        values.append(value)
    if not uids:
        return {}
    arr = np.asarray(uids, dtype=np.uint64)
    return _build_cells(arr, values, label, plan, tablet_count)


@dataclass
class TableBuildStats:
    table: str
    row_count: int = 0
    unresolved_ids: int = 0
    empty_counts: dict[str, int] = field(default_factory=dict)
    value_sets: dict[str, set] = field(default_factory=dict)


@dataclass
class BuildResult:
    tablets: list[Tablet]
    label_metrics: dict[str, QualityMetrics]
    rows_total: int
    unresolved_total: int
    tables: list[str]

    def metrics_dict(self) -> dict:
        return {
            "rows_total": self.rows_total,
            "unresolved_total": self.unresolved_total,
            "tables": list(self.tables),
            "labels": {
                name: metrics.to_dict() for name, metrics in sorted(self.label_metrics.items())
            },
        }


def build_all(
    root: Path,
    catalog: Catalog,
    snapshot: IdSnapshot,
    plan: PartitionPlan,
    tablet_count: int,
    day: date,
    tables: list[str] | None = None,
) -> BuildResult:
    """Build every ready table's labels into one sealed tablet per shard.

    Ids that do not resolve through the snapshot are skipped and counted into
    the label quality metrics rather than failing the build. Metrics and
    lineage are recorded in the catalog; the caller persists it.
    """
    root = Path(root)
    if tables is None:
        tables = catalog.ready_tables(day)
    tables = sorted(tables)
    for table in tables:
        if not catalog.is_ready(table, day):
            raise TableNotReadyError(f"table {table!r} is not marked ready for {day.isoformat()}")
    tablets = [Tablet(t, tablet_count, day) for t in range(tablet_count)]
    label_metrics: dict[str, QualityMetrics] = {}
    all_labels: list[str] = []
    rows_total = 0
    unresolved_total = 0
    for table in tables:
        meta = catalog.table_meta(table)
        day_info = catalog.table_day(table, day)
        if not day_info or not day_info.get("staged_path"):
            raise PipelineError(f"table {table!r} has no staged rows for {day.isoformat()}")
        labels = catalog.labels_of_table(table)
        stats, per_label = _read_table_rows(
            root / day_info["staged_path"], meta.id_column, labels, catalog, snapshot
        )
        rows_total += stats.row_count
        unresolved_total += stats.unresolved_ids
        for label in labels:
            uid_list, value_list = per_label[label]
            cells = _build_cells(
                np.asarray(uid_list, dtype=np.uint64), value_list, label, plan, tablet_count
            ) if uid_list else {}
            for shard, entries in cells.items():
                for (cell_label, value), pair in entries.items():
                    tablets[shard].merge_entry(cell_label, value, pair)
            empty = stats.empty_counts.get(label, 0)
            metrics = QualityMetrics(
                row_count=stats.row_count,
                empty_ratio=(empty / stats.row_count) if stats.row_count else 1.0,
                value_cardinality=len(stats.value_sets.get(label, ())),
                unresolved_id_count=stats.unresolved_ids,
                last_updated=day,
            )
            label_metrics[label] = metrics
            catalog.record_metrics(label, metrics)
            all_labels.append(label)
        logger.info(
            "built table %s: %d rows, %d unresolved ids, labels %s",
            table,
            stats.row_count,
            stats.unresolved_ids,
            ",".join(labels),
        )
    if tables:
        catalog.register_build(day, tables, sorted(set(all_labels)))
    for tablet in tablets:
        tablet.seal()
    return BuildResult(
        tablets=tablets,
        label_metrics=label_metrics,
        rows_total=rows_total,
        unresolved_total=unresolved_total,
        tables=tables,
    )


def _read_table_rows(
    staged_path: Path,
    id_column: str,
    labels: list[str],
    catalog: Catalog,
    snapshot: IdSnapshot,
) -> tuple[TableBuildStats, dict[str, tuple[list[int], list[str]]]]:
    columns, rows = read_delimited(staged_path)
    if id_column not in columns:
        raise PipelineError(f"staged file {staged_path} lost id column {id_column!r}")
    id_idx = columns.index(id_column)
    label_cols: list[tuple[str, int]] = []
    for label in labels:
        source_column = catalog.label_meta(label).source_column
        if source_column not in columns:
            raise PipelineError(f"staged file {staged_path} lost column {source_column!r}")
        label_cols.append((label, columns.index(source_column)))
    stats = TableBuildStats(table=staged_path.stem)
    per_label: dict[str, tuple[list[int], list[str]]] = {label: ([], []) for label in labels}
    for fields in rows:
        stats.row_count += 1
        uid = snapshot.lookup(fields[id_idx])
        if uid is None:
            stats.unresolved_ids += 1
        for label, idx in label_cols:
            value = sys.intern(fields[idx].strip())
            if not value:
                stats.empty_counts[label] = stats.empty_counts.get(label, 0) + 1
                continue
            stats.value_sets.setdefault(label, set()).add(value)
            if uid is not None:
                uid_list, value_list = per_label[label]
                uid_list.append(uid)
                value_list.append(value)
    return stats, per_label
