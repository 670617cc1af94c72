"""Task manager: a readiness checker plus a dependency-gated dispatcher.

``check_cycle`` polls the catalog and creates at most one id-mapping and one
bitmap-build instance per day (the mapping gates the build). ``dispatch``
runs runnable instances in priority order within a worker budget, captures
execution failures into the failed state, and reports per-instance metrics
to the catalog. Instance states persist next to the catalog so a restarted
process resumes without redoing finished work.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable

from .catalog import Catalog
from .ioutil import atomic_write_bytes

KIND_ID_MAPPING = "id-mapping"
KIND_BITMAP_BUILD = "bitmap-build"

STATE_WAITING = "waiting"
STATE_RUNNABLE = "runnable"
STATE_RUNNING = "running"
STATE_DONE = "done"
STATE_FAILED = "failed"

INSTANCES_FILENAME = "instances.json"


@dataclass
class TaskInstance:
    instance_id: str
    kind: str
    target: tuple[str, ...]
    day: date
    state: str
    priority: int = 0
    deps: tuple[str, ...] = ()
    seq: int = 0
    attempts: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "kind": self.kind,
            "target": list(self.target),
            "day": self.day.isoformat(),
            "state": self.state,
            "priority": self.priority,
            "deps": list(self.deps),
            "seq": self.seq,
            "attempts": self.attempts,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TaskInstance":
        return cls(
            instance_id=raw["instance_id"],
            kind=raw["kind"],
            target=tuple(raw["target"]),
            day=date.fromisoformat(raw["day"]),
            state=raw["state"],
            priority=raw["priority"],
            deps=tuple(raw["deps"]),
            seq=raw["seq"],
            attempts=raw["attempts"],
            error=raw.get("error"),
        )


Executor = Callable[[TaskInstance], None]


class Scheduler:
    """In-process control loop state: instances, event log, persistence."""

    def __init__(self, persist_path: Path | None = None) -> None:
        self.persist_path = Path(persist_path) if persist_path else None
        self.instances: dict[str, TaskInstance] = {}
        self.events: list[str] = []
        self._seq = 0

    # -- persistence -------------------------------------------------------

    @classmethod
    def load(cls, persist_path: Path) -> "Scheduler":
        sched = cls(persist_path)
        path = Path(persist_path)
        if path.exists():
            raw = json.loads(path.read_text("utf-8"))
            sched._seq = raw.get("next_seq", 0)
            for item in raw.get("instances", []):
                inst = TaskInstance.from_dict(item)
                if inst.state == STATE_RUNNING:
                    # Interrupted mid-run; the work is idempotent, run it again.
                    inst.state = STATE_RUNNABLE
                    sched._log(f"recover {inst.instance_id} running->runnable")
                sched.instances[inst.instance_id] = inst
        return sched

    def save(self) -> None:
        if self.persist_path is None:
            return
        payload = {
            "next_seq": self._seq,
            "instances": [
                self.instances[k].to_dict()
                for k in sorted(self.instances, key=lambda i: self.instances[i].seq)
            ],
        }
        atomic_write_bytes(
            self.persist_path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode()
        )

    # -- instance creation ----------------------------------------------------

    def _log(self, event: str) -> None:
        self.events.append(event)

    def add_instance(
        self,
        kind: str,
        target: tuple[str, ...],
        day: date,
        priority: int = 0,
        deps: tuple[str, ...] = (),
        instance_id: str | None = None,
    ) -> TaskInstance | None:
        """Create an instance once; repeats with the same id are no-ops."""
        instance_id = instance_id or f"{kind}:{day.isoformat()}"
        if instance_id in self.instances:
            return None
        inst = TaskInstance(
            instance_id=instance_id,
            kind=kind,
            target=tuple(target),
            day=day,
            state=STATE_WAITING if deps else STATE_RUNNABLE,
            priority=priority,
            deps=tuple(deps),
            seq=self._seq,
        )
        self._seq += 1
        self.instances[instance_id] = inst
        self._log(f"create {instance_id} state={inst.state} priority={priority}")
        return inst

    def check_cycle(self, catalog: Catalog, day: date, priority: int = 0) -> list[TaskInstance]:
        """One checker pass: instantiate the day's pipeline for ready tables."""
        ready = tuple(catalog.ready_tables(day))
        created: list[TaskInstance] = []
        if not ready:
            self._log(f"cycle day={day.isoformat()} ready=0")
            return created
        self._log(f"cycle day={day.isoformat()} ready={len(ready)}")
        mapping = self.add_instance(KIND_ID_MAPPING, ready, day, priority=priority)
        if mapping is not None:
            created.append(mapping)
        mapping_id = f"{KIND_ID_MAPPING}:{day.isoformat()}"
        build = self.add_instance(
            KIND_BITMAP_BUILD, ready, day, priority=priority, deps=(mapping_id,)
        )
        if build is not None:
            created.append(build)
        if self.persist_path is not None:
            self.save()
        return created

    # -- dispatch ----------------------------------------------------------------

    def _promote(self) -> None:
        for inst in sorted(self.instances.values(), key=lambda i: i.seq):
            if inst.state != STATE_WAITING:
                continue
            deps = [self.instances.get(d) for d in inst.deps]
            if any(d is None for d in deps):
                continue
            if all(d.state == STATE_DONE for d in deps):
                inst.state = STATE_RUNNABLE
                self._log(f"promote {inst.instance_id} waiting->runnable")

    def runnable(self) -> list[TaskInstance]:
        """Runnable instances, highest priority first, creation order breaking ties."""
        self._promote()
        return sorted(
            (i for i in self.instances.values() if i.state == STATE_RUNNABLE),
            key=lambda i: (-i.priority, i.seq),
        )

    def dispatch(
        self,
        executor: Executor,
        budget: int = 1,
        retries: int = 0,
        catalog: Catalog | None = None,
        waves: int | None = None,
    ) -> dict[str, str]:
        """Run runnable instances until none remain (or ``waves`` is exhausted).

        Execution errors become state=failed (after ``retries`` re-attempts);
        dependents of a failed instance stay waiting. Returns the final state
        of every touched instance.
        """
        if budget < 1:
            raise ValueError("worker budget must be at least 1")
        touched: dict[str, str] = {}
        wave = 0
        while True:
            if waves is not None and wave >= waves:
                break
            ready = self.runnable()
            if not ready:
                break
            wave += 1
            for inst in ready[:budget]:
                inst.state = STATE_RUNNING
                inst.attempts += 1
                self._log(f"run {inst.instance_id} attempt={inst.attempts}")
                started = time.perf_counter()
                try:
                    executor(inst)
                except Exception as exc:  # noqa: BLE001 - failures become task state
                    if inst.attempts <= retries:
                        inst.state = STATE_RUNNABLE
                        self._log(f"retry {inst.instance_id}")
                    else:
                        inst.state = STATE_FAILED
                        inst.error = str(exc)
                        self._log(f"finish {inst.instance_id} state=failed")
                else:
                    inst.state = STATE_DONE
                    inst.error = None
                    self._log(f"finish {inst.instance_id} state=done")
                duration_ms = (time.perf_counter() - started) * 1000.0
                touched[inst.instance_id] = inst.state
                if catalog is not None:
                    catalog.record_task_run(
                        inst.instance_id,
                        {
                            "kind": inst.kind,
                            "day": inst.day.isoformat(),
                            "outcome": inst.state,
                            "duration_ms": round(duration_ms, 3),
                            "error": inst.error,
                        },
                    )
                if self.persist_path is not None:
                    self.save()
        return touched

    # -- inspection ----------------------------------------------------------------

    def instances_for_day(self, day: date) -> list[TaskInstance]:
        return sorted(
            (i for i in self.instances.values() if i.day == day), key=lambda i: i.seq
        )

    def event_log(self) -> list[str]:
        return list(self.events)
