"""In-memory event and run-state model.

A run is described by an ordered stream of :class:`MonitorEvent` values.
:func:`apply_event` folds one event into a :class:`RunState` without touching
its argument; :func:`fold` does the same for a whole sequence.
"""
import dataclasses
import enum
import json
from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import WfmonError, IllegalTransition, InvalidPayload, RunMismatch, UnknownSchemaVersion, UnknownTask
from .fsobserver import FileRecord
from .nodemon import NodeProfile, ResourceSample

SCHEMA_VERSION = 1


class TaskStatus(str, enum.Enum):
    SUBMITTED = "SUBMITTED"
    STARTED = "STARTED"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"
    CACHED = "CACHED"

    @property
    def terminal(self):
        return self in (TaskStatus.COMPLETED, TaskStatus.FAILED, TaskStatus.CACHED)


class EventKind(str, enum.Enum):
    RUN_START = "run_start"
    RUN_END = "run_end"
    TASK_SUBMITTED = "task_submitted"
    TASK_STARTED = "task_started"
    TASK_COMPLETED = "task_completed"
    TASK_FAILED = "task_failed"
    TASK_CACHED = "task_cached"
    FILE_OBSERVED = "file_observed"
    NODE_STATIC = "node_static"
    NODE_SAMPLE = "node_sample"


TASK_KINDS = frozenset({
    EventKind.TASK_SUBMITTED, EventKind.TASK_STARTED, EventKind.TASK_COMPLETED,
    EventKind.TASK_FAILED, EventKind.TASK_CACHED,
})
RUN_KINDS = frozenset({EventKind.RUN_START, EventKind.RUN_END})
EXEC_METHODS = ("local", "grid", "container", "unknown")


@dataclass(frozen=True)
class TaskInfo:
    """Task fields carried by a lifecycle event; ``None`` means not reported."""

    id: str
    name: Optional[str] = None
    attempt: Optional[int] = None
    parents: Optional[tuple] = None
    machine: Optional[str] = None
    exec_method: Optional[str] = None
    container: Optional[str] = None
    workdir: Optional[str] = None
    exit_code: Optional[int] = None

    def to_dict(self):
        d = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is not None:
                d[f.name] = list(value) if f.name == "parents" else value
        return d

    @classmethod
    def from_dict(cls, d):
        if "id" not in d:
            raise KeyError("id")
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in known}
        if kwargs.get("parents") is not None:
            kwargs["parents"] = tuple(kwargs["parents"])
        return cls(**kwargs)


@dataclass(frozen=True)
class NodeSample:
    hostname: str
    sample: ResourceSample

    def to_dict(self):
        return {"hostname": self.hostname, "sample": self.sample.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["hostname"], ResourceSample.from_dict(d["sample"]))


Payload = Union[TaskInfo, FileRecord, NodeProfile, NodeSample, None]


@dataclass(frozen=True)
class MonitorEvent:
    kind: EventKind
    timestamp: int  # epoch ms, UTC
    run_id: str
    payload: Payload = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        expected = payload_type(self.kind)
        if expected is None:
            ok = self.payload is None
        else:
            ok = isinstance(self.payload, expected)
        if not ok:
            raise InvalidPayload(f"{self.kind.value} event needs a {expected.__name__ if expected else 'empty'} payload")


def payload_type(kind):
    if kind in TASK_KINDS:
        return TaskInfo
    if kind == EventKind.FILE_OBSERVED:
        return FileRecord
    if kind == EventKind.NODE_STATIC:
        return NodeProfile
    if kind == EventKind.NODE_SAMPLE:
        return NodeSample
    return None


@dataclass(frozen=True)
class TaskRecord:
    task_id: str
    name: Optional[str] = None
    attempt: int = 0
    status: TaskStatus = TaskStatus.SUBMITTED
    submit_time: Optional[int] = None
    start_time: Optional[int] = None
    end_time: Optional[int] = None
    duration_ms: Optional[int] = None
    machine: Optional[str] = None
    exec_method: str = "unknown"
    container_image: Optional[str] = None
    workdir: Optional[str] = None
    parents: tuple = ()
    exit_code: Optional[int] = None
    files: tuple = ()
    extras: dict = field(default_factory=dict, hash=False, compare=True)

    @property
    def duration_s(self):
        return None if self.duration_ms is None else self.duration_ms / 1000.0

    def to_dict(self):
        return {
            "task_id": self.task_id,
            "name": self.name,
            "attempt": self.attempt,
            "status": self.status.value,
            "submit_time": self.submit_time,
            "start_time": self.start_time,
            "end_time": self.end_time,
            "duration_ms": self.duration_ms,
            "machine": self.machine,
            "exec_method": self.exec_method,
            "container_image": self.container_image,
            "workdir": self.workdir,
            "parents": list(self.parents),
            "exit_code": self.exit_code,
            "files": [f.to_dict() for f in self.files],
            "extras": dict(sorted(self.extras.items())),
        }


def clean_parents(task_id, parents):
    seen = []
    for p in parents:
        if p == task_id:
            raise InvalidPayload(f"task {task_id} lists itself as a parent")
        if p not in seen:
            seen.append(p)
    return tuple(seen)


@dataclass
class RunState:
    """Accumulated run state.

    ``tasks`` maps each task id to its latest attempt; superseded attempts are
    kept in ``previous_attempts``. ``machines`` maps a machine id to its
    profile, or ``None`` when only referenced (unknown profile).
    """

    run_id: Optional[str] = None
    started_at: Optional[int] = None
    ended_at: Optional[int] = None
    tasks: dict = field(default_factory=dict)
    previous_attempts: dict = field(default_factory=dict)
    machines: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    event_count: int = 0

    def copy(self):
        return dataclasses.replace(
            self,
            tasks=dict(self.tasks),
            previous_attempts=dict(self.previous_attempts),
            machines=dict(self.machines),
            files=dict(self.files),
            samples=dict(self.samples),
        )

    def all_attempts(self):
        for tid in sorted(self.tasks):
            yield from self.previous_attempts.get(tid, ())
            yield self.tasks[tid]

    def to_dict(self):
        return {
            "run_id": self.run_id,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "tasks": {k: self.tasks[k].to_dict() for k in sorted(self.tasks)},
            "previous_attempts": {
                k: [r.to_dict() for r in self.previous_attempts[k]] for k in sorted(self.previous_attempts)
            },
            "machines": {
                k: (self.machines[k].to_dict() if self.machines[k] else None) for k in sorted(self.machines)
            },
            "files": {k: self.files[k].to_dict() for k in sorted(self.files)},
            "samples": {k: [s.to_dict() for s in self.samples[k]] for k in sorted(self.samples)},
            "event_count": self.event_count,
        }

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class RunSummary:
    makespan_s: float
    task_counts: dict
    machine_count: int

    def to_dict(self):
        return {
            "makespan_s": self.makespan_s,
            "task_counts": {s.value: n for s, n in self.task_counts.items()},
            "machine_count": self.machine_count,
        }


# --- folding -------------------------------------------------------------

_TERMINAL_BY_KIND = {
    EventKind.TASK_COMPLETED: TaskStatus.COMPLETED,
    EventKind.TASK_FAILED: TaskStatus.FAILED,
}


def _merge_info(rec, info):
    changes = {}
    if info.name is not None:
        changes["name"] = info.name
    if info.machine is not None:
        changes["machine"] = info.machine
    if info.exec_method is not None:
        changes["exec_method"] = info.exec_method if info.exec_method in EXEC_METHODS else "unknown"
    if info.container is not None:
        changes["container_image"] = info.container
    if info.workdir is not None:
        changes["workdir"] = info.workdir
    if info.parents is not None:
        changes["parents"] = clean_parents(rec.task_id, info.parents)
    if info.exit_code is not None:
        changes["exit_code"] = info.exit_code
    return dataclasses.replace(rec, **changes) if changes else rec


def _next_task_record(state, ev):
    """Return (record, superseded) for a task event, or raise."""
    info = ev.payload
    tid = info.id
    attempt = 0 if info.attempt is None else info.attempt
    if attempt < 0:
        raise InvalidPayload(f"negative attempt for {tid}")
    cur = state.tasks.get(tid)
    kind = ev.kind

    def illegal(why):
        return IllegalTransition(f"{kind.value} for task {tid} (attempt {attempt}): {why}")

    if kind == EventKind.TASK_SUBMITTED:
        if cur is None:
            return _merge_info(TaskRecord(tid, attempt=attempt, submit_time=ev.timestamp), info), None
        if cur.status.terminal and attempt > cur.attempt:
            fresh = TaskRecord(tid, name=cur.name, attempt=attempt, submit_time=ev.timestamp, parents=cur.parents)
            return _merge_info(fresh, info), cur
        raise illegal(f"already {cur.status.value}")

    if kind == EventKind.TASK_CACHED:
        if cur is None:
            return _merge_info(TaskRecord(tid, attempt=attempt, status=TaskStatus.CACHED), info), None
        if cur.status == TaskStatus.CACHED and cur.attempt == attempt:
            return cur, None  # redelivery
        raise illegal(f"already {cur.status.value}")

    if cur is None:
        raise illegal("never submitted")
    if cur.attempt != attempt:
        raise illegal(f"current attempt is {cur.attempt}")

    if kind == EventKind.TASK_STARTED:
        if cur.status != TaskStatus.SUBMITTED:
            raise illegal(f"status is {cur.status.value}")
        rec = dataclasses.replace(cur, status=TaskStatus.STARTED, start_time=ev.timestamp)
        return _merge_info(rec, info), None

    target = _TERMINAL_BY_KIND[kind]
    if cur.status == target and cur.end_time == ev.timestamp:
        return cur, None  # identical terminal redelivery
    if cur.status != TaskStatus.STARTED:
        raise illegal(f"status is {cur.status.value}")
    rec = dataclasses.replace(
        cur, status=target, end_time=ev.timestamp, duration_ms=ev.timestamp - cur.start_time
    )
    return _merge_info(rec, info), None


def _apply_inplace(state, ev):
    """Validate ``ev`` against ``state`` and then mutate ``state``.

    Nothing is written until every check has passed, so a raised error leaves
    ``state`` untouched.
    """
    if ev.schema_version != SCHEMA_VERSION:
        raise UnknownSchemaVersion(str(ev.schema_version))
    if state.run_id is not None and ev.run_id != state.run_id:
        raise RunMismatch(f"event for run {ev.run_id!r} applied to run {state.run_id!r}")

    kind = ev.kind
    if kind in TASK_KINDS:
        rec, superseded = _next_task_record(state, ev)
        if superseded is not None:
            state.previous_attempts[rec.task_id] = state.previous_attempts.get(rec.task_id, ()) + (superseded,)
        state.tasks[rec.task_id] = rec
        if rec.machine is not None and rec.machine not in state.machines:
            state.machines[rec.machine] = None
    elif kind == EventKind.FILE_OBSERVED:
        frec = ev.payload
        owner = state.tasks.get(frec.task_id) if frec.task_id is not None else None
        if owner is None:
            raise UnknownTask(f"file {frec.path} observed for unknown task {frec.task_id!r}")
        kept = tuple(f for f in owner.files if (f.path, f.role) != (frec.path, frec.role))
        state.tasks[owner.task_id] = dataclasses.replace(owner, files=kept + (frec,))
        state.files[frec.path] = frec
    elif kind == EventKind.NODE_STATIC:
        state.machines[ev.payload.hostname] = ev.payload
    elif kind == EventKind.NODE_SAMPLE:
        host = ev.payload.hostname
        state.samples[host] = state.samples.get(host, ()) + (ev.payload.sample,)
        state.machines.setdefault(host, None)
    elif kind == EventKind.RUN_START:
        if state.started_at is None:
            state.started_at = ev.timestamp
    elif kind == EventKind.RUN_END:
        state.ended_at = ev.timestamp

    if state.run_id is None:
        state.run_id = ev.run_id
    state.event_count += 1


def apply_event(state: RunState, ev: MonitorEvent) -> RunState:
    new = state.copy()
    _apply_inplace(new, ev)
    return new


def fold(events, state=None, on_error=None) -> RunState:
    """Fold a sequence of events into a (new) RunState.

    Without ``on_error`` the first failing event raises. With it, failing
    events are reported as ``on_error(event, exc)`` and skipped.
    """
    out = state.copy() if state is not None else RunState()
    for ev in events:
        try:
            _apply_inplace(out, ev)
        except WfmonError as exc:
            if on_error is None:
                raise
            on_error(ev, exc)
    return out


def makespan_ms(records):
    starts = [r.start_time for r in records if r.start_time is not None and r.end_time is not None]
    ends = [r.end_time for r in records if r.start_time is not None and r.end_time is not None]
    if not starts:
        return 0
    return max(max(ends) - min(starts), 0)


def finalize_run(state: RunState) -> RunSummary:
    counts = {s: 0 for s in TaskStatus}
    for rec in state.tasks.values():
        counts[rec.status] += 1
    return RunSummary(
        makespan_s=makespan_ms(list(state.all_attempts())) / 1000.0,
        task_counts=counts,
        machine_count=len(state.machines),
    )
