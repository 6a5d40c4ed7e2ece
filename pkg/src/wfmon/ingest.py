"""JSON Lines wire protocol, live stream follower and trace-table adapter.

Wire form of one event (one line, UTF-8)::

    {"v":1,"ts":"2025-01-01T00:00:00.000Z","kind":"task_started","run_id":"r1",
     "task":{"id":"t1","name":"fastqc"}}

Task events carry ``task``, ``file_observed`` carries ``file``, node events
carry ``node``; ``run_start``/``run_end`` carry no payload.
"""
import json
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import (
    HeaderMissing, InvalidPayload, MalformedJson, MissingField, RaggedRow,
    UnknownKind, UnknownSchemaVersion, WfmonError,
)
from .events import (
    SCHEMA_VERSION, TASK_KINDS, EventKind, MonitorEvent, NodeSample, TaskInfo,
    TaskRecord, TaskStatus,
)
from .fsobserver import FileRecord
from .nodemon import NodeProfile
from .timeutil import format_ms, parse_ms

_PAYLOAD_KEYS = ("task", "file", "node")


def _payload_key(kind):
    if kind in TASK_KINDS:
        return "task"
    if kind == EventKind.FILE_OBSERVED:
        return "file"
    if kind in (EventKind.NODE_STATIC, EventKind.NODE_SAMPLE):
        return "node"
    return None


def serialize_event(ev: MonitorEvent) -> str:
    """One wire line for ``ev``, without the trailing newline."""
    obj = {"v": ev.schema_version, "ts": format_ms(ev.timestamp), "kind": ev.kind.value, "run_id": ev.run_id}
    key = _payload_key(ev.kind)
    if key is not None:
        obj[key] = ev.payload.to_dict()
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def parse_event_line(line) -> MonitorEvent:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"invalid UTF-8: {exc}") from None
    try:
        obj = json.loads(line.strip())
    except json.JSONDecodeError as exc:
        raise MalformedJson(str(exc)) from None
    if not isinstance(obj, dict):
        raise MalformedJson("event line is not a JSON object")

    for name in ("v", "ts", "kind", "run_id"):
        if name not in obj:
            raise MissingField(name)
        if name == "v" and obj["v"] != SCHEMA_VERSION:
            raise UnknownSchemaVersion(str(obj["v"]))
    try:
        ts = parse_ms(obj["ts"])
    except (TypeError, ValueError):
        raise MalformedJson(f"bad timestamp {obj['ts']!r}") from None
    try:
        kind = EventKind(obj["kind"])
    except ValueError:
        raise UnknownKind(str(obj["kind"])) from None
    if not isinstance(obj["run_id"], str):
        raise MalformedJson("run_id must be a string")

    key = _payload_key(kind)
    present = [k for k in _PAYLOAD_KEYS if k in obj]
    if key is not None and key not in obj:
        raise MissingField(key)
    if present != ([key] if key else []):
        raise InvalidPayload(f"{kind.value} event carries payload keys {present}")

    payload = None
    if key is not None:
        raw = obj[key]
        if not isinstance(raw, dict):
            raise MalformedJson(f"{key} must be an object")
        try:
            if key == "task":
                payload = TaskInfo.from_dict(raw)
            elif key == "file":
                payload = FileRecord.from_dict(raw)
            elif kind == EventKind.NODE_STATIC:
                payload = NodeProfile.from_dict(raw)
            else:
                payload = NodeSample.from_dict(raw)
        except KeyError as exc:
            raise MissingField(f"{key}.{exc.args[0]}") from None
        except (TypeError, ValueError) as exc:
            raise InvalidPayload(str(exc)) from None
    return MonitorEvent(kind=kind, timestamp=ts, run_id=obj["run_id"], payload=payload,
                        schema_version=obj["v"])


def dumps_events(events) -> str:
    return "".join(serialize_event(ev) + "\n" for ev in events)


@dataclass
class LineDiagnostic:
    line_number: int
    error: str
    message: str

    def __str__(self):
        return f"line {self.line_number}: {self.error}: {self.message}"


def parse_events(text, diagnostics=None):
    """Batch-parse a whole events document.

    Blank lines are skipped. Bad lines raise unless a ``diagnostics`` list is
    supplied, in which case they are recorded there and skipped.
    """
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(parse_event_line(line))
        except WfmonError as exc:
            if diagnostics is None:
                raise
            diagnostics.append(LineDiagnostic(n, type(exc).__name__, str(exc)))
    return out


@dataclass
class FollowReport:
    delivered: int = 0
    residue: bytes = b""
    diagnostics: list = field(default_factory=list)


class LineFollower:
    """Incremental framer: push byte chunks, complete lines are parsed and handed on."""

    def __init__(self, sink: Callable, on_diagnostic: Optional[Callable] = None):
        self.sink = sink
        self.on_diagnostic = on_diagnostic
        self.report = FollowReport()
        self._buf = bytearray()
        self._line_no = 0

    def feed(self, chunk: bytes):
        self._buf += chunk
        start = 0
        while True:
            nl = self._buf.find(b"\n", start)
            if nl < 0:
                break
            self._handle(bytes(self._buf[start:nl]))
            start = nl + 1
        del self._buf[:start]

    def _handle(self, raw):
        self._line_no += 1
        if not raw.strip():
            return
        try:
            ev = parse_event_line(raw)
        except WfmonError as exc:
            diag = LineDiagnostic(self._line_no, type(exc).__name__, str(exc))
            self.report.diagnostics.append(diag)
            if self.on_diagnostic is not None:
                self.on_diagnostic(diag)
            return
        self.report.delivered += 1
        self.sink(ev)

    def close(self) -> FollowReport:
        self.report.residue = bytes(self._buf)
        return self.report


def follow_stream(source, sink, on_diagnostic=None) -> FollowReport:
    """Deliver every complete line of ``source`` to ``sink`` in order.

    ``source`` is an iterable of byte chunks or a binary file object. A
    trailing partial line is never delivered; it is returned as ``residue``.
    """
    follower = LineFollower(sink, on_diagnostic)
    if hasattr(source, "read"):
        chunks = iter(lambda: source.read(65536), b"")
    else:
        chunks = source
    for chunk in chunks:
        if chunk:
            follower.feed(chunk)
    return follower.close()


# --- trace tables --------------------------------------------------------

TRACE_COLUMNS = (
    "task_id", "name", "status", "submit", "start", "complete",
    "duration", "realtime", "%cpu", "rss", "container", "workdir",
)
_UNITS_MS = {"ms": 1, "s": 1000, "m": 60_000, "h": 3_600_000, "d": 86_400_000}
_DURATION_TOKEN = re.compile(r"(\d+(?:\.\d+)?)\s*(ms|s|m|h|d)")
_STATUS_MAP = {
    "COMPLETED": TaskStatus.COMPLETED,
    "FAILED": TaskStatus.FAILED,
    "ABORTED": TaskStatus.FAILED,
    "CACHED": TaskStatus.CACHED,
    "SUBMITTED": TaskStatus.SUBMITTED,
    "NEW": TaskStatus.SUBMITTED,
    "RUNNING": TaskStatus.STARTED,
    "STARTED": TaskStatus.STARTED,
}


def parse_duration_ms(text):
    """``"2m 30s"`` -> 150000. ``"-"`` or empty -> None."""
    text = text.strip()
    if text in ("", "-"):
        return None
    pos = 0
    total = 0.0
    for m in _DURATION_TOKEN.finditer(text):
        if text[pos:m.start()].strip():
            raise ValueError(f"bad duration {text!r}")
        total += float(m.group(1)) * _UNITS_MS[m.group(2)]
        pos = m.end()
    if pos == 0 or text[pos:].strip():
        raise ValueError(f"bad duration {text!r}")
    return round(total)


def _cell(row, idx, name):
    i = idx.get(name)
    if i is None:
        return None
    value = row[i].strip()
    return None if value in ("", "-") else value


def parse_trace_table(text) -> list:
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise HeaderMissing("trace table is empty")
    header = [h.strip() for h in lines[0].split("\t")]
    idx = {name: i for i, name in enumerate(header)}
    if "task_id" not in idx:
        raise HeaderMissing("header lacks a task_id column")
    extra_cols = [h for h in header if h not in TRACE_COLUMNS]
    records = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        row = line.split("\t")
        if len(row) != len(header):
            raise RaggedRow(lineno, f"{len(row)} cells, header has {len(header)}")
        get = lambda name: _cell(row, idx, name)  # noqa: E731
        try:
            submit = parse_ms(get("submit")) if get("submit") else None
            start = parse_ms(get("start")) if get("start") else None
            end = parse_ms(get("complete")) if get("complete") else None
            realtime = parse_duration_ms(get("realtime") or "-")
        except ValueError as exc:
            raise RaggedRow(lineno, str(exc)) from None
        duration = end - start if start is not None and end is not None else realtime
        raw_status = (get("status") or "").upper()
        status = _STATUS_MAP.get(raw_status, TaskStatus.COMPLETED if end is not None else TaskStatus.SUBMITTED)
        extras = {c: row[idx[c]] for c in extra_cols}
        for c in ("duration", "realtime", "%cpu", "rss"):
            if get(c) is not None:
                extras[c] = get(c)
        if raw_status and raw_status not in _STATUS_MAP:
            extras["status"] = raw_status
        container = get("container")
        records.append(TaskRecord(
            task_id=get("task_id") or f"row{lineno}",
            name=get("name"),
            status=status,
            submit_time=submit,
            start_time=start,
            end_time=end,
            duration_ms=duration,
            exec_method="container" if container else "unknown",
            container_image=container,
            workdir=get("workdir"),
            extras=extras,
        ))
    return records
