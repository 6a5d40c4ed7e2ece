from wfmon.events import EventKind, MonitorEvent, TaskInfo, TaskRecord, TaskStatus
from wfmon.fsobserver import FileRecord

RUN = "r1"


def ev(kind, ts, payload=None, run_id=RUN):
    return MonitorEvent(EventKind(kind), ts, run_id, payload)


def task_ev(kind, ts, tid, **kw):
    return ev(kind, ts, TaskInfo(tid, **kw))


def lifecycle(tid, start, end, parents=(), machine=None, submit=None):
    submit = start if submit is None else submit
    return [
        task_ev("task_submitted", submit, tid, parents=tuple(parents)),
        task_ev("task_started", start, tid, machine=machine),
        task_ev("task_completed", end, tid, exit_code=0),
    ]


def record(tid, duration_ms=None, parents=(), machine=None, start=None, name=None):
    end = None
    if start is not None and duration_ms is not None:
        end = start + duration_ms
    return TaskRecord(
        task_id=tid,
        name=name,
        status=TaskStatus.COMPLETED if end is not None else TaskStatus.STARTED,
        start_time=start,
        end_time=end,
        duration_ms=duration_ms,
        parents=tuple(parents),
        machine=machine,
    )


def frec(path, task_id, role, size=1, mtime=0):
    return FileRecord(path=path, size_bytes=size, mtime=mtime, role=role, task_id=task_id)


def cpu_line(busy, idle, iowait=0):
    """An aggregate /proc/stat-style cpu line with the given tick totals."""
    return f"cpu  {busy} 0 0 {idle} {iowait} 0 0 0 0 0\n"


def mem_text(total_kb, available_kb):
    return f"MemTotal: {total_kb} kB\nMemAvailable: {available_kb} kB\n"


def net_text(rx, tx, iface="eth0"):
    return (
        "Inter-|   Receive |  Transmit\n"
        " face |bytes packets|bytes packets\n"
        f"  {iface}: {rx} 0 0 0 0 0 0 0 {tx} 0 0 0 0 0 0 0\n"
    )


def counter_frames(busy_idle, mem=(4096, 2048), net=None):
    """Replay frames from a list of cumulative (busy, idle) tick pairs."""
    net = net or [(0, 0)] * len(busy_idle)
    return [
        {"cpu_counters": cpu_line(b, i), "mem_info": mem_text(*mem), "net_counters": net_text(rx, tx)}
        for (b, i), (rx, tx) in zip(busy_idle, net)
    ]


class StepClock:
    """Deterministic clock advancing a fixed step per call."""

    def __init__(self, start=0, step=1000):
        self.t = start - step
        self.step = step

    def __call__(self):
        self.t += self.step
        return self.t
