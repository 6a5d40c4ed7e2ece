"""Online fold of an event stream into run state and the partial graph."""
import threading

from .errors import CycleIntroduced, WfmonError
from .events import TASK_KINDS, EventKind, RunState, _apply_inplace
from .graph import ExecGraph


class OnlineMonitor:
    """Single writer: ``feed`` events in order; readers take ``snapshot``s.

    Events that cannot be applied are recorded in ``diagnostics`` and skipped,
    so a bad line never stops a live run from being followed.
    """

    def __init__(self):
        self.state = RunState()
        self.graph = ExecGraph()
        self.diagnostics = []
        self.saw_run_end = False
        self._lock = threading.Lock()

    def feed(self, ev):
        with self._lock:
            try:
                _apply_inplace(self.state, ev)
            except WfmonError as exc:
                self.diagnostics.append(f"{type(exc).__name__}: {exc}")
                return
            try:
                if ev.kind in TASK_KINDS:
                    tid = ev.payload.id
                    self.graph.insert_task(self.state.tasks[tid])
                    for old in self.state.previous_attempts.get(tid, ()):
                        self.graph.attempts[(tid, old.attempt)] = old
                elif ev.kind == EventKind.FILE_OBSERVED:
                    for r in self.graph.derive_edges([ev.payload]):
                        self.diagnostics.append(f"CycleIntroduced: skipped {r.producer} -> {r.consumer} ({r.label})")
                    self.graph.update_record(self.state.tasks[ev.payload.task_id])
            except CycleIntroduced as exc:
                self.diagnostics.append(f"CycleIntroduced: {exc}")
            if ev.kind == EventKind.RUN_END:
                self.saw_run_end = True

    def __call__(self, ev):
        self.feed(ev)

    def snapshot(self):
        with self._lock:
            return self.state.copy(), self.graph.copy()
