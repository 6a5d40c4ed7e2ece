"""Physical execution graph, built online from task records and file observations.

Edges come from two sources: parents a task declares (label ``parent``) and
files one task writes and another reads (label ``file:<path>``). Either
endpoint may arrive first; the edge materializes once both vertices exist.
"""
import csv
import heapq
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field

from .errors import CycleIntroduced, CyclicGraph
from .events import makespan_ms

PARENT = "parent"
UNASSIGNED = "unassigned"


def file_label(path):
    return f"file:{path}"


@dataclass
class RejectedEdge:
    producer: str
    consumer: str
    label: str


class ExecGraph:
    def __init__(self):
        self.vertices = {}  # task id -> TaskRecord
        self.edges = {}  # (producer, consumer) -> frozenset of labels
        self._succ = defaultdict(set)
        self._pred = defaultdict(set)
        self._pending = defaultdict(set)  # missing parent -> declared children
        self._producers = defaultdict(set)  # path -> task ids writing it
        self._consumers = defaultdict(set)  # path -> task ids reading it
        self.attempts = {}  # (task id, attempt) -> TaskRecord, superseded ones included
        self.rejected = []

    # -- mutation --------------------------------------------------------

    def _reaches(self, start, goal, extra):
        """True if ``goal`` is reachable from ``start`` over current + extra edges."""
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            if u == goal:
                return True
            nxt = set(self._succ.get(u, ())) | extra.get(u, set())
            for w in nxt:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return False

    def _add_edge(self, u, v, label):
        self.edges[(u, v)] = self.edges.get((u, v), frozenset()) | {label}
        self._succ[u].add(v)
        self._pred[v].add(u)

    def insert_task(self, rec):
        """Add or update the vertex for ``rec`` and materialize its edges.

        Raises CycleIntroduced and leaves the graph unchanged if the new edges
        would close a cycle.
        """
        tid = rec.task_id
        is_new = tid not in self.vertices
        candidates = []
        missing = []
        for p in rec.parents:
            if p == tid:
                continue
            if p in self.vertices:
                candidates.append((p, tid, PARENT))
            else:
                missing.append(p)
        if is_new:
            for child in sorted(self._pending.get(tid, ())):
                if child in self.vertices:
                    candidates.append((tid, child, PARENT))
            for path, producers in self._producers.items():
                if tid in producers:
                    candidates += [(tid, c, file_label(path)) for c in sorted(self._consumers[path])
                                   if c != tid and c in self.vertices]
            for path, consumers in self._consumers.items():
                if tid in consumers:
                    candidates += [(p, tid, file_label(path)) for p in sorted(self._producers[path])
                                   if p != tid and p in self.vertices]

        extra = defaultdict(set)
        for u, v, _ in candidates:
            extra[u].add(v)
        # every candidate edge touches tid, so any new cycle passes through it
        for v in set(self._succ.get(tid, ())) | extra.get(tid, set()):
            if self._reaches(v, tid, extra):
                raise CycleIntroduced(f"inserting {tid} closes a cycle", [(a, b) for a, b, _ in candidates])

        self.vertices[tid] = rec
        self.attempts[(tid, rec.attempt)] = rec
        for u, v, label in candidates:
            self._add_edge(u, v, label)
        if is_new:
            self._pending.pop(tid, None)
        for p in missing:
            self._pending[p].add(tid)

    def update_record(self, rec):
        """Swap in a newer record for an existing vertex; edges are untouched."""
        if rec.task_id in self.vertices:
            self.vertices[rec.task_id] = rec
            self.attempts[(rec.task_id, rec.attempt)] = rec

    def note_attempt(self, rec):
        """Remember a superseded attempt; it only widens the makespan."""
        self.attempts.setdefault((rec.task_id, rec.attempt), rec)

    def derive_edges(self, files):
        """Register file observations and add producer->consumer edges.

        Edges that would close a cycle are skipped; they are returned (and
        appended to ``self.rejected``) while the rest are applied.
        """
        touched = set()
        for f in files:
            if f.task_id is None or f.role not in ("input", "output"):
                continue
            index = self._producers if f.role == "output" else self._consumers
            if f.task_id not in index[f.path]:
                index[f.path].add(f.task_id)
                touched.add(f.path)
        rejected = []
        for path in sorted(touched):
            label = file_label(path)
            for p in sorted(self._producers.get(path, ())):
                for c in sorted(self._consumers.get(path, ())):
                    if p == c or p not in self.vertices or c not in self.vertices:
                        continue
                    if label in self.edges.get((p, c), ()):
                        continue
                    if self._reaches(c, p, {}):
                        rejected.append(RejectedEdge(p, c, label))
                        continue
                    self._add_edge(p, c, label)
        self.rejected.extend(rejected)
        return rejected

    # -- views -----------------------------------------------------------

    def successors(self, v):
        return sorted(self._succ.get(v, ()))

    def predecessors(self, v):
        return sorted(self._pred.get(v, ()))

    def copy(self):
        g = ExecGraph()
        g.vertices = dict(self.vertices)
        g.edges = dict(self.edges)
        for src, dst in ((self._succ, g._succ), (self._pred, g._pred), (self._pending, g._pending),
                         (self._producers, g._producers), (self._consumers, g._consumers)):
            for k, v in src.items():
                dst[k] = set(v)
        g.attempts = dict(self.attempts)
        g.rejected = list(self.rejected)
        return g

    def to_dict(self):
        return {
            "vertices": sorted(self.vertices),
            "edges": [[u, v, sorted(self.edges[(u, v)])] for u, v in sorted(self.edges)],
        }

    def dumps(self):
        return json.dumps(self.to_dict(), separators=(",", ":"))


def build_graph(state):
    """Graph of the latest attempt of every task in ``state``.

    Tasks whose insertion would close a cycle are left out and listed in
    ``g.rejected``.
    """
    g = ExecGraph()
    for tid in sorted(state.tasks):
        try:
            g.insert_task(state.tasks[tid])
        except CycleIntroduced:
            g.rejected.append(RejectedEdge("", tid, "cycle"))
            continue
        for old in state.previous_attempts.get(tid, ()):
            g.note_attempt(old)
    files = [f for tid in sorted(g.vertices) for f in g.vertices[tid].files]
    g.derive_edges(files)
    return g


# --- analyses ------------------------------------------------------------


def topological_order(g):
    """Kahn's algorithm, smallest task id first among ready vertices."""
    indeg = {v: 0 for v in g.vertices}
    for _, v in g.edges:
        indeg[v] += 1
    ready = [v for v, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        u = heapq.heappop(ready)
        order.append(u)
        for w in g.successors(u):
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(ready, w)
    if len(order) != len(g.vertices):
        raise CyclicGraph("execution graph contains a cycle")
    return order


@dataclass
class CriticalPathReport:
    path: list = field(default_factory=list)
    length_ms: int = 0
    makespan_ms: int = 0

    @property
    def length_s(self):
        return self.length_ms / 1000.0

    @property
    def makespan_s(self):
        return self.makespan_ms / 1000.0

    def to_dict(self):
        return {"path": list(self.path), "length_s": self.length_s, "makespan_s": self.makespan_s}


def _weight(rec):
    return rec.duration_ms or 0


def critical_path(g) -> CriticalPathReport:
    """Longest vertex-weighted path; ties go to the lexicographically smallest id sequence."""
    order = topological_order(g)
    best = {}
    for v in reversed(order):
        w = _weight(g.vertices[v])
        cand_w, cand_seq = w, (v,)
        for s in g.successors(v):
            sw, sseq = best[s]
            tw, tseq = w + sw, (v,) + sseq
            if tw > cand_w or (tw == cand_w and tseq < cand_seq):
                cand_w, cand_seq = tw, tseq
        best[v] = (cand_w, cand_seq)
    # every attempt counts towards the wall-clock span, as in the run summary
    spans = [r for (tid, _), r in g.attempts.items() if tid in g.vertices]
    report = CriticalPathReport(makespan_ms=makespan_ms(spans))
    if best:
        top_w = max(w for w, _ in best.values())
        top_seq = min(seq for w, seq in best.values() if w == top_w)
        report.path = list(top_seq)
        report.length_ms = top_w
    return report


def node_assignment(g) -> dict:
    """Machine id -> task ids ordered by start time then id; machine-less tasks under ``unassigned``."""
    groups = defaultdict(list)
    for tid, rec in g.vertices.items():
        groups[rec.machine if rec.machine is not None else UNASSIGNED].append(rec)
    out = {}
    for machine in sorted(groups, key=lambda m: (m == UNASSIGNED, m)):
        recs = sorted(groups[machine], key=lambda r: (r.start_time is None, r.start_time or 0, r.task_id))
        out[machine] = [r.task_id for r in recs]
    return out


def _q(s):
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


DOT_PREAMBLE = (
    '  graph [rankdir=LR, fontname="Helvetica"];\n'
    '  node [shape=box, style=filled, color="#1f77b4", fillcolor="#c6dbef", fontname="Helvetica"];\n'
    '  edge [color="#4d4d4d"];\n'
)


def export_dot(g, assignment=None) -> str:
    """DOT text: task nodes in blue, one green ``cluster_<machine>`` per machine."""
    if assignment is None:
        assignment = node_assignment(g)
    out = ["digraph run {\n", DOT_PREAMBLE]

    def node_line(tid, indent):
        rec = g.vertices[tid]
        label = tid if not rec.name else f"{tid}\n{rec.name}"
        return f"{indent}{_q(tid)} [label={_q(label)}];\n"

    for machine in sorted(assignment):
        tids = [t for t in assignment[machine] if t in g.vertices]
        if machine == UNASSIGNED:
            continue
        out.append(f"  subgraph {_q('cluster_' + machine)} {{\n")
        out.append(f'    label={_q(machine)};\n    style=filled;\n    color="#2ca02c";\n    fillcolor="#e5f5e0";\n')
        out += [node_line(t, "    ") for t in sorted(tids)]
        out.append("  }\n")
    for t in sorted(t for t in assignment.get(UNASSIGNED, ()) if t in g.vertices):
        out.append(node_line(t, "  "))
    for u, v in sorted(g.edges):
        style = "" if PARENT in g.edges[(u, v)] else " [style=dashed]"
        out.append(f"  {_q(u)} -> {_q(v)}{style};\n")
    out.append("}\n")
    return "".join(out)


GANTT_HEADER = ["task_id", "machine", "start_ms", "end_ms", "duration_ms"]


def gantt_rows(g):
    timed = [r for r in g.vertices.values() if r.start_time is not None and r.end_time is not None]
    timed.sort(key=lambda r: (r.start_time, r.task_id))
    return timed, len(g.vertices) - len(timed)


def export_gantt(g) -> str:
    """CSV of timed tasks (epoch ms); untimed tasks are counted in a trailing comment."""
    timed, omitted = gantt_rows(g)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(GANTT_HEADER)
    for r in timed:
        writer.writerow([r.task_id, r.machine or "", r.start_time, r.end_time, r.end_time - r.start_time])
    buf.write(f"# omitted: {omitted}\n")
    return buf.getvalue()
