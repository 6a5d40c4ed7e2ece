"""Deterministic synthetic workflow runs.

Randomness comes from SplitMix64 (Steele, Lea & Flood 2014) with the
published constants, so a seed maps to the same stream on any platform.
Integer draws in ``[0, n)`` use rejection sampling on the raw 64-bit output;
floats use the top 53 bits.

The simulator keeps its own schedule and computes reference answers
(makespan, critical-path length, edge count) from it directly, without going
through :mod:`wfmon.graph`.
"""
from dataclasses import dataclass, field
from typing import Optional

from .events import EventKind, MonitorEvent, NodeSample, TaskInfo
from .fsobserver import FileRecord
from .ingest import dumps_events
from .nodemon import Nic, NodeProfile, ResourceSample
from .timeutil import parse_ms

MASK64 = (1 << 64) - 1
BASE_TIME_MS = parse_ms("2025-01-01T00:00:00.000Z")
DAG_SHAPES = ("chain", "fork-join", "layered-random")
PROCESS_NAMES = (
    "FASTQC", "TRIMGALORE", "STAR_ALIGN", "SAMTOOLS_SORT", "SAMTOOLS_INDEX",
    "SALMON_QUANT", "PICARD_MARKDUPLICATES", "STRINGTIE", "QUALIMAP_RNASEQ",
    "DUPRADAR", "BEDTOOLS_GENOMECOV", "MULTIQC",
)


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK64

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n):
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def randint(self, lo, hi):
        return lo + self.below(hi - lo + 1)

    def random(self):
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def sample(self, items, k):
        """k distinct items, partial Fisher-Yates on a copy."""
        pool = list(items)
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    task_count: int = 20
    machine_count: int = 3
    dag_shape: str = "layered-random"
    duration_range_s: tuple = (1, 60)
    files_per_task: tuple = (1, 3)
    failure_rate: float = 0.0
    run_id: Optional[str] = None
    sample_interval_s: Optional[float] = None

    def __post_init__(self):
        if self.task_count < 0:
            raise ValueError("task_count must be >= 0")
        if self.machine_count < 1:
            raise ValueError("machine_count must be >= 1")
        if self.dag_shape not in DAG_SHAPES:
            raise ValueError(f"dag_shape must be one of {DAG_SHAPES}")
        for name in ("duration_range_s", "files_per_task"):
            lo, hi = getattr(self, name)
            if lo < 0 or lo > hi:
                raise ValueError(f"{name} must satisfy 0 <= min <= max")
        if not 0.0 <= self.failure_rate <= 1.0:
            raise ValueError("failure_rate must lie in [0, 1]")
        if self.sample_interval_s is not None and self.sample_interval_s <= 0:
            raise ValueError("sample_interval_s must be positive")

    @property
    def resolved_run_id(self):
        return self.run_id or f"sim-{self.seed}"


@dataclass
class SimTask:
    index: int
    task_id: str
    name: str
    deps: list
    declared: list = field(default_factory=list)
    reads: list = field(default_factory=list)  # (producer index, output slot)
    outputs: list = field(default_factory=list)  # (path, size)
    machine: str = ""
    exec_method: str = "local"
    container: Optional[str] = None
    duration_ms: int = 0
    submit_delay: int = 0
    queue_delay: int = 0
    fails: bool = False  # first attempt fails, attempt 1 succeeds
    fail_after_ms: int = 0
    retry_delay: int = 0
    submit: int = 0
    start: int = 0
    end: int = 0
    first_submit: int = 0
    first_start: int = 0
    first_end: int = 0


def _task_id(i):
    return f"t{i:04d}"


def _machine_id(j):
    return f"node{j + 1:02d}"


def _deps(cfg, rng):
    n = cfg.task_count
    if cfg.dag_shape == "chain":
        return [[i - 1] if i else [] for i in range(n)]
    if cfg.dag_shape == "fork-join":
        if n <= 2:
            return [[i - 1] if i else [] for i in range(n)]
        return [[]] + [[0] for _ in range(1, n - 1)] + [list(range(1, n - 1))]
    layers = []
    deps = []
    for i in range(n):
        if i == 0 or rng.random() < 0.35:
            layers.append([])
        layers[-1].append(i)
        deps.append(None)
    for li, layer in enumerate(layers):
        earlier = [t for lay in layers[:li] for t in lay]
        for t in layer:
            if li == 0:
                deps[t] = []
                continue
            first = layers[li - 1][rng.below(len(layers[li - 1]))]
            others = [e for e in earlier if e != first]
            k = rng.randint(0, min(2, len(others)))
            deps[t] = sorted([first] + rng.sample(others, k))
    return deps


def plan_run(cfg: SimConfig) -> list:
    """The simulator's internal schedule: one SimTask per configured task."""
    rng = SplitMix64(cfg.seed)
    n = cfg.task_count
    deps = _deps(cfg, rng)
    tasks = [SimTask(i, _task_id(i), PROCESS_NAMES[rng.below(len(PROCESS_NAMES))], deps[i]) for i in range(n)]

    order = rng.sample(range(n), n)
    for pos, i in enumerate(order):
        j = pos if pos < cfg.machine_count else rng.below(cfg.machine_count)
        tasks[i].machine = _machine_id(j)

    dmin, dmax = (round(x * 1000) for x in cfg.duration_range_s)
    fmin, fmax = cfg.files_per_task
    for t in tasks:
        t.duration_ms = rng.randint(dmin, dmax)
        t.outputs = [
            (f"/work/{t.task_id}/{t.name.lower()}_{k}.dat", rng.randint(1024, 64 * 1024 * 1024))
            for k in range(rng.randint(int(fmin), int(fmax)))
        ]
        if rng.random() < 0.5:
            t.exec_method = "container"
            t.container = f"quay.io/biocontainers/{t.name.lower()}:1.{rng.below(10)}"
        t.submit_delay = rng.randint(0, 500)
        t.queue_delay = rng.randint(0, 2000)
        t.fails = rng.random() < cfg.failure_rate
        t.fail_after_ms = rng.randint(0, t.duration_ms)
        t.retry_delay = rng.randint(100, 1000)
    for t in tasks:
        for p in t.deps:
            producer = tasks[p]
            via_file = bool(producer.outputs) and rng.random() < 0.5
            if not via_file or rng.random() < 0.5:
                t.declared.append(p)
            if via_file or (producer.outputs and rng.random() < 0.5):
                t.reads.append((p, rng.below(len(producer.outputs))))

    for t in tasks:
        ready = max((tasks[p].end for p in t.deps), default=BASE_TIME_MS + 100)
        t.first_submit = t.submit = ready + t.submit_delay
        t.first_start = t.start = t.submit + t.queue_delay
        if t.fails:
            t.first_end = t.first_start + t.fail_after_ms
            t.submit = t.first_end + t.retry_delay
            t.start = t.submit + t.queue_delay
        t.end = t.start + t.duration_ms
        if not t.fails:
            t.first_end = t.end
    return tasks


def _profile(j, rng):
    cores = (8, 16, 32, 64)[rng.below(4)]
    return NodeProfile(
        hostname=_machine_id(j),
        core_count=cores,
        ram_bytes=rng.randint(4, 32) * 8 * 1024 ** 3,
        cpu_model="Simulated Xeon @ 2.40GHz",
        ip_addresses=(f"10.0.0.{j + 1}",),
        nics=(Nic("eth0", f"02:00:00:00:00:{j + 1:02x}", 10000, True),),
    )


def generate_run(cfg: SimConfig) -> list:
    """Causally ordered events of one simulated run."""
    tasks = plan_run(cfg)
    run_id = cfg.resolved_run_id
    rng = SplitMix64(cfg.seed ^ 0x5EED5EED)
    keyed = []

    def add(ts, rank, phase, kind, payload=None):
        keyed.append(((ts, rank, phase, len(keyed)), MonitorEvent(kind, ts, run_id, payload)))

    add(BASE_TIME_MS, -2, 0, EventKind.RUN_START)
    profiles = [_profile(j, rng) for j in range(cfg.machine_count)]
    for j, prof in enumerate(profiles):
        add(BASE_TIME_MS, -1, j, EventKind.NODE_STATIC, prof)

    def attempt(t, n, submit, start, end, failed):
        i = t.index
        phase = 0 if n == 0 else 5
        att = n or None
        add(submit, i, phase, EventKind.TASK_SUBMITTED, TaskInfo(
            t.task_id, name=t.name, attempt=att, parents=tuple(_task_id(p) for p in t.declared)))
        add(start, i, phase + 1, EventKind.TASK_STARTED, TaskInfo(
            t.task_id, attempt=att, machine=t.machine, exec_method=t.exec_method,
            container=t.container, workdir=f"/work/{t.task_id}/{n}"))
        for p, slot in sorted(set(t.reads)):
            producer = tasks[p]
            path, size = producer.outputs[slot]
            add(start, i, phase + 2, EventKind.FILE_OBSERVED, FileRecord(
                path=path, size_bytes=size, mtime=producer.end, role="input", task_id=t.task_id))
        kind = EventKind.TASK_FAILED if failed else EventKind.TASK_COMPLETED
        add(end, i, phase + 3, kind, TaskInfo(t.task_id, attempt=att, exit_code=1 if failed else 0))
        if not failed:
            for path, size in t.outputs:
                add(end, i, phase + 4, EventKind.FILE_OBSERVED, FileRecord(
                    path=path, size_bytes=size, mtime=end, role="output", task_id=t.task_id))

    for t in tasks:
        if t.fails:
            attempt(t, 0, t.first_submit, t.first_start, t.first_end, True)
            attempt(t, 1, t.submit, t.start, t.end, False)
        else:
            attempt(t, 0, t.submit, t.start, t.end, False)

    end_ts = max((t.end for t in tasks), default=BASE_TIME_MS) + 100
    if cfg.sample_interval_s:
        step = max(1, round(cfg.sample_interval_s * 1000))
        for j, prof in enumerate(profiles):
            host = prof.hostname
            for ts in range(BASE_TIME_MS + step, end_ts, step):
                running = sum(1 for t in tasks if t.machine == host and t.start <= ts < t.end)
                sample = ResourceSample(
                    taken_at=ts,
                    cpu_util=min(running / prof.core_count, 1.0),
                    mem_used_bytes=min(running * 2 * 1024 ** 3, prof.ram_bytes),
                    net_rx_bytes_per_s=float(running * 1_000_000),
                    net_tx_bytes_per_s=float(running * 250_000),
                )
                add(ts, len(tasks) + j, 0, EventKind.NODE_SAMPLE, NodeSample(host, sample))
    add(end_ts, len(tasks) + cfg.machine_count, 0, EventKind.RUN_END)
    keyed.sort(key=lambda kv: kv[0])
    return [ev for _, ev in keyed]


def write_run(cfg: SimConfig) -> str:
    return dumps_events(generate_run(cfg))


def reference_answers(cfg: SimConfig) -> dict:
    """Ground truth computed from the schedule itself."""
    tasks = plan_run(cfg)
    if not tasks:
        return {"makespan_s": 0.0, "critical_path_length_s": 0.0, "edge_count": 0}
    longest = {}
    for t in tasks:  # deps always have lower indices
        longest[t.index] = t.duration_ms + max((longest[p] for p in t.deps), default=0)
    return {
        "makespan_s": (max(t.end for t in tasks) - min(t.first_start for t in tasks)) / 1000.0,
        "critical_path_length_s": max(longest.values()) / 1000.0,
        "edge_count": sum(len(set(t.deps)) for t in tasks),
    }
