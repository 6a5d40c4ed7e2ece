import pytest
from hypothesis import given, settings, strategies as st

from wfmon import simulator
from wfmon.events import EventKind, fold
from wfmon.graph import UNASSIGNED, build_graph, critical_path, node_assignment
from wfmon.ingest import parse_events
from wfmon.simulator import SimConfig, SplitMix64, generate_run, plan_run, reference_answers, write_run

# First outputs for seed 1234567 from the SplitMix64 reference implementation.
SPLITMIX_VECTOR = [6457827717110365317, 3203168211198807973, 9817491932198370423,
                   4593380528125082431, 16408922859458223821]


def test_splitmix_reference_vector():
    rng = SplitMix64(1234567)
    assert [rng.next_u64() for _ in range(5)] == SPLITMIX_VECTOR


def test_below_range_and_coverage():
    rng = SplitMix64(3)
    draws = [rng.below(7) for _ in range(2000)]
    assert set(draws) == set(range(7))
    assert all(0 <= rng.random() < 1 for _ in range(1000))


def test_sample_distinct():
    rng = SplitMix64(5)
    for k in range(6):
        s = rng.sample(range(5), min(k, 5))
        assert len(set(s)) == len(s)


def test_empty_run():
    kinds = [e.kind for e in generate_run(SimConfig(task_count=0, machine_count=1))
             if e.kind is not EventKind.NODE_STATIC]
    assert kinds == [EventKind.RUN_START, EventKind.RUN_END]


def test_empty_reference_answers():
    assert reference_answers(SimConfig(task_count=0)) == {"makespan_s": 0.0, "critical_path_length_s": 0.0,
                                                          "edge_count": 0}


def test_deterministic():
    cfg = SimConfig(seed=99, task_count=30, machine_count=4, failure_rate=0.2, sample_interval_s=5)
    assert write_run(cfg) == write_run(cfg)
    assert write_run(cfg) != write_run(SimConfig(seed=100, task_count=30, machine_count=4, failure_rate=0.2,
                                                 sample_interval_s=5))


def test_six_node_run_has_six_groups():
    cfg = SimConfig(seed=2024, task_count=50, machine_count=6, dag_shape="layered-random")
    groups = node_assignment(build_graph(fold(parse_events(write_run(cfg)))))
    assert len([m for m in groups if m != UNASSIGNED]) == 6
    assert UNASSIGNED not in groups


def test_chain_of_three(monkeypatch):
    real = simulator.plan_run

    def fixed(cfg):
        tasks = real(cfg)
        for t, d in zip(tasks, (1000, 2000, 3000)):
            t.duration_ms = d
        return tasks

    monkeypatch.setattr(simulator, "plan_run", fixed)
    assert reference_answers(SimConfig(task_count=3, dag_shape="chain"))["critical_path_length_s"] == 6


def test_config_validation():
    for bad in (dict(task_count=-1), dict(machine_count=0), dict(dag_shape="star"),
                dict(duration_range_s=(5, 1)), dict(files_per_task=(-1, 2)), dict(failure_rate=1.5)):
        with pytest.raises(ValueError):
            SimConfig(**bad)


def test_sample_events_present():
    events = generate_run(SimConfig(seed=1, task_count=5, machine_count=2, sample_interval_s=1))
    samples = [e for e in events if e.kind is EventKind.NODE_SAMPLE]
    assert samples and all(0 <= e.payload.sample.cpu_util <= 1 for e in samples)


def _check_causal(events):
    seen = {}
    outputs_seen = set()
    ts = [e.timestamp for e in events]
    assert ts == sorted(ts)
    for e in events:
        if e.kind is EventKind.FILE_OBSERVED and e.payload.role == "output":
            outputs_seen.add(e.payload.path)
        if e.kind is EventKind.FILE_OBSERVED and e.payload.role == "input":
            assert e.payload.path in outputs_seen
        if e.kind.value.startswith("task_"):
            key = (e.payload.id, e.payload.attempt or 0)
            seen.setdefault(key, []).append(e.kind)
    for kinds in seen.values():
        assert kinds[0] is EventKind.TASK_SUBMITTED and kinds[1] is EventKind.TASK_STARTED
        assert kinds[2] in (EventKind.TASK_COMPLETED, EventKind.TASK_FAILED) and len(kinds) == 3


configs = st.builds(
    SimConfig,
    seed=st.integers(0, 2**64 - 1),
    task_count=st.integers(0, 30),
    machine_count=st.integers(1, 8),
    dag_shape=st.sampled_from(simulator.DAG_SHAPES),
    failure_rate=st.floats(0, 1),
    files_per_task=st.sampled_from([(0, 0), (0, 2), (1, 3)]),
)


@settings(max_examples=80, deadline=None)
@given(configs)
def test_generated_streams_are_legal(cfg):
    events = generate_run(cfg)
    state = fold(events)  # raises on any illegal transition
    _check_causal(events)
    assert set(state.tasks) == {t.task_id for t in plan_run(cfg)}
    assert all(r.status.value == "COMPLETED" for r in state.tasks.values())
    machines = {r.machine for r in state.tasks.values()}
    allowed = {f"node{j + 1:02d}" for j in range(cfg.machine_count)}
    assert machines <= allowed
    if cfg.task_count >= cfg.machine_count:
        assert machines == allowed


@settings(max_examples=80, deadline=None)
@given(configs)
def test_shape_guarantees(cfg):
    g = build_graph(fold(generate_run(cfg)))
    n = cfg.task_count
    assert len(g.edges) == reference_answers(cfg)["edge_count"]
    if cfg.dag_shape == "chain":
        assert len(g.edges) == max(n - 1, 0)
    if cfg.dag_shape == "fork-join" and n:
        sources = [v for v in g.vertices if not g.predecessors(v)]
        sinks = [v for v in g.vertices if not g.successors(v)]
        assert len(sources) == 1 and len(sinks) == 1


@settings(max_examples=40, deadline=None)
@given(configs)
def test_reference_matches_graph(cfg):
    ref = reference_answers(cfg)
    g = build_graph(fold(generate_run(cfg)))
    rep = critical_path(g)
    assert rep.length_s == ref["critical_path_length_s"]
    assert rep.makespan_s == ref["makespan_s"]
