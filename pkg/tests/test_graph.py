import random

import pydot
import pytest
from hypothesis import given, settings, strategies as st

from wfmon.errors import CycleIntroduced, CyclicGraph
from wfmon.events import fold
from wfmon.graph import (
    PARENT, UNASSIGNED, ExecGraph, build_graph, critical_path, export_dot, export_gantt, file_label,
    node_assignment, topological_order,
)
from wfmon.simulator import SimConfig, generate_run

from helpers import frec, record
from oracles import brute_force_critical_path, has_cycle, nested_loop_file_edges, random_dag, random_files


def graph_of(ids, edges, durations, machines=None):
    g = ExecGraph()
    for v in ids:
        parents = sorted(u for u, w in edges if w == v)
        g.insert_task(record(v, durations.get(v), parents, machine=(machines or {}).get(v),
                             start=0 if durations.get(v) is not None else None))
    return g


def test_declared_parent_edge():
    g = ExecGraph()
    g.insert_task(record("A"))
    g.insert_task(record("B", parents=["A"]))
    assert g.edges == {("A", "B"): frozenset({PARENT})}


def test_pending_edge_materializes():
    g = ExecGraph()
    g.insert_task(record("B", parents=["A"]))
    assert g.edges == {}
    g.insert_task(record("A"))
    assert ("A", "B") in g.edges


def test_two_cycle_rejected_and_graph_unchanged():
    g = ExecGraph()
    g.insert_task(record("A", parents=["B"]))
    before = g.dumps()
    with pytest.raises(CycleIntroduced):
        g.insert_task(record("B", parents=["A"]))
    assert g.dumps() == before
    assert "B" not in g.vertices


def test_longer_cycle_rejected():
    g = ExecGraph()
    g.insert_task(record("A"))
    g.insert_task(record("B", parents=["A"]))
    g.insert_task(record("C", parents=["B"]))
    before = g.dumps()
    with pytest.raises(CycleIntroduced):
        g.insert_task(record("A", parents=["C"]))
    assert g.dumps() == before


def test_reinsert_updates_record():
    g = ExecGraph()
    g.insert_task(record("A"))
    g.insert_task(record("A", duration_ms=5, start=0))
    assert g.vertices["A"].duration_ms == 5


def test_file_edge():
    g = ExecGraph()
    g.insert_task(record("A"))
    g.insert_task(record("B"))
    g.derive_edges([frec("f.txt", "A", "output"), frec("f.txt", "B", "input")])
    assert g.edges == {("A", "B"): frozenset({file_label("f.txt")})}


def test_no_self_file_edge():
    g = ExecGraph()
    g.insert_task(record("A"))
    g.derive_edges([frec("g.txt", "A", "output"), frec("g.txt", "A", "input")])
    assert g.edges == {}


def test_file_edge_merges_with_parent_edge():
    g = ExecGraph()
    g.insert_task(record("A"))
    g.insert_task(record("B", parents=["A"]))
    g.derive_edges([frec("f", "A", "output"), frec("f", "B", "input")])
    assert g.edges[("A", "B")] == frozenset({PARENT, file_label("f")})


def test_file_edge_waits_for_vertices():
    g = ExecGraph()
    g.insert_task(record("B"))
    g.derive_edges([frec("f", "A", "output"), frec("f", "B", "input")])
    assert g.edges == {}
    g.insert_task(record("A"))
    assert ("A", "B") in g.edges


def test_cyclic_file_edge_skipped_rest_applied():
    g = ExecGraph()
    g.insert_task(record("A"))
    g.insert_task(record("B", parents=["A"]))
    g.insert_task(record("C"))
    rejected = g.derive_edges([
        frec("back", "B", "output"), frec("back", "A", "input"),
        frec("ok", "B", "output"), frec("ok", "C", "input"),
    ])
    assert [(r.producer, r.consumer) for r in rejected] == [("B", "A")]
    assert ("B", "C") in g.edges and ("B", "A") not in g.edges
    topological_order(g)


@pytest.mark.parametrize("seed", range(20))
def test_file_edges_match_nested_loop(seed):
    rng = random.Random(seed)
    tasks = [f"t{i}" for i in range(6)]
    files = random_files(rng, tasks, 10)
    expected = nested_loop_file_edges(files)
    g = ExecGraph()
    for t in tasks:
        g.insert_task(record(t))
    rejected = g.derive_edges(files)
    got = set(g.edges) | {(r.producer, r.consumer) for r in rejected}
    assert got == expected
    if not rejected:
        assert set(g.edges) == expected
    else:
        assert has_cycle(tasks, expected)


def test_critical_path_single():
    g = graph_of(["t"], set(), {"t": 4000})
    rep = critical_path(g)
    assert rep.path == ["t"] and rep.length_s == 4


def test_critical_path_diamond():
    ids = ["A", "B", "C", "D"]
    edges = {("A", "B"), ("B", "D"), ("A", "C"), ("C", "D")}
    g = graph_of(ids, edges, {"A": 1000, "B": 2000, "C": 5000, "D": 1000})
    rep = critical_path(g)
    assert rep.path == ["A", "C", "D"] and rep.length_s == 7


def test_critical_path_tie_break_lexicographic():
    ids = ["a", "b", "c"]
    g = graph_of(ids, {("a", "c"), ("b", "c")}, {"a": 1, "b": 1, "c": 1})
    assert critical_path(g).path == ["a", "c"]


def test_absent_duration_counts_zero():
    g = ExecGraph()
    g.insert_task(record("A", 3000, start=0))
    g.insert_task(record("B", None, parents=["A"]))
    assert critical_path(g).length_s == 3


def test_critical_path_empty():
    rep = critical_path(ExecGraph())
    assert rep.path == [] and rep.length_s == 0 and rep.makespan_s == 0


def test_cyclic_graph_rejected_by_analysis():
    g = ExecGraph()
    g.insert_task(record("A"))
    g.insert_task(record("B", parents=["A"]))
    g._add_edge("B", "A", PARENT)  # corrupt on purpose
    with pytest.raises(CyclicGraph):
        critical_path(g)


@pytest.mark.parametrize("seed", range(200))
def test_critical_path_matches_enumeration(seed):
    rng = random.Random(seed)
    ids, edges, durations = random_dag(rng, rng.randint(1, 8))
    g = graph_of(ids, edges, durations)
    length, path = brute_force_critical_path(ids, edges, durations)
    rep = critical_path(g)
    assert rep.length_ms == length
    assert rep.path == path


def test_node_assignment_rules():
    g = ExecGraph()
    g.insert_task(record("b", 1, machine="m1", start=5))
    g.insert_task(record("a", 1, machine="m1", start=5))
    g.insert_task(record("c", 1, machine="m1", start=1))
    g.insert_task(record("x"))
    assert node_assignment(g) == {"m1": ["c", "a", "b"], UNASSIGNED: ["x"]}


def test_single_machine_group():
    g = graph_of(["a", "b"], set(), {"a": 1, "b": 1}, machines={"a": "m", "b": "m"})
    assert node_assignment(g) == {"m": ["a", "b"]}


def test_six_machine_run_assignment():
    state = fold(generate_run(SimConfig(seed=1, task_count=50, machine_count=6)))
    groups = node_assignment(build_graph(state))
    machines = [m for m in groups if m != UNASSIGNED]
    assert len(machines) == 6
    assert sorted(t for ts in groups.values() for t in ts) == sorted(state.tasks)


def test_dot_empty():
    text = export_dot(ExecGraph())
    assert text.startswith("digraph run {") and text.rstrip().endswith("}")
    [parsed] = pydot.graph_from_dot_data(text)
    assert parsed.get_node_list() == [] or all(n.get_name() in ("node", "edge", "graph") for n in parsed.get_node_list())


def test_dot_deterministic():
    state = fold(generate_run(SimConfig(seed=2, task_count=20, machine_count=3)))
    assert export_dot(build_graph(state)) == export_dot(build_graph(state))


def _dot_counts(text):
    [parsed] = pydot.graph_from_dot_data(text)
    nodes, clusters = set(), {}

    def visit(graph, cluster=None):
        for n in graph.get_node_list():
            name = n.get_name().strip('"')
            if name in ("node", "edge", "graph"):
                continue
            nodes.add(name)
            if cluster:
                clusters.setdefault(cluster, []).append(name)
        for sg in graph.get_subgraph_list():
            visit(sg, sg.get_name().strip('"'))

    visit(parsed)
    edges = [(e.get_source().strip('"'), e.get_destination().strip('"')) for e in parsed.get_edge_list()]
    return nodes, edges, clusters


@pytest.mark.parametrize("seed", range(5))
def test_dot_parses_back_to_same_counts(seed):
    state = fold(generate_run(SimConfig(seed=seed, task_count=25, machine_count=4, failure_rate=0.2)))
    g = build_graph(state)
    nodes, edges, clusters = _dot_counts(export_dot(g))
    assert len(nodes) == len(g.vertices)
    assert len(edges) == len(g.edges)
    assert set(edges) == set(g.edges)
    assert all(name.startswith("cluster_") for name in clusters)


def test_dot_quotes_awkward_ids():
    g = ExecGraph()
    g.insert_task(record('we"ird\\id', machine="m 1"))
    nodes, _, clusters = _dot_counts(export_dot(g))
    assert len(nodes) == 1 and list(clusters) == ["cluster_m 1"]


def test_gantt_empty():
    g = ExecGraph()
    g.insert_task(record("a"))
    assert export_gantt(g) == "task_id,machine,start_ms,end_ms,duration_ms\n# omitted: 1\n"


def test_gantt_single_row():
    g = ExecGraph()
    g.insert_task(record("a", 2500, machine="m", start=0))
    assert export_gantt(g).splitlines() == ["task_id,machine,start_ms,end_ms,duration_ms", "a,m,0,2500,2500",
                                            "# omitted: 0"]


def test_gantt_rows_count_timed_tasks():
    state = fold(generate_run(SimConfig(seed=9, task_count=30, machine_count=3, failure_rate=0.3)))
    rows = [ln for ln in export_gantt(build_graph(state)).splitlines()[1:] if not ln.startswith("#")]
    timed = [r for r in state.tasks.values() if r.start_time is not None and r.end_time is not None]
    assert len(rows) == len(timed)
    starts = [(int(r.split(",")[2]), r.split(",")[0]) for r in rows]
    assert starts == sorted(starts)


# --- properties ----------------------------------------------------------


def _edge_set(g):
    return {(u, v, label) for (u, v), labels in g.edges.items() for label in labels}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.floats(0, 1))
def test_prefix_graph_is_subgraph(seed, frac):
    events = generate_run(SimConfig(seed=seed, task_count=15, machine_count=3, failure_rate=0.2))
    full = build_graph(fold(events))
    prefix = build_graph(fold(events[: int(len(events) * frac)]))
    assert set(prefix.vertices) <= set(full.vertices)
    assert _edge_set(prefix) <= _edge_set(full)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32))
def test_assignment_partitions_vertices(seed):
    g = build_graph(fold(generate_run(SimConfig(seed=seed, task_count=12, machine_count=4))))
    groups = node_assignment(g)
    flat = [t for ts in groups.values() for t in ts]
    assert sorted(flat) == sorted(g.vertices) and len(flat) == len(set(flat))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_random_insertions_keep_acyclic(seed):
    rng = random.Random(seed)
    g = ExecGraph()
    names = [f"n{i}" for i in range(7)]
    for _ in range(12):
        v = rng.choice(names)
        parents = rng.sample([n for n in names if n != v], rng.randint(0, 2))
        before = g.dumps()
        try:
            g.insert_task(record(v, parents=parents))
        except CycleIntroduced:
            assert g.dumps() == before
        topological_order(g)
