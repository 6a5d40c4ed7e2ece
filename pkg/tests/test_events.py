import random

import pytest
from hypothesis import given, settings, strategies as st

from wfmon.errors import IllegalTransition, InvalidPayload, RunMismatch, UnknownSchemaVersion, UnknownTask
from wfmon.events import (
    EventKind, MonitorEvent, RunState, TaskInfo, TaskStatus, apply_event, finalize_run, fold,
)
from wfmon.simulator import SimConfig, generate_run
from wfmon.ingest import dumps_events

from helpers import ev, frec, lifecycle, task_ev


def test_submitted_then_started():
    s = fold([task_ev("task_submitted", 0, "t1"), task_ev("task_started", 5, "t1")])
    assert s.tasks["t1"].status == TaskStatus.STARTED
    assert s.event_count == 2


def test_duration_from_timestamps():
    s = fold(lifecycle("t1", 10_000, 12_500))
    rec = s.tasks["t1"]
    assert rec.duration_s == 2.5
    assert rec.end_time - rec.start_time == rec.duration_ms


def test_started_without_submit_is_illegal():
    with pytest.raises(IllegalTransition):
        apply_event(RunState(), task_ev("task_started", 0, "t9"))


@pytest.mark.parametrize("kinds", [
    ["task_completed"],
    ["task_submitted", "task_completed"],
    ["task_submitted", "task_submitted"],
    ["task_submitted", "task_started", "task_started"],
    ["task_submitted", "task_started", "task_completed", "task_failed"],
    ["task_cached", "task_started"],
    ["task_submitted", "task_cached"],
])
def test_forbidden_sequences(kinds):
    events = [task_ev(k, i, "t1") for i, k in enumerate(kinds)]
    with pytest.raises(IllegalTransition):
        fold(events)


def test_apply_does_not_mutate_argument():
    s0 = fold([task_ev("task_submitted", 0, "t1")])
    before = s0.dumps()
    s1 = apply_event(s0, task_ev("task_started", 1, "t1"))
    assert s0.dumps() == before
    assert s1.tasks["t1"].status == TaskStatus.STARTED


def test_failed_apply_leaves_state_untouched():
    s0 = fold([task_ev("task_submitted", 0, "t1")])
    before = s0.dumps()
    with pytest.raises(IllegalTransition):
        apply_event(s0, task_ev("task_completed", 1, "t1"))
    assert s0.dumps() == before


def test_run_mismatch_and_schema_gate():
    s = fold([ev("run_start", 0)])
    with pytest.raises(RunMismatch):
        apply_event(s, ev("run_end", 1, run_id="other"))
    with pytest.raises(UnknownSchemaVersion):
        apply_event(s, MonitorEvent(EventKind.RUN_END, 1, "r1", schema_version=2))


def test_empty_state_adopts_run_id():
    s = apply_event(RunState(), ev("run_start", 0, run_id="abc"))
    assert s.run_id == "abc" and s.started_at == 0


def test_out_of_order_timestamps_recorded_verbatim():
    s = fold([task_ev("task_submitted", 100, "t1"), task_ev("task_started", 50, "t1")])
    rec = s.tasks["t1"]
    assert (rec.submit_time, rec.start_time) == (100, 50)


def test_terminal_redelivery_is_idempotent():
    events = lifecycle("t1", 0, 1000)
    s = fold(events + [events[-1]])
    assert s.tasks["t1"].status == TaskStatus.COMPLETED
    assert s.event_count == 4
    assert finalize_run(s).task_counts[TaskStatus.COMPLETED] == 1


def test_terminal_with_different_time_is_not_redelivery():
    events = lifecycle("t1", 0, 1000)
    with pytest.raises(IllegalTransition):
        fold(events + [task_ev("task_completed", 2000, "t1")])


def test_retry_creates_fresh_attempt():
    events = [
        task_ev("task_submitted", 0, "t1", parents=("t0",)),
        task_ev("task_started", 10, "t1"),
        task_ev("task_failed", 20, "t1", exit_code=137),
        task_ev("task_submitted", 30, "t1", attempt=1),
        task_ev("task_started", 40, "t1", attempt=1),
        task_ev("task_completed", 90, "t1", attempt=1, exit_code=0),
    ]
    s = fold(events)
    rec = s.tasks["t1"]
    assert (rec.attempt, rec.status, rec.duration_ms, rec.parents) == (1, TaskStatus.COMPLETED, 50, ("t0",))
    old = s.previous_attempts["t1"][0]
    assert (old.attempt, old.status, old.exit_code) == (0, TaskStatus.FAILED, 137)
    # makespan spans every attempt
    assert finalize_run(s).makespan_s == 0.08


def test_retry_requires_terminal_previous_attempt():
    with pytest.raises(IllegalTransition):
        fold([task_ev("task_submitted", 0, "t1"), task_ev("task_submitted", 1, "t1", attempt=1)])


def test_cached_task_has_no_timings():
    s = fold([task_ev("task_cached", 5, "t1")])
    rec = s.tasks["t1"]
    assert rec.status == TaskStatus.CACHED
    assert rec.start_time is None and rec.end_time is None


def test_parent_self_reference_rejected():
    with pytest.raises(InvalidPayload):
        fold([task_ev("task_submitted", 0, "t1", parents=("t1",))])


def test_parents_deduplicated():
    s = fold([task_ev("task_submitted", 0, "t1", parents=("a", "b", "a"))])
    assert s.tasks["t1"].parents == ("a", "b")


def test_file_observed_attaches_to_task():
    s = fold(lifecycle("t1", 0, 10) + [ev("file_observed", 11, frec("/d/x", "t1", "output", size=7))])
    assert s.files["/d/x"].size_bytes == 7
    assert [f.path for f in s.tasks["t1"].files] == ["/d/x"]


def test_file_for_unknown_task():
    with pytest.raises(UnknownTask):
        fold([ev("file_observed", 0, frec("/d/x", "nope", "output"))])


def test_machine_without_profile_is_recorded_unknown():
    s = fold(lifecycle("t1", 0, 10, machine="n1"))
    assert s.machines == {"n1": None}


def test_payload_must_match_kind():
    with pytest.raises(InvalidPayload):
        MonitorEvent(EventKind.TASK_STARTED, 0, "r", None)
    with pytest.raises(InvalidPayload):
        MonitorEvent(EventKind.RUN_START, 0, "r", TaskInfo("t"))


def test_finalize_empty():
    summary = finalize_run(RunState())
    assert summary.makespan_s == 0
    assert all(n == 0 for n in summary.task_counts.values())
    assert summary.machine_count == 0


def test_finalize_max_minus_min():
    s = fold(lifecycle("a", 0, 5000) + lifecycle("b", 3000, 9000))
    assert finalize_run(s).makespan_s == 9


def test_counts_partition_tasks():
    s = fold(lifecycle("a", 0, 5) + [task_ev("task_submitted", 1, "b"), task_ev("task_cached", 2, "c")])
    counts = finalize_run(s).task_counts
    assert sum(counts.values()) == len(s.tasks) == 3
    assert counts[TaskStatus.SUBMITTED] == 1 and counts[TaskStatus.CACHED] == 1


def test_makespan_matches_linear_scan_of_raw_events():
    import json

    text = dumps_events(generate_run(SimConfig(seed=42, task_count=50, machine_count=6)))
    starts, ends = [], []
    for line in text.splitlines():
        obj = json.loads(line)
        if obj["kind"] == "task_started":
            starts.append(obj["ts"])
        elif obj["kind"] in ("task_completed", "task_failed"):
            ends.append(obj["ts"])
    from datetime import datetime

    parse = lambda s: datetime.strptime(s, "%Y-%m-%dT%H:%M:%S.%fZ")  # noqa: E731
    expected = (max(map(parse, ends)) - min(map(parse, starts))).total_seconds()

    from wfmon.ingest import parse_events

    assert finalize_run(fold(parse_events(text))).makespan_s == pytest.approx(expected, abs=1e-9)


# --- properties ----------------------------------------------------------


def _sim_events(seed, n=12, failure=0.3):
    return generate_run(SimConfig(seed=seed, task_count=n, machine_count=3, failure_rate=failure,
                                  duration_range_s=(0, 5)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_one_by_one_equals_batch(seed):
    events = _sim_events(seed)
    s = RunState()
    for e in events:
        s = apply_event(s, e)
    assert s.dumps() == fold(events).dumps()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_shuffled_streams_raise_or_stay_legal(seed):
    events = _sim_events(seed, n=6)
    random.Random(seed).shuffle(events)
    s = RunState()
    for e in events:
        try:
            nxt = apply_event(s, e)
        except (IllegalTransition, UnknownTask):
            continue
        for tid, rec in nxt.tasks.items():
            old = s.tasks.get(tid)
            if old is not None and old.attempt == rec.attempt and old.status != rec.status:
                assert (old.status, rec.status) in {
                    (TaskStatus.SUBMITTED, TaskStatus.STARTED),
                    (TaskStatus.STARTED, TaskStatus.COMPLETED),
                    (TaskStatus.STARTED, TaskStatus.FAILED),
                }
        s = nxt
    for rec in s.tasks.values():
        if rec.start_time is not None and rec.end_time is not None:
            assert rec.duration_ms == rec.end_time - rec.start_time
        assert rec.status.terminal == (rec.end_time is not None) or rec.status == TaskStatus.CACHED
