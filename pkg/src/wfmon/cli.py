"""``wfmon`` command-line entry point.

Exit status: 0 success, 1 operational error, 2 usage error. Diagnostics go to
standard error; data goes to ``--output`` or standard output.
"""
import argparse
import json
import logging
import os
import signal
import sys
import threading
import time
import warnings

from . import __version__
from .config import FIELDS, ConfigError, load
from .errors import WfmonError
from .events import EventKind, MonitorEvent, finalize_run
from .fsobserver import ScanPolicy, scan_workdir
from .graph import critical_path, export_dot, export_gantt, node_assignment, topological_order
from .ingest import LineFollower, dumps_events, serialize_event
from .injector import HookConfig, NotPatched, patch_script, unpatch_script
from .nodemon import DirectorySource, ProcSource, TimeSeries, probe_static, run_sampler
from .online import OnlineMonitor
from .simulator import SimConfig, generate_run, reference_answers
from .timeutil import now_ms
from .wfformat import canonical_dumps, emit_instance, parse_instance, validate_instance

log = logging.getLogger("wfmon")

ANALYZE_MODES = ("critical-path", "gantt", "dot", "node-assignment")


class UsageError(Exception):
    pass


def _flag(parser, name, *aliases, **kw):
    """Add ``--name`` bound to config field ``name``; unset flags stay None."""
    f = FIELDS[name]
    opt = "--" + name.replace("_", "-")
    kw.setdefault("help", f.help)
    if f.parse is not str and "action" not in kw and f.parse.__name__ in ("int", "float"):
        kw.setdefault("metavar", f.parse.__name__.upper())
    parser.add_argument(opt, *aliases, dest=name, default=None, **kw)


def build_parser():
    parser = argparse.ArgumentParser(prog="wfmon", description="Workflow execution monitoring toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="config file (key = value lines); default $WFMON_CONFIG")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def cmd(name, help_text, input_arg=True):
        p = sub.add_parser(name, help=help_text, description=help_text)
        if input_arg:
            p.add_argument("input", nargs="?", default=None, help=FIELDS["input"].help)
        _flag(p, "output", "-o")
        return p

    cmd("ingest", "Fold an events file into a run-state report (JSON).")

    p = cmd("watch", "Follow a growing events file and refresh the partial-graph DOT.")
    _flag(p, "refresh_s")
    _flag(p, "snapshot_dir")
    _flag(p, "idle_timeout_s")

    p = cmd("emit", "Convert an events file into a wf-instance document.")
    _flag(p, "series_dir")

    p = sub.add_parser("analyze", help="Analyses of the execution graph.",
                       description="Analyses of the execution graph.")
    p.add_argument("mode", choices=ANALYZE_MODES)
    p.add_argument("input", nargs="?", default=None, help=FIELDS["input"].help)
    _flag(p, "output", "-o")
    _flag(p, "figure")

    p = cmd("probe-node", "Print the static node profile as JSON.", input_arg=False)
    _flag(p, "source")

    p = cmd("sample", "Sample node resource usage into a series sidecar file.", input_arg=False)
    _flag(p, "source")
    _flag(p, "interval_ms")
    _flag(p, "count")
    _flag(p, "duration_s")
    _flag(p, "csv")
    _flag(p, "figure")

    for name, text in (("patch-wrapper", "Insert monitoring hooks into a wrapper script."),
                       ("unpatch-wrapper", "Remove monitoring hooks from a wrapper script.")):
        p = cmd(name, text)
        p.add_argument("--in-place", action="store_true", help="rewrite the input script")
        _flag(p, "marker_id")
        if name == "patch-wrapper":
            _flag(p, "monitor_command")
            _flag(p, "series_template")
            p.add_argument("--env", dest="env_exports", action="append", default=None,
                           metavar="NAME=VALUE", help=FIELDS["env_exports"].help)

    cmd("validate", "Check a wf-instance document; diagnostics on standard error.")

    p = cmd("simulate", "Generate a synthetic run as an events file.", input_arg=False)
    _flag(p, "seed")
    _flag(p, "tasks")
    _flag(p, "machines")
    _flag(p, "shape", choices=("chain", "fork-join", "layered-random"))
    _flag(p, "duration_min")
    _flag(p, "duration_max")
    _flag(p, "files_min")
    _flag(p, "files_max")
    _flag(p, "failure_rate")
    _flag(p, "run_id")
    _flag(p, "sample_interval_s")
    _flag(p, "answers")

    p = cmd("scan", "Scan a task working directory into file_observed events.")
    _flag(p, "task_id")
    _flag(p, "run_id")
    _flag(p, "checksum", action="store_const", const="true")
    _flag(p, "checksum_cap")
    return parser


# --- helpers -------------------------------------------------------------


class Context:
    def __init__(self, cfg, origins, stdin, stdout, stderr):
        self.cfg = cfg
        self.origins = origins
        self.stdin = stdin
        self.stdout = stdout
        self.stderr = stderr

    def warn(self, msg):
        print(msg, file=self.stderr)

    def write_output(self, text):
        path = self.cfg["output"]
        if path:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            self.stdout.write(text)

    def require_input(self):
        path = self.cfg["input"]
        if not path:
            raise UsageError("input: an input file is required")
        return path

    def open_input(self):
        path = self.require_input()
        if path == "-":
            return getattr(self.stdin, "buffer", self.stdin)
        return open(path, "rb")


def _load_events(ctx):
    """Fold a whole events file; a final line without newline still counts."""
    monitor = OnlineMonitor()
    follower = LineFollower(monitor, on_diagnostic=lambda d: ctx.warn(f"warning: {d}"))
    fh = ctx.open_input()
    try:
        for chunk in iter(lambda: fh.read(65536), b""):
            follower.feed(chunk)
    finally:
        if fh is not getattr(ctx.stdin, "buffer", ctx.stdin):
            fh.close()
    report = follower.close()
    if report.residue.strip():
        follower.feed(b"\n")
        report = follower.close()
    for d in monitor.diagnostics:
        ctx.warn(f"warning: {d}")
    return monitor, report


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --- subcommands ---------------------------------------------------------


def cmd_ingest(ctx):
    monitor, report = _load_events(ctx)
    state, g = monitor.state, monitor.graph
    ctx.write_output(_json({
        "run_id": state.run_id,
        "event_count": state.event_count,
        "summary": finalize_run(state).to_dict(),
        "graph": {"vertices": len(g.vertices), "edges": len(g.edges)},
        "diagnostics": [str(d) for d in report.diagnostics] + monitor.diagnostics,
    }))
    return 0


def _write_atomic(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def cmd_watch(ctx):
    cfg = ctx.cfg
    monitor = OnlineMonitor()
    follower = LineFollower(monitor, on_diagnostic=lambda d: ctx.warn(f"warning: {d}"))
    done = threading.Event()
    failure = []

    def follow():
        try:
            fh = ctx.open_input()
            last_data = time.monotonic()
            while True:
                chunk = fh.read(65536)
                if chunk:
                    follower.feed(chunk)
                    last_data = time.monotonic()
                    continue
                if monitor.saw_run_end or time.monotonic() - last_data > cfg["idle_timeout_s"]:
                    break
                if fh is getattr(ctx.stdin, "buffer", ctx.stdin):
                    break  # EOF on a pipe is final
                time.sleep(0.05)
        except Exception as exc:  # surfaced by the main thread
            failure.append(exc)
        finally:
            done.set()

    thread = threading.Thread(target=follow, name="wfmon-follow", daemon=True)
    thread.start()
    snapshots = 0

    def write_snapshot():
        nonlocal snapshots
        _, g = monitor.snapshot()
        text = export_dot(g)
        if cfg["output"]:
            _write_atomic(cfg["output"], text)
        if cfg["snapshot_dir"]:
            os.makedirs(cfg["snapshot_dir"], exist_ok=True)
            _write_atomic(os.path.join(cfg["snapshot_dir"], f"snapshot-{snapshots:05d}.dot"), text)
        snapshots += 1
        return text

    while not done.wait(cfg["refresh_s"]):
        write_snapshot()
    thread.join()
    if failure:
        raise failure[0]
    text = write_snapshot()
    if not cfg["output"]:
        ctx.stdout.write(text)
    for d in monitor.diagnostics:
        ctx.warn(f"warning: {d}")
    return 0


def _series_paths(ctx, state):
    series_dir = ctx.cfg["series_dir"]
    if not series_dir:
        return {}
    base = os.path.dirname(os.path.abspath(ctx.cfg["output"])) if ctx.cfg["output"] else os.getcwd()
    out = {}
    for tid in state.tasks:
        candidate = os.path.join(series_dir, f"{tid}.series.jsonl")
        if os.path.exists(candidate):
            out[tid] = os.path.relpath(os.path.abspath(candidate), base)
    return out


def cmd_emit(ctx):
    monitor, _ = _load_events(ctx)
    doc = emit_instance(monitor.state, monitor.graph, series_paths=_series_paths(ctx, monitor.state))
    ctx.write_output(canonical_dumps(doc))
    return 0


def cmd_analyze(ctx, mode):
    monitor, _ = _load_events(ctx)
    g = monitor.graph
    topological_order(g)
    figure = ctx.cfg["figure"]
    if mode == "critical-path":
        ctx.write_output(_json(critical_path(g).to_dict()))
    elif mode == "gantt":
        ctx.write_output(export_gantt(g))
        if figure:
            from .plotting import plot_gantt
            plot_gantt(g, figure)
    elif mode == "dot":
        ctx.write_output(export_dot(g))
    else:
        assignment = node_assignment(g)
        lines = ["machine,position,task_id\n"]
        for machine, tids in assignment.items():
            lines += [f"{machine},{i},{tid}\n" for i, tid in enumerate(tids)]
        ctx.write_output("".join(lines))
        if figure:
            from .plotting import plot_node_assignment
            plot_node_assignment(assignment, figure)
    return 0


def _source(ctx):
    return DirectorySource(ctx.cfg["source"]) if ctx.cfg["source"] else ProcSource()


def cmd_probe_node(ctx):
    ctx.write_output(_json(probe_static(_source(ctx)).to_dict()))
    return 0


def cmd_sample(ctx):
    cfg = ctx.cfg
    src = _source(ctx)
    profile = probe_static(src)
    stop = threading.Event()
    if threading.current_thread() is threading.main_thread():
        for sig in (signal.SIGTERM, signal.SIGINT):
            signal.signal(sig, lambda *_: stop.set())
    timer = None
    if cfg["duration_s"] is not None:
        timer = threading.Timer(cfg["duration_s"], stop.set)
        timer.daemon = True
        timer.start()

    out = open(cfg["output"], "w", encoding="utf-8") if cfg["output"] else ctx.stdout
    try:
        header = TimeSeries(profile.hostname, cfg["interval_ms"], profile=profile).to_jsonl()
        out.write(header)
        out.flush()

        def write(sample):
            line = TimeSeries(profile.hostname, cfg["interval_ms"], [sample]).to_jsonl().split("\n", 1)[1]
            out.write(line)
            out.flush()

        series = run_sampler(src, cfg["interval_ms"], stop, profile=profile,
                             on_sample=write, max_samples=cfg["count"])
    finally:
        if timer is not None:
            timer.cancel()
        if out is not ctx.stdout:
            out.close()
    for d in series.diagnostics:
        ctx.warn(f"warning: {d}")
    if cfg["csv"]:
        with open(cfg["csv"], "w", encoding="utf-8") as fh:
            fh.write(series.to_csv())
    if cfg["figure"]:
        from .plotting import plot_series
        plot_series(series, cfg["figure"])
    return 0


def _read_script(ctx):
    with open(ctx.require_input(), "r", encoding="utf-8", newline="") as fh:
        return fh.read()


def _write_script(ctx, args, text):
    if args.in_place:
        if ctx.cfg["output"]:
            raise UsageError("--in-place: cannot be combined with --output")
        with open(ctx.cfg["input"], "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    elif ctx.cfg["output"]:
        with open(ctx.cfg["output"], "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        ctx.stdout.write(text)


def cmd_patch(ctx, args):
    cfg = ctx.cfg
    hook = HookConfig(
        monitor_command=cfg["monitor_command"],
        series_path_template=cfg["series_template"],
        env_exports=list(cfg["env_exports"]),
        marker_id=cfg["marker_id"],
    )
    result = patch_script(_read_script(ctx), hook)
    if result.already_patched:
        ctx.warn(f"notice: already patched with marker {hook.marker_id!r}")
    _write_script(ctx, args, result.text)
    return 0


def cmd_unpatch(ctx, args):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NotPatched)
        scoped = ctx.origins["marker_id"] != "default"
        text = unpatch_script(_read_script(ctx), ctx.cfg["marker_id"] if scoped else None)
    for w in caught:
        ctx.warn(f"notice: NotPatched: {w.message}")
    _write_script(ctx, args, text)
    return 0


def cmd_validate(ctx):
    with open(ctx.require_input(), "rb") as fh:
        doc = parse_instance(fh.read())
    diags = validate_instance(doc)
    for d in diags:
        ctx.warn(str(d))
    if ctx.cfg["output"]:
        ctx.write_output(_json([{"path": d.path, "message": d.message, "severity": d.severity} for d in diags]))
    return 1 if any(d.severity == "error" for d in diags) else 0


def cmd_simulate(ctx):
    cfg = ctx.cfg
    try:
        sim = SimConfig(
            seed=cfg["seed"],
            task_count=cfg["tasks"],
            machine_count=cfg["machines"],
            dag_shape=cfg["shape"],
            duration_range_s=(cfg["duration_min"], cfg["duration_max"]),
            files_per_task=(cfg["files_min"], cfg["files_max"]),
            failure_rate=cfg["failure_rate"],
            run_id=cfg["run_id"],
            sample_interval_s=cfg["sample_interval_s"],
        )
    except ValueError as exc:
        raise UsageError(f"simulate: {exc}") from None
    ctx.write_output(dumps_events(generate_run(sim)))
    if cfg["answers"]:
        with open(cfg["answers"], "w", encoding="utf-8") as fh:
            fh.write(_json(reference_answers(sim)))
    return 0


def cmd_scan(ctx):
    cfg = ctx.cfg
    workdir = ctx.require_input()
    task_id = cfg["task_id"] or os.path.basename(os.path.abspath(workdir))
    policy = ScanPolicy(checksum=cfg["checksum"], checksum_cap=cfg["checksum_cap"])
    diagnostics = []
    records = scan_workdir(workdir, policy, task_id=task_id, diagnostics=diagnostics)
    for d in diagnostics:
        ctx.warn(f"warning: {d.path}: {d.message}")
    ts = now_ms()
    run_id = cfg["run_id"] or "run"
    ctx.write_output("".join(
        serialize_event(MonitorEvent(EventKind.FILE_OBSERVED, ts, run_id, r)) + "\n" for r in records
    ))
    return 0


HANDLERS = {
    "ingest": cmd_ingest,
    "watch": cmd_watch,
    "emit": cmd_emit,
    "probe-node": cmd_probe_node,
    "sample": cmd_sample,
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "scan": cmd_scan,
}


def run_cli(argv, env=None, stdin=None, stdout=None, stderr=None):
    env = dict(os.environ) if env is None else env
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        old_err, sys.stderr = sys.stderr, stderr
        try:
            args = parser.parse_args(argv)
        finally:
            sys.stderr = old_err
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    cli_values = {k: v for k, v in vars(args).items() if k in FIELDS}
    try:
        cfg, origins = load(cli_values, env, args.config)
    except ConfigError as exc:
        print(f"wfmon: usage error: {exc}", file=stderr)
        return 2
    except OSError as exc:
        print(f"wfmon: error: {type(exc).__name__}: {exc}", file=stderr)
        return 1

    ctx = Context(cfg, origins, stdin, stdout, stderr)
    try:
        if args.command == "analyze":
            return cmd_analyze(ctx, args.mode)
        if args.command == "patch-wrapper":
            return cmd_patch(ctx, args)
        if args.command == "unpatch-wrapper":
            return cmd_unpatch(ctx, args)
        return HANDLERS[args.command](ctx)
    except UsageError as exc:
        print(f"wfmon: usage error: {exc}", file=stderr)
        return 2
    except (WfmonError, ValueError) as exc:
        print(f"wfmon: error: {type(exc).__name__}: {exc}", file=stderr)
        return 1
    except OSError as exc:
        print(f"wfmon: error: {type(exc).__name__}: {exc}", file=stderr)
        return 1


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
