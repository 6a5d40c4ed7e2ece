"""wf-instance documents: emit, parse, validate.

Emitted documents follow the WfCommons instance layout (schema 1.5). Anything
this toolkit adds lives under ``x-monitor`` keys, so a consumer that ignores
unknown keys sees a plain wf-instance.
"""
import json
from dataclasses import dataclass

from .errors import InconsistentState, MalformedJson, SchemaViolation
from .events import finalize_run
from .graph import topological_order
from .timeutil import format_ms, parse_ms

SCHEMA_VERSION = "1.5"
EXT = "x-monitor"
RUNTIME_TOLERANCE_S = 0.001


@dataclass(frozen=True)
class Diagnostic:
    path: str
    message: str
    severity: str = "error"

    def __str__(self):
        return f"{self.severity}: {self.path}: {self.message}"


def _iso(ms):
    return None if ms is None else format_ms(ms)


def _run_bounds(state):
    stamps = []
    for rec in state.all_attempts():
        stamps += [t for t in (rec.submit_time, rec.start_time, rec.end_time) if t is not None]
    executed = state.started_at if state.started_at is not None else min(stamps, default=0)
    created = state.ended_at if state.ended_at is not None else max(stamps, default=executed)
    return executed, created


def emit_instance(state, g, profiles=None, series_paths=None, description=None) -> dict:
    """Build the wf-instance document for ``state`` using the edges of ``g``.

    ``profiles`` overrides machine profiles found in the state;
    ``series_paths`` maps task id -> relative path of its resource series
    sidecar.
    """
    topological_order(g)  # raises CyclicGraph
    profiles = {**{k: v for k, v in state.machines.items() if v is not None}, **(profiles or {})}
    series_paths = series_paths or {}

    spec_tasks, exec_tasks = [], []
    file_sizes = {}
    machine_names = set(state.machines) | set(profiles)
    for tid in sorted(g.vertices):
        rec = state.tasks.get(tid)
        if rec is None:
            raise InconsistentState(f"task {tid} is in the graph but not in the run state")
        inputs = sorted({f.path for f in rec.files if f.role == "input"})
        outputs = sorted({f.path for f in rec.files if f.role == "output"})
        for f in rec.files:
            if f.role in ("input", "output"):
                file_sizes[f.path] = f.size_bytes
        spec_tasks.append({
            "id": tid,
            "name": rec.name or tid,
            "parents": g.predecessors(tid),
            "children": g.successors(tid),
            "inputFiles": inputs,
            "outputFiles": outputs,
        })
        ext = {
            "status": rec.status.value,
            "attempt": rec.attempt,
            "execMethod": rec.exec_method,
            "containerImage": rec.container_image,
            "workdir": rec.workdir,
            "submitTime": _iso(rec.submit_time),
            "startTime": _iso(rec.start_time),
            "endTime": _iso(rec.end_time),
            "exitCode": rec.exit_code,
            "files": [
                {"path": f.path, "sizeBytes": f.size_bytes, "checksum": f.checksum, "role": f.role}
                for f in sorted(rec.files, key=lambda f: (f.path, f.role))
            ],
        }
        if tid in series_paths:
            ext["resourceSeries"] = series_paths[tid]
        if rec.machine is not None:
            machine_names.add(rec.machine)
        exec_tasks.append({
            "id": tid,
            "runtimeInSeconds": (rec.duration_ms or 0) / 1000.0,
            "machines": [rec.machine] if rec.machine is not None else [],
            EXT: ext,
        })

    machines = []
    for name in sorted(machine_names):
        entry = {"nodeName": name}
        prof = profiles.get(name)
        if prof is not None:
            entry[EXT] = {
                "ipAddresses": list(prof.ip_addresses),
                "cpuModel": prof.cpu_model,
                "coreCount": prof.core_count,
                "ramBytes": prof.ram_bytes,
                "nics": [
                    {"name": n.name, "mac": n.mac, "speedMbps": n.speed_mbps, "up": n.up} for n in prof.nics
                ],
            }
        machines.append(entry)

    executed, created = _run_bounds(state)
    doc = {
        "name": state.run_id or "run",
        "createdAt": format_ms(created),
        "schemaVersion": SCHEMA_VERSION,
        "workflow": {
            "specification": {
                "tasks": spec_tasks,
                "files": [{"id": p, "sizeInBytes": file_sizes[p]} for p in sorted(file_sizes)],
            },
            "execution": {
                "makespanInSeconds": finalize_run(state).makespan_s,
                "executedAt": format_ms(executed),
                "machines": machines,
                "tasks": exec_tasks,
            },
        },
    }
    if description is not None:
        doc["description"] = description
    return doc


def canonical_dumps(doc) -> str:
    """Sorted keys, two-space indent, shortest round-trip floats, trailing newline."""
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def parse_instance(text) -> dict:
    """Parse wf-instance JSON, keeping unknown keys untouched.

    Only the container objects are checked here; :func:`validate_instance`
    does the rest.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedJson(str(exc)) from None
    if not isinstance(doc, dict):
        raise SchemaViolation("", "document root must be an object")
    node = doc
    path = ""
    for key in ("workflow", "specification"):
        path += "/" + key
        if not isinstance(node.get(key), dict):
            raise SchemaViolation(path, "required object missing")
        node = node[key]
    if not isinstance(doc["workflow"].get("execution"), dict):
        raise SchemaViolation("/workflow/execution", "required object missing")
    return doc


def strip_extensions(obj):
    """Copy of ``obj`` without any key starting with ``x-``."""
    if isinstance(obj, dict):
        return {k: strip_extensions(v) for k, v in obj.items() if not k.startswith("x-")}
    if isinstance(obj, list):
        return [strip_extensions(v) for v in obj]
    return obj


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_str_list(v):
    return isinstance(v, list) and all(isinstance(x, str) for x in v)


def _check_time(value, path, diags):
    if value is None:
        return None
    try:
        return parse_ms(value)
    except (TypeError, ValueError, AttributeError):
        diags.append(Diagnostic(path, "not an ISO-8601 instant"))
        return None


def validate_instance(doc) -> list:
    """All violated invariants as diagnostics; empty means valid."""
    diags = []
    err = lambda path, msg: diags.append(Diagnostic(path, msg))  # noqa: E731

    if not isinstance(doc, dict):
        return [Diagnostic("", "document root must be an object")]
    if not isinstance(doc.get("name"), str):
        err("/name", "required string")
    if "description" in doc and not isinstance(doc["description"], str):
        err("/description", "must be a string")
    if "createdAt" in doc:
        _check_time(doc["createdAt"], "/createdAt", diags)
    else:
        err("/createdAt", "required")
    version = doc.get("schemaVersion")
    if not isinstance(version, str):
        err("/schemaVersion", "required string")
    elif version != SCHEMA_VERSION:
        diags.append(Diagnostic("/schemaVersion", f"unsupported version {version!r}", "warning"))

    wf = doc.get("workflow")
    if not isinstance(wf, dict):
        err("/workflow", "required object")
        return diags
    spec = wf.get("specification")
    execution = wf.get("execution")
    spec_ids = set()
    file_ids = set()

    if not isinstance(spec, dict):
        err("/workflow/specification", "required object")
    else:
        tasks = spec.get("tasks")
        files = spec.get("files", [])
        if not isinstance(files, list):
            err("/workflow/specification/files", "must be a list")
            files = []
        for i, f in enumerate(files):
            p = f"/workflow/specification/files/{i}"
            if not isinstance(f, dict) or not isinstance(f.get("id"), str):
                err(p + "/id", "required string")
                continue
            if f["id"] in file_ids:
                err(p + "/id", f"duplicate file id {f['id']!r}")
            file_ids.add(f["id"])
            size = f.get("sizeInBytes")
            if size is not None and (not _is_int(size) or size < 0):
                err(p + "/sizeInBytes", "must be a non-negative integer")
        if not isinstance(tasks, list):
            err("/workflow/specification/tasks", "required list")
            tasks = []
        by_id = {}
        for i, t in enumerate(tasks):
            p = f"/workflow/specification/tasks/{i}"
            if not isinstance(t, dict):
                err(p, "must be an object")
                continue
            if not isinstance(t.get("id"), str):
                err(p + "/id", "required string")
                continue
            if t["id"] in by_id:
                err(p + "/id", f"duplicate task id {t['id']!r}")
            by_id[t["id"]] = (i, t)
            if not isinstance(t.get("name"), str):
                err(p + "/name", "required string")
            for key in ("parents", "children", "inputFiles", "outputFiles"):
                if not _is_str_list(t.get(key, [])):
                    err(f"{p}/{key}", "must be a list of ids")
        spec_ids = set(by_id)
        for tid, (i, t) in by_id.items():
            p = f"/workflow/specification/tasks/{i}"
            for key, mirror in (("parents", "children"), ("children", "parents")):
                refs = t.get(key, [])
                if not _is_str_list(refs):
                    continue
                for j, ref in enumerate(refs):
                    if ref not in by_id:
                        err(f"{p}/{key}/{j}", f"unknown task id {ref!r}")
                    elif ref == tid:
                        err(f"{p}/{key}/{j}", "task references itself")
                    elif tid not in (by_id[ref][1].get(mirror) or []):
                        err(f"{p}/{key}/{j}", f"{ref!r} does not list {tid!r} in {mirror}")
            for key in ("inputFiles", "outputFiles"):
                refs = t.get(key, [])
                if not _is_str_list(refs):
                    continue
                for j, ref in enumerate(refs):
                    if ref not in file_ids:
                        err(f"{p}/{key}/{j}", f"unknown file id {ref!r}")

    if not isinstance(execution, dict):
        err("/workflow/execution", "required object")
        return diags
    base = "/workflow/execution"
    makespan = execution.get("makespanInSeconds")
    if not _is_number(makespan):
        err(base + "/makespanInSeconds", "required number")
    elif makespan < 0:
        err(base + "/makespanInSeconds", "must be >= 0")
    if "executedAt" in execution:
        _check_time(execution["executedAt"], base + "/executedAt", diags)
    else:
        err(base + "/executedAt", "required")

    machines = execution.get("machines", [])
    if not isinstance(machines, list):
        err(base + "/machines", "must be a list")
        machines = []
    for i, m in enumerate(machines):
        p = f"{base}/machines/{i}"
        if not isinstance(m, dict) or not isinstance(m.get("nodeName"), str):
            err(p + "/nodeName", "required string")
            continue
        ext = m.get(EXT)
        if ext is None:
            continue
        if not isinstance(ext, dict):
            err(f"{p}/{EXT}", "must be an object")
            continue
        cores = ext.get("coreCount")
        if cores is not None and (not _is_int(cores) or cores < 1):
            err(f"{p}/{EXT}/coreCount", "must be an integer >= 1")
        ram = ext.get("ramBytes")
        if ram is not None and (not _is_int(ram) or ram < 0):
            err(f"{p}/{EXT}/ramBytes", "must be a non-negative integer")
        if "ipAddresses" in ext and not _is_str_list(ext["ipAddresses"]):
            err(f"{p}/{EXT}/ipAddresses", "must be a list of strings")

    tasks = execution.get("tasks")
    if not isinstance(tasks, list):
        err(base + "/tasks", "required list")
        return diags
    for i, t in enumerate(tasks):
        p = f"{base}/tasks/{i}"
        if not isinstance(t, dict) or not isinstance(t.get("id"), str):
            err(p + "/id", "required string")
            continue
        if isinstance(spec, dict) and t["id"] not in spec_ids:
            err(p + "/id", f"no specification task {t['id']!r}")
        runtime = t.get("runtimeInSeconds")
        if not _is_number(runtime) or runtime < 0:
            err(p + "/runtimeInSeconds", "must be a non-negative number")
            runtime = None
        if not _is_str_list(t.get("machines", [])):
            err(p + "/machines", "must be a list of machine names")
        ext = t.get(EXT)
        if ext is None:
            continue
        if not isinstance(ext, dict):
            err(f"{p}/{EXT}", "must be an object")
            continue
        start = _check_time(ext.get("startTime"), f"{p}/{EXT}/startTime", diags)
        end = _check_time(ext.get("endTime"), f"{p}/{EXT}/endTime", diags)
        _check_time(ext.get("submitTime"), f"{p}/{EXT}/submitTime", diags)
        if start is not None and end is not None and runtime is not None:
            if end < start:
                err(f"{p}/{EXT}/endTime", "ends before it starts")
            elif abs((end - start) / 1000.0 - runtime) > RUNTIME_TOLERANCE_S:
                err(p + "/runtimeInSeconds", f"differs from endTime - startTime ({(end - start) / 1000.0})")
        for j, f in enumerate(ext.get("files", []) or []):
            fp = f"{p}/{EXT}/files/{j}"
            if not isinstance(f, dict) or not isinstance(f.get("path"), str):
                err(fp + "/path", "required string")
                continue
            size = f.get("sizeBytes")
            if size is not None and (not _is_int(size) or size < 0):
                err(fp + "/sizeBytes", "must be a non-negative integer")
            if f.get("role") not in ("input", "output", "unknown"):
                err(fp + "/role", "must be input, output or unknown")
    return diags
