"""Insert and remove monitoring hook blocks in task wrapper scripts.

Each hook block is bracketed by two comment lines::

    # WFMON BEGIN <marker_id>
    ...
    # WFMON END <marker_id>

A patched script has exactly two blocks per marker id: a prologue right after
the shebang that starts the monitor in the background and installs an EXIT
trap, and an epilogue at end of file that stops it. Patching is textual and
byte-exact reversible; line endings and a missing final newline survive an
unpatch.
"""
import re
import shlex
import warnings
from dataclasses import dataclass, field

from .errors import BinaryInput, CorruptMarkers

BEGIN = "# WFMON BEGIN "
END = "# WFMON END "
DEFAULT_MARKER = "wfmon"
DEFAULT_MONITOR = 'wfmon sample --output "$WFMON_SERIES"'
DEFAULT_SERIES_TEMPLATE = ".wfmon.{task_id}.series.jsonl"


class NotPatched(UserWarning):
    pass


@dataclass
class HookConfig:
    monitor_command: str = DEFAULT_MONITOR
    series_path_template: str = DEFAULT_SERIES_TEMPLATE
    env_exports: list = field(default_factory=list)
    marker_id: str = DEFAULT_MARKER

    def __post_init__(self):
        if not self.monitor_command.strip():
            raise ValueError("monitor_command must not be empty")
        if not self.marker_id or any(c in self.marker_id for c in "\r\n"):
            raise ValueError("marker_id must be a non-empty single line")
        for item in self.env_exports:
            name, sep, _ = item.partition("=")
            if not sep or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
                raise ValueError(f"bad env export {item!r}, expected NAME=value")


@dataclass
class PatchResult:
    text: str
    prologue_line: int
    epilogue_line: int
    already_patched: bool = False


def _split(text):
    """(lines without newlines, had_no_final_newline)."""
    noeol = bool(text) and not text.endswith("\n")
    body = text + "\n" if noeol else text
    return (body.split("\n")[:-1] if body else []), noeol


def _join(lines, noeol):
    if not lines:
        return ""
    text = "\n".join(lines) + "\n"
    return text[:-1] if noeol else text


def _marker(line):
    if line.startswith(BEGIN):
        return "BEGIN", line[len(BEGIN):]
    if line.startswith(END):
        return "END", line[len(END):]
    return None


def _blocks(lines):
    """[(begin_index, end_index, marker_id)] for well-formed scripts."""
    blocks = []
    open_at = None
    open_id = None
    for i, line in enumerate(lines):
        m = _marker(line)
        if m is None:
            continue
        kind, mid = m
        if kind == "BEGIN":
            if open_at is not None:
                raise CorruptMarkers(f"line {i + 1}: BEGIN {mid} inside open block {open_id}")
            open_at, open_id = i, mid
        else:
            if open_at is None:
                raise CorruptMarkers(f"line {i + 1}: END {mid} without BEGIN")
            if mid != open_id:
                raise CorruptMarkers(f"line {i + 1}: END {mid} closes BEGIN {open_id}")
            blocks.append((open_at, i, mid))
            open_at = None
    if open_at is not None:
        raise CorruptMarkers(f"line {open_at + 1}: BEGIN {open_id} never closed")
    counts = {}
    for _, _, mid in blocks:
        counts[mid] = counts.get(mid, 0) + 1
    for mid, n in counts.items():
        if n != 2:
            raise CorruptMarkers(f"marker {mid!r} brackets {n} blocks, expected 2")
    return blocks


def _check_text(script):
    if "\x00" in script:
        raise BinaryInput("NUL byte in script")


def _ident(marker_id):
    return re.sub(r"[^A-Za-z0-9_]", "_", marker_id)


def _dq(text):
    return re.sub(r'([\\"`$])', r"\\\1", text)


def _prologue(cfg):
    tag = _ident(cfg.marker_id)
    series = _dq(cfg.series_path_template).replace("{task_id}", "${WFMON_TASK_ID}")
    lines = [
        BEGIN + cfg.marker_id,
        'WFMON_TASK_ID="${WFMON_TASK_ID:-$(basename "$PWD")}"',
        "export WFMON_TASK_ID",
        f'WFMON_SERIES="{series}"',
        "export WFMON_SERIES",
    ]
    for item in cfg.env_exports:
        name, _, value = item.partition("=")
        lines.append(f"{name}={shlex.quote(value)}")
        lines.append(f"export {name}")
    lines += [
        f"{cfg.monitor_command} >/dev/null 2>&1 &",
        f"WFMON_PID_{tag}=$!",
        # keeps $? so the epilogue does not mask the task's exit status
        f"wfmon_stop_{tag}() {{",
        "    wfmon_rc=$?",
        f'    if [ -n "${{WFMON_PID_{tag}:-}}" ]; then',
        f'        kill -TERM "$WFMON_PID_{tag}" 2>/dev/null',
        f'        wait "$WFMON_PID_{tag}" 2>/dev/null',
        f"        WFMON_PID_{tag}=",
        "    fi",
        '    return "$wfmon_rc"',
        "}",
        f"trap wfmon_stop_{tag} EXIT",
        END + cfg.marker_id,
    ]
    return lines


def _epilogue(cfg):
    return [BEGIN + cfg.marker_id, f"wfmon_stop_{_ident(cfg.marker_id)}", END + cfg.marker_id]


def patch_script(script: str, cfg: HookConfig = None) -> PatchResult:
    cfg = cfg or HookConfig()
    _check_text(script)
    lines, noeol = _split(script)
    mine = [b for b in _blocks(lines) if b[2] == cfg.marker_id]
    if mine:
        return PatchResult(script, mine[0][0] + 1, mine[-1][0] + 1, already_patched=True)
    at = 1 if lines and lines[0].startswith("#!") else 0
    pro = _prologue(cfg)
    new = lines[:at] + pro + lines[at:] + _epilogue(cfg)
    return PatchResult(
        text=_join(new, noeol),
        prologue_line=at + 1,
        epilogue_line=len(lines) + len(pro) + 1,
    )


def unpatch_script(script: str, marker_id: str = None) -> str:
    """Remove hook blocks (all of them, or only ``marker_id``'s).

    An unpatched script comes back unchanged with a :class:`NotPatched` warning.
    """
    _check_text(script)
    lines, noeol = _split(script)
    blocks = [b for b in _blocks(lines) if marker_id is None or b[2] == marker_id]
    if not blocks:
        warnings.warn("script carries no hook blocks", NotPatched, stacklevel=2)
        return script
    drop = set()
    for begin, end, _ in blocks:
        drop.update(range(begin, end + 1))
    return _join([ln for i, ln in enumerate(lines) if i not in drop], noeol)


def is_patched(script: str, marker_id: str = DEFAULT_MARKER) -> bool:
    try:
        _check_text(script)
        return any(b[2] == marker_id for b in _blocks(_split(script)[0]))
    except (CorruptMarkers, BinaryInput):
        return False
