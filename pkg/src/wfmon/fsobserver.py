"""Capture file metadata from task working directories.

Files are classified by how they got there: symlinks and files that existed
before the task started are inputs (staged), regular files that appear later
are outputs, and dot-prefixed entries are engine bookkeeping with role
``unknown``.
"""
import hashlib
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

from .errors import DirectoryMissing
from .timeutil import format_ms, parse_ms

log = logging.getLogger(__name__)

ROLES = ("input", "output", "unknown")
DEFAULT_CHECKSUM_CAP = 64 * 1024 * 1024


@dataclass(frozen=True)
class FileRecord:
    path: str
    size_bytes: int
    mtime: int
    role: str = "unknown"
    task_id: Optional[str] = None
    checksum: Optional[str] = None  # "<algorithm>:<hex>"

    def __post_init__(self):
        if self.size_bytes < 0:
            raise ValueError("size_bytes must be non-negative")
        if self.role not in ROLES:
            raise ValueError(f"unknown file role {self.role!r}")

    def to_dict(self):
        d = {
            "path": self.path,
            "size_bytes": self.size_bytes,
            "mtime": format_ms(self.mtime),
            "role": self.role,
            "task_id": self.task_id,
        }
        if self.checksum is not None:
            d["checksum"] = self.checksum
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            path=d["path"],
            size_bytes=int(d["size_bytes"]),
            mtime=parse_ms(d["mtime"]),
            role=d.get("role", "unknown"),
            task_id=d.get("task_id"),
            checksum=d.get("checksum"),
        )


@dataclass
class ScanPolicy:
    checksum: bool = False
    checksum_cap: int = DEFAULT_CHECKSUM_CAP
    algorithm: str = "sha256"
    # Either a set of paths seen before the task started, or the start instant
    # (epoch ms) to compare mtimes against. Without both, regular files are
    # classified as outputs only when a start instant is known.
    preexisting: Optional[frozenset] = None
    task_start: Optional[int] = None


@dataclass
class Diagnostic:
    path: str
    message: str


def file_digest(path, algorithm="sha256", chunk_size=1 << 20):
    h = hashlib.new(algorithm)
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(chunk_size), b""):
            h.update(block)
    return f"{algorithm}:{h.hexdigest()}"


def _is_hidden(relpath):
    return any(part.startswith(".") for part in relpath.split(os.sep))


def _classify(relpath, is_link, mtime, paths, policy):
    if _is_hidden(relpath):
        return "unknown"
    if is_link:
        return "input"
    if policy.preexisting is not None:
        return "input" if any(p in policy.preexisting for p in paths) else "output"
    if policy.task_start is not None:
        return "input" if mtime < policy.task_start else "output"
    return "unknown"


def scan_workdir(path, policy=None, task_id=None, diagnostics=None):
    """Return one FileRecord per regular file under ``path``, sorted by path.

    Symlinks are resolved so that a consumer's staged input and the
    producer's output share the same record path. Unreadable entries are
    appended to ``diagnostics`` (when given) and skipped.
    """
    policy = policy or ScanPolicy()
    if not os.path.isdir(path):
        raise DirectoryMissing(str(path))
    root = os.path.realpath(path)
    records = []

    def report(p, msg):
        log.warning("%s: %s", p, msg)
        if diagnostics is not None:
            diagnostics.append(Diagnostic(p, msg))

    def on_error(exc):
        report(getattr(exc, "filename", None) or str(exc), type(exc).__name__)

    for dirpath, dirnames, filenames in os.walk(root, onerror=on_error):
        dirnames.sort()
        # symlinked directories show up in dirnames and are not descended into
        for name in sorted(filenames) + sorted(d for d in dirnames if os.path.islink(os.path.join(dirpath, d))):
            full = os.path.join(dirpath, name)
            rel = os.path.relpath(full, root)
            try:
                is_link = os.path.islink(full)
                st = os.stat(full)
            except FileNotFoundError:
                report(full, "dangling symlink")
                continue
            except OSError as exc:
                report(full, type(exc).__name__)
                continue
            if not os.path.isfile(full):
                continue
            target = os.path.realpath(full) if is_link else full
            mtime = st.st_mtime_ns // 1_000_000
            checksum = None
            if policy.checksum and st.st_size <= policy.checksum_cap:
                try:
                    checksum = file_digest(target, policy.algorithm)
                except OSError as exc:
                    report(full, type(exc).__name__)
            records.append(
                FileRecord(
                    path=target,
                    size_bytes=st.st_size,
                    mtime=mtime,
                    role=_classify(rel, is_link, mtime, (full, target), policy),
                    task_id=task_id,
                    checksum=checksum,
                )
            )
    records.sort(key=lambda r: r.path)
    return records


@dataclass
class SnapshotDiff:
    created: list = field(default_factory=list)
    modified: list = field(default_factory=list)
    removed: list = field(default_factory=list)

    def is_empty(self):
        return not (self.created or self.modified or self.removed)


def _changed(a, b):
    if a.size_bytes != b.size_bytes or a.mtime != b.mtime:
        return True
    return a.checksum is not None and b.checksum is not None and a.checksum != b.checksum


def diff_snapshots(before, after):
    """Partition paths into created / modified / removed (each sorted by path)."""
    old = {r.path: r for r in before}
    new = {r.path: r for r in after}
    return SnapshotDiff(
        created=sorted(p for p in new if p not in old),
        modified=sorted(p for p in new if p in old and _changed(old[p], new[p])),
        removed=sorted(p for p in old if p not in new),
    )
