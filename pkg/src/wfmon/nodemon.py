"""Node-level static profiles and resource-usage time series.

A stats source is a small set of line-oriented files with fixed names:

``cpu_identity``
    ``/proc/cpuinfo`` layout; one ``processor`` stanza per logical core.
``cpu_counters``
    ``/proc/stat`` layout; only the aggregate ``cpu`` line is used.
``mem_info``
    ``/proc/meminfo`` layout (``MemTotal:  4096 kB``).
``net_counters``
    ``/proc/net/dev`` layout; loopback is ignored.
``addresses``
    one fact per line: ``hostname <name>``,
    ``link <iface> <mac> <speed_mbps|-> <up|down>``,
    ``inet <iface> <addr>`` and ``inet6 <iface> <addr>``.

:class:`DirectorySource` reads those files from a fixture directory,
:class:`ProcSource` reads the live system. Both feed the same parsers.
"""
import csv
import io
import json
import logging
import os
import socket
import threading
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

from .errors import CounterRegression, DegenerateInterval, ParseFailure, SourceMissing
from .timeutil import format_ms, now_ms, parse_ms

log = logging.getLogger(__name__)

SOURCE_FILES = ("cpu_identity", "cpu_counters", "mem_info", "net_counters", "addresses")


@dataclass(frozen=True)
class Nic:
    name: str
    mac: Optional[str] = None
    speed_mbps: Optional[int] = None
    up: bool = False


@dataclass(frozen=True)
class NodeProfile:
    hostname: str
    core_count: int
    ram_bytes: int
    cpu_model: Optional[str] = None
    ip_addresses: tuple = ()
    nics: tuple = ()

    def __post_init__(self):
        if self.core_count < 1:
            raise ValueError("core_count must be >= 1")
        if self.ram_bytes < 0:
            raise ValueError("ram_bytes must be >= 0")

    def to_dict(self):
        return {
            "hostname": self.hostname,
            "ip_addresses": list(self.ip_addresses),
            "cpu_model": self.cpu_model,
            "core_count": self.core_count,
            "ram_bytes": self.ram_bytes,
            "nics": [asdict(n) for n in self.nics],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            hostname=d["hostname"],
            core_count=int(d["core_count"]),
            ram_bytes=int(d["ram_bytes"]),
            cpu_model=d.get("cpu_model"),
            ip_addresses=tuple(d.get("ip_addresses") or ()),
            nics=tuple(Nic(**n) for n in d.get("nics") or ()),
        )


@dataclass(frozen=True)
class CounterSnapshot:
    taken_at: int
    cpu_busy_ticks: int
    cpu_total_ticks: int
    mem_used_bytes: int
    mem_total_bytes: int
    net_rx_bytes: int
    net_tx_bytes: int


@dataclass(frozen=True)
class ResourceSample:
    taken_at: int
    cpu_util: float
    mem_used_bytes: int
    net_rx_bytes_per_s: float
    net_tx_bytes_per_s: float

    def to_dict(self):
        return {
            "t": format_ms(self.taken_at),
            "cpu_util": self.cpu_util,
            "mem_used_bytes": self.mem_used_bytes,
            "net_rx_bytes_per_s": self.net_rx_bytes_per_s,
            "net_tx_bytes_per_s": self.net_tx_bytes_per_s,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            taken_at=parse_ms(d["t"]),
            cpu_util=float(d["cpu_util"]),
            mem_used_bytes=int(d["mem_used_bytes"]),
            net_rx_bytes_per_s=float(d["net_rx_bytes_per_s"]),
            net_tx_bytes_per_s=float(d["net_tx_bytes_per_s"]),
        )


@dataclass
class TimeSeries:
    node: str
    interval_ms: int
    samples: list = field(default_factory=list)
    profile: Optional[NodeProfile] = None
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        if self.interval_ms <= 0:
            raise ValueError("interval_ms must be positive")

    def to_jsonl(self):
        header = {
            "node": self.node,
            "interval_ms": self.interval_ms,
            "profile": self.profile.to_dict() if self.profile else None,
        }
        lines = [_dumps(header)] + [_dumps(s.to_dict()) for s in self.samples]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty series file")
        header = json.loads(lines[0])
        profile = header.get("profile")
        return cls(
            node=header["node"],
            interval_ms=int(header["interval_ms"]),
            profile=NodeProfile.from_dict(profile) if profile else None,
            samples=[ResourceSample.from_dict(json.loads(ln)) for ln in lines[1:]],
        )

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "cpu_util", "mem_used_bytes", "net_rx_bytes_per_s", "net_tx_bytes_per_s"])
        for s in self.samples:
            d = s.to_dict()
            writer.writerow([d["t"], repr(s.cpu_util), s.mem_used_bytes,
                             repr(s.net_rx_bytes_per_s), repr(s.net_tx_bytes_per_s)])
        return buf.getvalue()


def _dumps(obj):
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


# --- stats sources -------------------------------------------------------


class StatsSource:
    """Named text files; ``tick`` is called once before each counter read."""

    def read(self, name) -> str:
        raise NotImplementedError

    def tick(self):
        pass


class DirectorySource(StatsSource):
    def __init__(self, root):
        self.root = root

    def read(self, name):
        try:
            with open(os.path.join(self.root, name), encoding="utf-8") as fh:
                return fh.read()
        except FileNotFoundError:
            raise SourceMissing(name) from None


class ReplaySource(StatsSource):
    """Replays a scripted sequence of frames (dicts of file name -> text).

    Names absent from a frame fall back to ``static``. The last frame repeats
    once the script is exhausted.
    """

    def __init__(self, frames, static=None):
        self.frames = list(frames)
        self.static = dict(static or {})
        self._pos = -1

    def tick(self):
        if self._pos < len(self.frames) - 1:
            self._pos += 1

    def read(self, name):
        frame = self.frames[max(self._pos, 0)] if self.frames else {}
        if name in frame:
            return frame[name]
        if name in self.static:
            return self.static[name]
        raise SourceMissing(name)


class ProcSource(StatsSource):
    """The live system: procfs counters plus synthesized ``addresses``."""

    PATHS = {
        "cpu_identity": "/proc/cpuinfo",
        "cpu_counters": "/proc/stat",
        "mem_info": "/proc/meminfo",
        "net_counters": "/proc/net/dev",
    }

    def read(self, name):
        if name == "addresses":
            return _live_addresses()
        try:
            with open(self.PATHS[name], encoding="utf-8") as fh:
                return fh.read()
        except (KeyError, FileNotFoundError):
            raise SourceMissing(name) from None


def _live_addresses():
    import psutil

    lines = [f"hostname {socket.gethostname()}"]
    stats = psutil.net_if_stats()
    for iface, addrs in sorted(psutil.net_if_addrs().items()):
        mac = next((a.address for a in addrs if a.family == psutil.AF_LINK), None) or "-"
        st = stats.get(iface)
        speed = str(st.speed) if st and st.speed else "-"
        lines.append(f"link {iface} {mac} {speed} {'up' if st and st.isup else 'down'}")
        for a in addrs:
            if a.family == socket.AF_INET:
                lines.append(f"inet {iface} {a.address}")
            elif a.family == socket.AF_INET6:
                lines.append(f"inet6 {iface} {a.address.split('%')[0]}")
    return "\n".join(lines) + "\n"


# --- parsers -------------------------------------------------------------


# x86 puts the readable name under "model name" and a number under "model";
# other architectures use the remaining keys.
_MODEL_KEYS = ("model name", "cpu model", "hardware", "cpu", "model")


def _parse_cpu_identity(text):
    cores = 0
    found = {}
    for line in text.splitlines():
        key, sep, value = line.partition(":")
        if not sep:
            continue
        key, value = key.strip().lower(), value.strip()
        if key == "processor":
            cores += 1
        elif key in _MODEL_KEYS and value:
            found.setdefault(key, value)
    if cores == 0:
        raise ParseFailure("cpu_identity", 0, "no processor stanzas")
    model = next((found[k] for k in _MODEL_KEYS if k in found), None)
    return cores, model


def _parse_meminfo(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        key, sep, rest = line.partition(":")
        if not sep:
            continue
        parts = rest.split()
        try:
            n = int(parts[0])
        except (IndexError, ValueError):
            raise ParseFailure("mem_info", lineno, line) from None
        unit = parts[1].lower() if len(parts) > 1 else ""
        values[key.strip()] = n * 1024 if unit == "kb" else n
    if "MemTotal" not in values:
        raise ParseFailure("mem_info", 0, "MemTotal missing")
    return values


def _mem_used(values):
    total = values["MemTotal"]
    if "MemAvailable" in values:
        avail = values["MemAvailable"]
    else:
        avail = values.get("MemFree", 0) + values.get("Buffers", 0) + values.get("Cached", 0)
    return min(max(total - avail, 0), total), total


def _parse_cpu_counters(text):
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if parts and parts[0] == "cpu":
            try:
                fields = [int(x) for x in parts[1:9]]
            except ValueError:
                raise ParseFailure("cpu_counters", lineno, line) from None
            if len(fields) < 4 or any(f < 0 for f in fields):
                raise ParseFailure("cpu_counters", lineno, line)
            total = sum(fields)
            idle = fields[3] + (fields[4] if len(fields) > 4 else 0)
            return total - idle, total
    raise ParseFailure("cpu_counters", 0, "aggregate cpu line missing")


def _parse_net_counters(text):
    rx = tx = 0
    for lineno, line in enumerate(text.splitlines(), 1):
        iface, sep, rest = line.partition(":")
        if not sep or "|" in line:
            continue
        if iface.strip() == "lo":
            continue
        parts = rest.split()
        try:
            r, t = int(parts[0]), int(parts[8])
        except (IndexError, ValueError):
            raise ParseFailure("net_counters", lineno, line) from None
        if r < 0 or t < 0:
            raise ParseFailure("net_counters", lineno, line)
        rx += r
        tx += t
    return rx, tx


def _parse_addresses(text):
    hostname = None
    nics = {}
    ips = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        kind = parts[0]
        if kind == "hostname" and len(parts) == 2:
            hostname = parts[1]
        elif kind == "link" and len(parts) >= 3:
            name = parts[1]
            if name == "lo":
                continue
            mac = None if parts[2] == "-" else parts[2]
            speed = None
            if len(parts) > 3 and parts[3] != "-":
                try:
                    speed = int(parts[3])
                except ValueError:
                    speed = None
            up = len(parts) > 4 and parts[4] == "up"
            nics[name] = Nic(name, mac, speed, up)
        elif kind in ("inet", "inet6") and len(parts) == 3:
            if parts[1] != "lo":
                ips.append(parts[2])
        else:
            raise ParseFailure("addresses", lineno, line)
    if not hostname:
        raise ParseFailure("addresses", 0, "hostname missing")
    return hostname, ips, [nics[k] for k in sorted(nics)]


def probe_static(src: StatsSource) -> NodeProfile:
    cores, model = _parse_cpu_identity(src.read("cpu_identity"))
    mem = _parse_meminfo(src.read("mem_info"))
    hostname, ips, nics = _parse_addresses(src.read("addresses"))
    if any(n.up for n in nics) and not ips:
        log.warning("%s: NIC up but no address reported", hostname)
    return NodeProfile(
        hostname=hostname,
        core_count=cores,
        ram_bytes=mem["MemTotal"],
        cpu_model=model,
        ip_addresses=tuple(ips),
        nics=tuple(nics),
    )


def take_snapshot(src: StatsSource, taken_at: int) -> CounterSnapshot:
    busy, total = _parse_cpu_counters(src.read("cpu_counters"))
    used, mem_total = _mem_used(_parse_meminfo(src.read("mem_info")))
    rx, tx = _parse_net_counters(src.read("net_counters"))
    return CounterSnapshot(taken_at, busy, total, used, mem_total, rx, tx)


# --- arithmetic ----------------------------------------------------------

_CUMULATIVE = ("cpu_busy_ticks", "cpu_total_ticks", "net_rx_bytes", "net_tx_bytes")


def _check_monotone(a, b):
    for name in _CUMULATIVE:
        if getattr(b, name) < getattr(a, name):
            raise CounterRegression(f"{name} decreased: {getattr(a, name)} -> {getattr(b, name)}")


def cpu_utilization(a: CounterSnapshot, b: CounterSnapshot) -> float:
    """Busy fraction between two snapshots, clamped to [0, 1]."""
    if b.taken_at <= a.taken_at:
        raise ValueError("second snapshot must be later than the first")
    _check_monotone(a, b)
    d_total = b.cpu_total_ticks - a.cpu_total_ticks
    if d_total == 0:
        raise DegenerateInterval("no CPU ticks elapsed")
    util = (b.cpu_busy_ticks - a.cpu_busy_ticks) / d_total
    return min(max(util, 0.0), 1.0)


def derive_sample(a: CounterSnapshot, b: CounterSnapshot, fallback_util=0.0) -> ResourceSample:
    """Resource sample for the interval (a, b], labeled with b's read time.

    A zero-tick CPU interval carries ``fallback_util`` forward.
    """
    try:
        util = cpu_utilization(a, b)
    except DegenerateInterval:
        util = fallback_util
    dt = (b.taken_at - a.taken_at) / 1000.0
    return ResourceSample(
        taken_at=b.taken_at,
        cpu_util=util,
        mem_used_bytes=max(b.mem_used_bytes, 0),
        net_rx_bytes_per_s=(b.net_rx_bytes - a.net_rx_bytes) / dt,
        net_tx_bytes_per_s=(b.net_tx_bytes - a.net_tx_bytes) / dt,
    )


def run_sampler(
    src: StatsSource,
    interval_ms: int,
    stop: threading.Event,
    node: Optional[str] = None,
    profile: Optional[NodeProfile] = None,
    clock: Callable[[], int] = now_ms,
    on_sample: Optional[Callable[[ResourceSample], None]] = None,
    max_samples: Optional[int] = None,
) -> TimeSeries:
    """Sample ``src`` every ``interval_ms`` until ``stop`` is set.

    ``stop`` may be set from another thread or a signal handler. A counter
    regression ends the series early; the samples taken so far are kept and
    the reason is recorded in ``series.diagnostics``.
    """
    if interval_ms < 10:
        raise ValueError("interval_ms must be >= 10")
    series = TimeSeries(node=node or (profile.hostname if profile else "unknown"),
                        interval_ms=interval_ms, profile=profile)
    if stop.is_set():
        return series
    src.tick()
    prev = take_snapshot(src, clock())
    util = 0.0
    while not stop.wait(interval_ms / 1000.0):
        src.tick()
        taken = clock()
        if taken <= prev.taken_at:
            taken = prev.taken_at + 1
        cur = take_snapshot(src, taken)
        try:
            sample = derive_sample(prev, cur, util)
        except CounterRegression as exc:
            series.diagnostics.append(f"CounterRegression: {exc}")
            log.warning("sampler stopped: %s", exc)
            break
        util = sample.cpu_util
        series.samples.append(sample)
        if on_sample is not None:
            on_sample(sample)
        prev = cur
        if max_samples is not None and len(series.samples) >= max_samples:
            break
    return series
