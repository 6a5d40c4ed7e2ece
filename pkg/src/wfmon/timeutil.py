"""UTC millisecond timestamps.

Instants are carried as integer milliseconds since the Unix epoch so that
durations are exact; ISO-8601 text is only produced at the edges.
"""
import re
import time
from datetime import datetime, timezone

_ISO_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})[T ](\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,9}))?"
    r"(Z|[+-]\d{2}:?\d{2})?$"
)


def format_ms(ms: int) -> str:
    """Render epoch milliseconds as ``YYYY-MM-DDTHH:MM:SS.mmmZ``."""
    secs, frac = divmod(int(ms), 1000)
    dt = datetime.fromtimestamp(secs, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + f".{frac:03d}Z"


def parse_ms(text: str) -> int:
    """Parse an ISO-8601 instant to epoch milliseconds.

    Naive values (no offset) are taken as UTC. Sub-millisecond digits are
    truncated. Raises ValueError on anything else.
    """
    m = _ISO_RE.match(text.strip())
    if not m:
        raise ValueError(f"not an ISO-8601 instant: {text!r}")
    year, month, day, hh, mm, ss = (int(g) for g in m.groups()[:6])
    frac, tz = m.group(7), m.group(8)
    ms = int((frac or "0").ljust(3, "0")[:3])
    dt = datetime(year, month, day, hh, mm, ss, tzinfo=timezone.utc)
    total = int(dt.timestamp()) * 1000 + ms
    if tz and tz != "Z":
        sign = 1 if tz[0] == "+" else -1
        digits = tz[1:].replace(":", "")
        offset_min = int(digits[:2]) * 60 + int(digits[2:])
        total -= sign * offset_min * 60_000
    return total


def now_ms() -> int:
    return time.time_ns() // 1_000_000
