"""Tool configuration with layered resolution.

Each field resolves from the first level that sets it:
command-line flag, then ``WFMON_<FIELD>`` environment variable, then the
config file, then the built-in default. The config file is given by
``--config`` or ``WFMON_CONFIG`` and holds ``key = value`` lines; ``#``
starts a comment.
"""
import os
from dataclasses import dataclass

from .injector import DEFAULT_MARKER, DEFAULT_MONITOR, DEFAULT_SERIES_TEMPLATE
from .fsobserver import DEFAULT_CHECKSUM_CAP

ENV_PREFIX = "WFMON_"
CONFIG_ENV = "WFMON_CONFIG"


class ConfigError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(text):
    if isinstance(text, (list, tuple)):
        return list(text)
    return [item.strip() for item in str(text).split(",") if item.strip()]


@dataclass(frozen=True)
class Field:
    name: str
    parse: object
    default: object
    help: str


FIELDS = {f.name: f for f in (
    Field("input", str, None, "input file ('-' for standard input)"),
    Field("output", str, None, "output file (standard output when unset)"),
    Field("figure", str, None, "write a matplotlib figure to this path"),
    Field("checksum", _bool, False, "compute file checksums while scanning"),
    Field("checksum_cap", int, DEFAULT_CHECKSUM_CAP, "skip checksums above this many bytes"),
    Field("interval_ms", int, 1000, "sampler interval in milliseconds"),
    Field("monitor_command", str, DEFAULT_MONITOR, "command the wrapper hook starts"),
    Field("series_template", str, DEFAULT_SERIES_TEMPLATE, "series sidecar path, {task_id} placeholder"),
    Field("marker_id", str, DEFAULT_MARKER, "hook marker id"),
    Field("env_exports", _list, [], "NAME=value pairs exported by the hook (comma separated)"),
    Field("series_dir", str, None, "directory holding <task_id>.series.jsonl sidecars"),
    Field("seed", int, 0, "simulator seed"),
    Field("tasks", int, 20, "simulated task count"),
    Field("machines", int, 3, "simulated machine count"),
    Field("shape", str, "layered-random", "simulated DAG shape"),
    Field("duration_min", float, 1.0, "shortest simulated task (s)"),
    Field("duration_max", float, 60.0, "longest simulated task (s)"),
    Field("files_min", int, 1, "fewest outputs per simulated task"),
    Field("files_max", int, 3, "most outputs per simulated task"),
    Field("failure_rate", float, 0.0, "probability a simulated task's first attempt fails"),
    Field("refresh_s", float, 2.0, "watch: seconds between DOT refreshes"),
    Field("snapshot_dir", str, None, "watch: also keep numbered DOT snapshots here"),
    Field("idle_timeout_s", float, 30.0, "watch: give up after this long without new data"),
    Field("answers", str, None, "simulate: write reference answers JSON here"),
    Field("csv", str, None, "sample: CSV mirror of the series"),
    Field("source", str, None, "stats-source fixture directory (live system when unset)"),
    Field("count", int, None, "sample: stop after this many samples"),
    Field("duration_s", float, None, "sample: stop after this many seconds"),
    Field("run_id", str, None, "run identifier"),
    Field("task_id", str, None, "task identifier"),
    Field("sample_interval_s", float, None, "simulate: emit node samples at this interval"),
)}


def read_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep:
                raise ConfigError(f"{path}:{lineno}", "expected key = value")
            if key not in FIELDS:
                raise ConfigError(f"{path}:{lineno}", f"unknown key {key!r}")
            values[key] = value.strip()
    return values


def resolve(cli=None, env=None, file_values=None, names=None):
    """Effective value and origin of each field.

    ``cli`` maps field names to flag values (``None`` = flag not given).
    Returns ``({name: value}, {name: origin})`` where origin is one of
    ``cli``, ``env``, ``file`` or ``default``.
    """
    cli = cli or {}
    env = env if env is not None else os.environ
    file_values = file_values or {}
    values, origins = {}, {}
    for name in names or FIELDS:
        f = FIELDS[name]
        env_key = ENV_PREFIX + name.upper()
        if cli.get(name) is not None:
            raw, origin = cli[name], "cli"
        elif env.get(env_key) not in (None, ""):
            raw, origin = env[env_key], "env"
        elif name in file_values:
            raw, origin = file_values[name], "file"
        else:
            values[name], origins[name] = f.default, "default"
            continue
        try:
            values[name] = f.parse(raw)
        except (TypeError, ValueError) as exc:
            label = {"cli": "--" + name.replace("_", "-"), "env": env_key, "file": f"config key {name}"}[origin]
            raise ConfigError(label, str(exc)) from None
        origins[name] = origin
    return values, origins


def load(cli=None, env=None, config_path=None):
    env = env if env is not None else os.environ
    path = config_path or env.get(CONFIG_ENV)
    file_values = read_config_file(path) if path else {}
    return resolve(cli, env, file_values)
