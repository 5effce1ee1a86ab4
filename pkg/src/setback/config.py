"""Run configuration: one TOML file, validated, with command-line overrides."""
from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .ingest import DEFAULT_WAP_PATTERN, TIMESTAMP_FORMAT, compile_wap_pattern
from .preprocess import NORM_SCOPES

REPORT_FORMATS = ("csv", "json", "table", "svg")

DEFAULTS: dict[str, dict[str, Any]] = {
    "paths": {"wifi": None, "meter": None, "out": "out", "truth": None},
    "run": {"split_date": "2019-08-23", "start": None, "end": None},
    "ingest": {
        "wap_pattern": DEFAULT_WAP_PATTERN,
        "malformed_abort_pct": 5.0,
        "timestamp_format": TIMESTAMP_FORMAT,
        "meter_duplicates": "last",
        "wifi_schema": {},
        "meter_schema": {},
    },
    "preprocess": {
        "short_stay_max_min": 45,
        "regular_max_min": 540,
        "iqr_factor": 1.5,
        "flatline_window_h": 3,
        "max_gap_h": 6,
        "norm_scope": "building-semester",
    },
    "cluster": {"k_min": 2, "k_max": 10, "restarts": 20, "seed": 0, "k_override": None},
    "schedule": {"tau_sign_evening": -1},
    "savings": {
        "mode": "centroid",
        "delta": [0.05, 0.10, 0.15],
        "tau": 2,
        "sweep_morning": [0, 1, 2],
        "sweep_evening": [0, -1, -2],
    },
    "report": {"formats": list(REPORT_FORMATS)},
}

# Config sections each stage depends on; a change to any of them makes the
# stage's recorded artifacts stale.
STAGE_SECTIONS = {
    "ingest": ("paths.inputs", "ingest"),
    "preprocess": ("run", "preprocess"),
    "cluster": ("run", "cluster"),
    "schedule": ("schedule", "savings.signals"),
    "savings": ("savings",),
    "sweep": ("savings",),
    "report": ("report",),
}


def _as_date(value, key: str) -> date | None:
    if value is None or isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"{key}: not an ISO date: {value!r}") from exc


@dataclass
class RunConfig:
    sections: dict[str, dict[str, Any]]
    base_dir: Path = field(default_factory=Path.cwd)
    source: Path | None = None

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.sections[section]

    def path(self, key: str) -> Path | None:
        value = self.sections["paths"].get(key)
        if value in (None, ""):
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out_dir(self) -> Path:
        return self.path("out")

    @property
    def split_date(self) -> date:
        return _as_date(self["run"]["split_date"], "run.split_date")

    @property
    def start(self) -> date | None:
        return _as_date(self["run"]["start"], "run.start")

    @property
    def end(self) -> date | None:
        return _as_date(self["run"]["end"], "run.end")

    @property
    def deltas(self) -> list[float]:
        return [float(d) for d in self["savings"]["delta"]]

    @property
    def tau(self) -> int:
        return int(self["savings"]["tau"])

    def k_override(self, dataset: str) -> int | None:
        k = self["cluster"]["k_override"]
        if isinstance(k, Mapping):
            k = k.get(dataset)
        return None if k is None else int(k)

    def stage_params(self, stage: str) -> dict:
        """The config values a stage's outputs depend on."""
        out = {}
        for key in STAGE_SECTIONS[stage]:
            if key == "paths.inputs":
                out[key] = {k: str(self.path(k)) for k in ("wifi", "meter")}
            elif key == "savings.signals":
                out[key] = {"delta": self.deltas, "tau": self.tau}
            else:
                out[key] = self.sections[key]
        return out

    def fingerprint(self, stage: str) -> str:
        blob = json.dumps(self.stage_params(stage), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def validate(self, require_inputs: bool = False) -> "RunConfig":
        ing, pre, clu, sch, sav, rep = (self[s] for s in ("ingest", "preprocess", "cluster", "schedule", "savings", "report"))
        if require_inputs:
            for key in ("wifi", "meter"):
                p = self.path(key)
                if p is None:
                    raise ConfigError(f"paths.{key} is required")
                if not p.is_file():
                    raise ConfigError(f"paths.{key}: {p} does not exist")
        compile_wap_pattern(ing["wap_pattern"])
        if not 0 <= float(ing["malformed_abort_pct"]) <= 100:
            raise ConfigError("ingest.malformed_abort_pct must lie in [0, 100]")
        if ing["meter_duplicates"] not in ("last", "reject"):
            raise ConfigError("ingest.meter_duplicates must be 'last' or 'reject'")
        split, start, end = self.split_date, self.start, self.end
        if split is None:
            raise ConfigError("run.split_date is required")
        if start and end and start > end:
            raise ConfigError("run.start is after run.end")
        if (start and split <= start) or (end and split > end):
            raise ConfigError(f"split date {split} lies outside the analysis period {start}..{end}")
        if not 0 < int(pre["short_stay_max_min"]) <= int(pre["regular_max_min"]) <= 1440:
            raise ConfigError("need 0 < short_stay_max_min <= regular_max_min <= 1440")
        if float(pre["iqr_factor"]) < 0 or int(pre["flatline_window_h"]) < 2 or int(pre["max_gap_h"]) < 0:
            raise ConfigError("need iqr_factor >= 0, flatline_window_h >= 2, max_gap_h >= 0")
        if pre["norm_scope"] not in NORM_SCOPES:
            raise ConfigError(f"preprocess.norm_scope must be one of {NORM_SCOPES}")
        if not 1 <= int(clu["k_min"]) <= int(clu["k_max"]) or int(clu["restarts"]) < 1:
            raise ConfigError("need 1 <= k_min <= k_max and restarts >= 1")
        if int(clu["k_max"]) - int(clu["k_min"]) < 2 and clu["k_override"] is None:
            raise ConfigError("elbow selection needs k_max - k_min >= 2 unless k_override is set")
        k_over = clu["k_override"]
        for k in (k_over.values() if isinstance(k_over, Mapping) else [k_over]):
            if k is not None and int(k) < 1:
                raise ConfigError("cluster.k_override must be positive")
        if int(clu["seed"]) < 0:
            raise ConfigError("cluster.seed must be non-negative")
        if sch["tau_sign_evening"] not in (-1, 1):
            raise ConfigError("schedule.tau_sign_evening must be +1 or -1")
        if not sav["delta"]:
            raise ConfigError("savings.delta must list at least one threshold")
        if any(not 0 < d < 1 for d in self.deltas):
            raise ConfigError("every savings.delta must lie in (0, 1)")
        if self.tau < 0:
            raise ConfigError("savings.tau must be non-negative")
        if sav["mode"] not in ("centroid", "actual"):
            raise ConfigError("savings.mode must be 'centroid' or 'actual'")
        if not sav["sweep_morning"] or not sav["sweep_evening"]:
            raise ConfigError("sweep grids must be non-empty")
        bad = set(rep["formats"]) - set(REPORT_FORMATS)
        if bad:
            raise ConfigError(f"unknown report format(s) {sorted(bad)}; choose from {REPORT_FORMATS}")
        return self


def _merge(defaults: dict, loaded: Mapping) -> dict:
    out = copy.deepcopy(defaults)
    for section, values in loaded.items():
        if section not in defaults:
            continue  # other tools (e.g. synth's [campus]) may share the file
        if not isinstance(values, Mapping):
            raise ConfigError(f"[{section}] must be a table")
        unknown = set(values) - set(defaults[section])
        if unknown:
            raise ConfigError(f"[{section}] has unknown key(s) {sorted(unknown)}")
        out[section].update(copy.deepcopy(dict(values)))
    return out


def read_toml(path: str | Path) -> dict:
    p = Path(path)
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {p} not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc


def load_config(path: str | Path | None = None, overrides: Mapping[str, Mapping[str, Any]] | None = None) -> RunConfig:
    """Defaults, then the TOML file, then ``overrides`` (section -> key -> value).

    Relative paths in ``[paths]`` resolve against the config file's directory.
    """
    loaded = read_toml(path) if path else {}
    sections = _merge(DEFAULTS, loaded)
    for section, values in (overrides or {}).items():
        sections[section].update({k: v for k, v in values.items() if v is not None})
    base = Path(path).resolve().parent if path else Path.cwd()
    return RunConfig(sections, base, Path(path) if path else None)
