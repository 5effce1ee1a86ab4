"""Shared fixtures: synthetic campuses, run configs and acceptance reporting."""
from __future__ import annotations

from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from setback.cli import main
from setback.cluster import ClusterCalendar
from setback.ingest import ConnectionLog
from setback.preprocess import Kind, NormalizationParams, normalize
from setback.savings import DemandProfiles
from setback.schedule import DemandSignals
from setback.synth import (
    BuildingSpec, DefectSpec, DemandSpec, DeviceSpec, OccupancySpec, default_campus, gen_campus, write_campus,
)

SPLIT = date(2019, 8, 23)

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def acceptance():
    """Record one criterion's outcome for the summary, then assert it."""
    def record(n: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n} failed: {detail}"
    return record


def write_config(path: Path, wifi: Path, meter: Path, out: Path, extra: str = "") -> Path:
    path.write_text(
        f'[paths]\nwifi = "{wifi}"\nmeter = "{meter}"\nout = "{out}"\n{extra}'
    )
    return path


def run_cli(*args: str | Path) -> int:
    return main([str(a) for a in args])


def events_frame(rows) -> ConnectionLog:
    """ConnectionLog from ``(timestamp, building, wap, device)`` tuples."""
    frame = pd.DataFrame(rows, columns=["timestamp", "building_id", "wap_name", "device_hash"])
    frame["timestamp"] = pd.to_datetime(frame["timestamp"])
    return ConnectionLog(frame)


def slot_rows(day: str, building: str, device: str, first_slot: int, n_slots: int, wap: str | None = None):
    """One event per 5-minute slot ``first_slot .. first_slot + n_slots - 1``."""
    base = datetime.fromisoformat(day)
    wap = wap or f"{building}-1-101"
    return [(base + pd.Timedelta(minutes=5 * s), building, wap, device) for s in range(first_slot, first_slot + n_slots)]


def small_specs() -> list[BuildingSpec]:
    return [
        BuildingSpec(
            f"S{i}",
            OccupancySpec(arrival_hour=8 + i % 2, departure_hour=17 + i, peak_regular=12),
            DemandSpec(setback_kw=60.0 + 10 * i, operating_kw=240.0 + 30 * i),
            DeviceSpec(short_stay_rate=3.0, stationary_count=1, external_rate=1.0),
            DefectSpec(spike_count=1, flatline_runs=1),
        )
        for i in range(3)
    ]


@pytest.fixture(scope="session")
def small_campus(tmp_path_factory):
    """Three buildings over 70 days (45 summer, 25 fall) on disk."""
    d = tmp_path_factory.mktemp("small_campus")
    paths = write_campus(gen_campus(small_specs(), 70, seed=3), d)
    return paths


@pytest.fixture(scope="session")
def small_run(tmp_path_factory, small_campus):
    """``run --all`` on the small campus; tests must not modify its outputs."""
    d = tmp_path_factory.mktemp("small_run")
    cfg = write_config(d / "config.toml", small_campus["wifi"], small_campus["meter"], d / "out")
    assert run_cli("run", "--all", "--config", cfg) == 0
    return {"config": cfg, "out": d / "out", **small_campus}


@pytest.fixture(scope="session")
def default_campus_files(tmp_path_factory):
    """The five-building, 180-day default campus (2% demand noise)."""
    d = tmp_path_factory.mktemp("default_campus")
    return write_campus(gen_campus(default_campus(), 180, seed=0), d)


def trapezoid(ramp=5, setback=21, low=100.0, high=400.0) -> np.ndarray:
    h = np.arange(24)
    return np.where((h > ramp) & (h <= setback), high, low)


def trapezoid_fleet(days=28, buildings=("B1", "B2"), start=date(2019, 7, 15)):
    """Summer demand profiles of scaled copies of the 5..21 trapezoid, starting on a Monday."""
    norm, params = normalize(trapezoid())
    dates = [start + timedelta(days=i) for i in range(days)]
    calendar = ClusterCalendar(Kind.DEMAND, SPLIT, {(b, d): 1 for b in buildings for d in dates})
    sems = {calendar.semester(d) for d in dates}
    scale = {b: 1.0 + 0.5 * i for i, b in enumerate(buildings)}
    kw = {b: NormalizationParams((b,), 100.0 * scale[b], 400.0 * scale[b]) for b in buildings}
    return DemandProfiles(
        calendar,
        centroids={(s, 1): norm for s in sems},
        signals={(s, 1): DemandSignals(5, 21) for s in sems},
        params={(b, s): kw[b] for b in buildings for s in sems},
        actual={(b, d): trapezoid(low=100.0 * scale[b], high=400.0 * scale[b]) for b in buildings for d in dates},
    ), dates, scale
