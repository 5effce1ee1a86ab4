"""Acceptance criteria 1-10; each test records one PASS/FAIL line in the session summary."""
from __future__ import annotations

import itertools
import time
from dataclasses import replace
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from conftest import SPLIT, run_cli, trapezoid_fleet, write_config
from setback.cluster import day_group, kmeans, select_k, wss_curve
from setback.config import load_config
from setback.ingest import parse_meter_log
from setback.pipeline import load_demand_profiles
from setback.preprocess import denormalize, flatline_clean, iqr_clean, normalize, resample_meter
from setback.savings import daily_savings, sensitivity_sweep, virtual_profile
from setback.schedule import OccupancySignals, ScheduleParams, demand_signals, hvac_window, occupancy_signals
from setback.synth import default_campus, gen_campus, load_truth, oracle_kmeans, trapezoid_savings, write_campus

DELTAS = (0.05, 0.10, 0.15)

# Published occupancy signal rows: profile -> per delta (t_a, t_d, t_s_o, t_e_o); None marks "-".
PUBLISHED_ROWS = {
    "D-OS-1": [(8, 19, 6, 17), (8, 18, 6, 16), (9, 17, 7, 15)],
    "D-OS-2": [(None, None, None, None)] * 3,
    "D-OS-3": [(8, 20, 6, 18), (8, 18, 6, 16), (9, 18, 7, 16)],
    "D-OF-1": [(8, 23, 6, 21), (8, 21, 6, 19), (8, 20, 6, 18)],
    "D-OF-2": [(10, 22, 8, 20), (13, 19, 11, 17), (15, 16, 13, 14)],
    "D-OF-3": [(7, None, 5, None), (8, 22, 6, 20), (8, 21, 6, 19)],
    "D-OF-4": [(8, None, 6, None), (8, None, 6, None), (9, 23, 7, 21)],
}


@pytest.fixture(scope="module")
def default_runs(default_campus_files, tmp_path_factory):
    """Two timed ``run --all`` passes over the default campus into separate directories."""
    d = tmp_path_factory.mktemp("default_runs")
    runs = []
    for name in ("a", "b"):
        cfg = write_config(d / f"{name}.toml", default_campus_files["wifi"], default_campus_files["meter"], d / name)
        t0 = time.perf_counter()
        code = run_cli("run", "--all", "--config", cfg)
        runs.append({"config": cfg, "out": d / name, "code": code, "seconds": time.perf_counter() - t0})
    return runs


def test_criterion_1_worked_example_signals(acceptance):
    t0 = time.perf_counter()
    counts = np.array([2, 2, 2, 2, 2, 2, 2, 6, 20, 42, 42, 42, 38, 42, 42, 42, 42, 42, 30, 12, 7, 2, 2, 2], float)
    kw = np.array([150, 150, 150, 150, 150, 150, 420, 430, 440, 450, 450, 450, 450, 450, 450, 450, 440, 430,
                   420, 410, 405, 400, 160, 155], float)
    occ = occupancy_signals(normalize(counts)[0], ScheduleParams(0.15, tau=2, evening_sign=-1))
    dem = demand_signals(normalize(kw)[0])
    elapsed = time.perf_counter() - t0
    got = (occ.t_a, occ.t_d, occ.t_s_o, occ.t_e_o, dem.t_s_e, dem.t_e_e)
    acceptance(1, got == (8, 20, 6, 18, 5, 21) and elapsed < 1.0,
               f"t_a,t_d,t_s_o,t_e_o,t_s_e,t_e_e = {got} in {elapsed * 1000:.1f} ms")


def test_criterion_2_published_hvac_windows(acceptance):
    mismatches = []
    for profile, rows in PUBLISHED_ROWS.items():
        for delta, (t_a, t_d, t_s_o, t_e_o) in zip(DELTAS, rows):
            occ = OccupancySignals(t_a=t_a, t_d=t_d, unoccupied=t_a is None, open_ended=t_a is not None and t_d is None)
            got = hvac_window(occ, 2, evening_sign=-1)
            if (got.t_s_o, got.t_e_o) != (t_s_o, t_e_o):
                mismatches.append((profile, delta, (got.t_s_o, got.t_e_o), (t_s_o, t_e_o)))
    n = sum(len(r) for r in PUBLISHED_ROWS.values())
    acceptance(2, not mismatches, f"{n - len(mismatches)}/{n} rows reproduced; mismatches {mismatches}")


def test_criterion_3_kmeans_matches_exhaustive_optimum(acceptance):
    t0 = time.perf_counter()
    misses = []
    for i in range(100):
        rng = np.random.default_rng(i)
        k = int(rng.integers(2, 4))
        n = int(rng.integers(k, 9))
        x = rng.random((n, int(rng.integers(1, 4))))
        got, best = kmeans(x, k, 20, seed=i).wss, oracle_kmeans(x, k)[0]
        if abs(got - best) > 1e-9:
            misses.append((i, n, k, got, best))
    elapsed = time.perf_counter() - t0
    acceptance(3, len(misses) <= 1 and elapsed < 5.0,
               f"{100 - len(misses)}/100 optimal in {elapsed:.2f} s; misses {misses}")


def test_criterion_4_elbow_recovers_three_clusters(acceptance):
    picks = []
    for s in range(100):
        rng = np.random.default_rng(1000 + s)
        centers = rng.random((3, 24))
        sd = min(np.linalg.norm(a - b) for a, b in itertools.combinations(centers, 2)) / 5
        x = np.vstack([c + rng.normal(0, sd, (30, 24)) for c in centers])
        picks.append(select_k(wss_curve(x, range(2, 11), 20, seed=s)).k)
    hits = picks.count(3)
    acceptance(4, hits >= 95, f"k=3 selected for {hits}/100 seeds; other picks {[k for k in picks if k != 3]}")


def _signal_rows(out: Path, delta: float) -> pd.DataFrame:
    sig = pd.read_csv(out / "schedule/signals.csv")
    return sig[np.isclose(sig["delta"], delta)].set_index("profile_label")


def _occupancy_table(out: Path) -> dict:
    tab = pd.read_csv(out / "cluster/schedule_table.csv", dtype={"building_id": str})
    tab = tab[tab["kind"] == "occupancy"]
    return {(r.building_id, r.semester, r.day_group): r.label for r in tab.itertuples()}


def _opt(v) -> int | None:
    return None if pd.isna(v) else int(v)


def test_criterion_5_default_campus_end_to_end(acceptance, default_runs, default_campus_files):
    run = default_runs[0]
    out = run["out"]
    truth = load_truth(default_campus_files["truth"])
    table = _occupancy_table(out)
    window_errors = []
    for delta in DELTAS:
        sig = _signal_rows(out, delta)
        for (b, sem, group), label in table.items():
            if group == "Sat-Sun":
                continue
            row = sig.loc[f"D-O{sem[0].upper()}-{label}"]
            t = truth[b]
            t_a, t_d = _opt(row["t_a"]), _opt(row["t_d"])
            if t_a is None or t_d is None or abs(t_a - t.arrival_hour) > 1 or abs(t_d - t.departure_hour) > 1:
                window_errors.append((b, sem, group, delta, t_a, t_d, t.arrival_hour, t.departure_hour))

    # Oracle: the pipeline's own occupancy targets applied to the true trapezoid of every costed day.
    ledger = pd.read_csv(out / "savings/ledger.csv", dtype={"building_id": str})
    gaps = {}
    for delta, grp in ledger.groupby("delta"):
        sig = _signal_rows(out, delta)
        expected = 0.0
        for b, day in zip(grp["building_id"], grp["date"]):
            d = date.fromisoformat(day)
            sem = "fall" if d >= SPLIT else "summer"
            row = sig.loc[f"D-O{sem[0].upper()}-{table[(b, sem, day_group(d))]}"]
            t = truth[b]
            i = (d - t.start).days
            expected += trapezoid_savings(t.setback_kw[i], t.operating_kw[i], t.ramp_hour, t.setback_hour,
                                          (_opt(row["t_s_o"]), _opt(row["t_e_o"])))
        gaps[round(delta, 2)] = (grp["savings_kwh"].sum() - expected) / expected

    ok = run["code"] == 0 and run["seconds"] < 10.0 and not window_errors and all(abs(g) <= 0.05 for g in gaps.values())
    detail = (f"run {run['seconds']:.2f} s; {len(window_errors)} weekday windows off by >1 h {window_errors}; "
              f"ledger vs oracle {', '.join(f'{d}: {100 * g:+.2f}%' for d, g in gaps.items())}")
    acceptance(5, ok, detail)


def test_criterion_6_alignment_identity(acceptance, default_runs):
    out = default_runs[0]["out"]
    cfg = load_config(default_runs[0]["config"])
    nonzero, checked = [], 0
    for mode in ("centroid", "actual"):
        demand = load_demand_profiles(out, cfg, mode)
        for (b, d), label in demand.calendar.items():
            dem = demand.signals.get((demand.calendar.semester(d), label))
            if dem is None or (mode == "actual" and (b, d) not in demand.actual):
                continue
            s = daily_savings(virtual_profile(demand.base(b, d, mode), dem, (dem.t_s_e, dem.t_e_e)))
            checked += 1
            if s != 0.0:
                nonzero.append((mode, b, d, s))
    sweep = pd.read_csv(out / "sweep/sweep.csv")
    origin = sweep[(sweep["shift_morning_h"] == 0) & (sweep["shift_evening_h"] == 0)]["avg_savings_pct"]
    acceptance(6, not nonzero and (origin == 0.0).all() and checked > 0,
               f"{checked} aligned building-days, {len(nonzero)} nonzero; sweep (0,0) max {origin.abs().max()}")


def test_criterion_7_normalization_round_trip(acceptance):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        v = rng.normal(rng.uniform(-1e3, 1e3), rng.uniform(1e-3, 1e3), 24)
        norm, params = normalize(v)
        worst = max(worst, float(np.abs(denormalize(norm, params) - v).max()))
    flat, flat_params = normalize(np.full(24, 312.5))
    degenerate_ok = bool(np.all(flat == 0.0)) and np.all(denormalize(flat, flat_params) == 312.5)
    acceptance(7, worst <= 1e-9 and degenerate_ok,
               f"max round-trip error {worst:.2e} over 1000 vectors; constant vector -> zeros: {degenerate_ok}")


def test_criterion_8_cleaning_catches_injected_defects(acceptance, tmp_path):
    specs = [replace(s, defects=replace(s.defects, spike_count=15, flatline_runs=8)) for s in default_campus()]
    campus = gen_campus(specs, 180, seed=11)
    write_campus(campus, tmp_path)
    raw = resample_meter(parse_meter_log(tmp_path / "meter.csv"))
    spikes_hit = spikes = runs_hit = runs = false_null = clean = 0
    for b, series in raw.items():
        cleaned = flatline_clean(iqr_clean(series))
        nullified = np.isnan(cleaned.values) & ~np.isnan(series.values)
        t = campus.truths[b]
        defect = np.zeros(len(series.values), dtype=bool)
        for h in t.spike_hours:
            spikes += 1
            spikes_hit += nullified[h]
            defect[h] = True
        for start, length in t.flatline_runs:
            runs += length >= 3
            runs_hit += length >= 3 and nullified[start:start + length].all()
            defect[start:start + length] = True
        usable = ~defect & ~np.isnan(series.values)
        clean += usable.sum()
        false_null += (nullified & usable).sum()
    spike_rate, run_rate, false_rate = spikes_hit / spikes, runs_hit / runs, false_null / clean
    acceptance(8, spike_rate >= 0.95 and run_rate == 1.0 and false_rate <= 0.02,
               f"spikes {spikes_hit}/{spikes} ({100 * spike_rate:.1f}%), flat runs {runs_hit}/{runs}, "
               f"false nullification {100 * false_rate:.3f}% of {clean} clean hours")


def _monotone_toward_corner(avg: dict) -> list:
    bad = []
    for (a, e), v in avg.items():
        for nxt in ((a + 1, e), (a, e - 1)):
            if nxt in avg and not avg[nxt] > v:
                bad.append(((a, e), nxt, v, avg[nxt]))
    return bad


def test_criterion_9_sweep_monotone(acceptance, default_runs):
    demand, _, _ = trapezoid_fleet()
    fleet = sensitivity_sweep(demand).average()
    bad = _monotone_toward_corner(fleet)

    sweep = pd.read_csv(default_runs[0]["out"] / "sweep/sweep.csv")
    origin_ok = fleet[(0, 0)] == 0.0
    for b, grp in sweep.groupby("building_id"):
        avg = {(int(r.shift_morning_h), int(r.shift_evening_h)): r.avg_savings_pct for r in grp.itertuples()}
        origin_ok &= avg[(0, 0)] == 0.0
        bad += [(b, *x) for x in _monotone_toward_corner(avg)]
    acceptance(9, origin_ok and not bad,
               f"(0,0) zero: {origin_ok}; non-increasing steps {bad}; trapezoid fleet (+2,-2) = {fleet[(2, -2)]:.2f}%")


def test_criterion_10_reruns_are_byte_identical(acceptance, default_runs):
    a, b = default_runs[0]["out"], default_runs[1]["out"]
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    other = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    differ = [str(p) for p in files if p in other and (a / p).read_bytes() != (b / p).read_bytes()]
    acceptance(10, files == other and not differ and default_runs[1]["code"] == 0,
               f"{len(files)} artifacts compared; differing {differ}")
