"""Report rendering: signal, savings, schedule and sweep tables as CSV, JSON,
fixed-width text, and SVG line charts."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .cluster import DAY_GROUPS, profile_name
from .config import REPORT_FORMATS
from .errors import ConfigError, StageError
from .pipeline import fmt_float, read_json, write_csv, write_json
from .preprocess import SEMESTERS, Kind

DASH = "-"


def fmt_hour(h) -> str:
    """``8`` -> ``08:00``; undefined -> ``-``."""
    if h is None or pd.isna(h):
        return DASH
    return f"{int(h):02d}:00"


def signals_table(out: Path) -> pd.DataFrame:
    """One row per (occupancy profile, delta), times as HH:00 or '-'."""
    f = pd.read_csv(out / "schedule" / "signals.csv", float_precision="round_trip")
    table = pd.DataFrame({
        "profile": f["profile_label"],
        "delta": f["delta"].map(lambda v: f"{v:.2f}"),
        "tau": f["tau"],
    })
    for c in ("t_a", "t_d", "t_s_o", "t_e_o"):
        table[c] = f[c].map(fmt_hour)
    return table


def demand_signals_table(out: Path) -> pd.DataFrame:
    f = pd.read_csv(out / "schedule" / "demand_signals.csv")
    return pd.DataFrame({"profile": f["profile_label"], "t_s_e": f["t_s_e"].map(fmt_hour), "t_e_e": f["t_e_e"].map(fmt_hour)})


def schedule_table(out: Path) -> pd.DataFrame:
    """Buildings x (semester, day group) with profile names for each kind."""
    f = pd.read_csv(out / "cluster" / "schedule_table.csv", dtype={"building_id": str})
    f["profile"] = [profile_name(Kind(k), s, l) for k, s, l in zip(f["kind"], f["semester"], f["label"])]
    f["column"] = f["semester"].str.capitalize() + " " + f["day_group"]
    wide = f.pivot_table(index=["building_id", "kind"], columns="column", values="profile", aggfunc="first")
    order = [f"{s.capitalize()} {g}" for s in SEMESTERS for g in DAY_GROUPS]
    wide = wide.reindex(columns=[c for c in order if c in wide.columns]).fillna(DASH)
    return wide.reset_index().rename(columns={"building_id": "building"})


def savings_table(out: Path, deltas: Sequence[float]) -> pd.DataFrame:
    """Percent savings per building and semester with one column per delta,
    followed by Average (%) and Average (MWh) footer rows."""
    summary = read_json(out / "savings" / "summary.json")["deltas"]
    rows = []
    for sem in SEMESTERS:
        buildings = sorted({b for d in summary.values() for b, v in d["buildings"].items() if sem in v})
        if not buildings:
            continue
        pct = {b: {} for b in buildings}
        mwh = {b: {} for b in buildings}
        for delta in deltas:
            entry = summary.get(fmt_float(delta), {"buildings": {}})["buildings"]
            for b in buildings:
                r = entry.get(b, {}).get(sem)
                pct[b][delta] = r["pct"] if r else np.nan
                mwh[b][delta] = r["total_kwh"] / 1000.0 if r else np.nan
        cols = {f"delta={d:.2f}": d for d in deltas}
        for b in buildings:
            rows.append({"semester": sem, "building": b, **{c: _pct(pct[b][d]) for c, d in cols.items()}})
        rows.append({"semester": sem, "building": "Average (%)",
                     **{c: _pct(np.nanmean([pct[b][d] for b in buildings])) for c, d in cols.items()}})
        rows.append({"semester": sem, "building": "Average (MWh)",
                     **{c: _mwh(np.nanmean([mwh[b][d] for b in buildings])) for c, d in cols.items()}})
    return pd.DataFrame(rows)


def _pct(v: float) -> str:
    return DASH if v is None or np.isnan(v) else f"{v:.1f}%"


def _mwh(v: float) -> str:
    return DASH if v is None or np.isnan(v) else f"{v:.2f}"


def sweep_table(out: Path) -> pd.DataFrame:
    """Average savings (%) over buildings: rows morning shift, columns evening shift."""
    f = pd.read_csv(out / "sweep" / "sweep.csv", dtype={"building_id": str}, float_precision="round_trip")
    avg = f.groupby(["shift_morning_h", "shift_evening_h"])["avg_savings_pct"].mean().unstack()
    avg = avg.reindex(columns=sorted(avg.columns, reverse=True))
    table = avg.map(lambda v: f"{v:.2f}%")
    table.columns = [f"evening {c:+d} h" for c in table.columns]
    table.index = [f"morning {a:+d} h" for a in table.index]
    return table.rename_axis("shift").reset_index()


def miss_waste_table(out: Path) -> pd.DataFrame:
    f = pd.read_csv(out / "schedule" / "miss_waste.csv", dtype={"building_id": str}, float_precision="round_trip")
    return f.groupby(["semester", "delta"], sort=False)[["waste_h", "miss_h"]].sum().reset_index()


def wss_curve_table(out: Path) -> pd.DataFrame:
    return pd.read_csv(out / "cluster" / "wss_curve.csv", float_precision="round_trip")


def _text(title: str, frame: pd.DataFrame) -> str:
    body = frame.to_string(index=False) if len(frame) else "(empty)"
    return f"{title}\n{'=' * len(title)}\n{body}\n"


def emit_report(out: Path, dest: Path, formats: Sequence[str], deltas: Sequence[float]) -> list[Path]:
    """Render every report table in ``formats`` into ``dest``; returns the files written."""
    formats = list(dict.fromkeys(formats))
    bad = set(formats) - set(REPORT_FORMATS)
    if bad:
        raise ConfigError(f"unknown report format(s) {sorted(bad)}; choose from {REPORT_FORMATS}")
    for needed in ("cluster/clusters.json", "schedule/signals.csv", "savings/summary.json", "sweep/sweep.csv"):
        if not (out / needed).is_file():
            raise StageError(f"report needs {needed}; run the upstream stages first")
    tables = {
        "signals_table": ("Occupancy-derived signals", signals_table(out)),
        "demand_signals_table": ("Demand-derived ramp-up and setback", demand_signals_table(out)),
        "schedule_table": ("Mode schedule profiles", schedule_table(out)),
        "savings_table": ("Estimated savings", savings_table(out, deltas)),
        "miss_waste_table": ("Miss and waste hours", miss_waste_table(out)),
        "sweep_table": ("Static-window shift sweep (average over buildings)", sweep_table(out)),
        "wss_curve": ("WSS by k", wss_curve_table(out)),
    }
    written = []
    if "csv" in formats:
        for name, (_, frame) in tables.items():
            write_csv(frame, dest / f"{name}.csv")
            written.append(dest / f"{name}.csv")
    if "table" in formats:
        text = "\n".join(_text(title, frame) for title, frame in tables.values())
        (dest / "report.txt").write_text(text)
        written.append(dest / "report.txt")
    if "json" in formats:
        write_json(dest / "report.json", {name: frame.to_dict(orient="records") for name, (_, frame) in tables.items()})
        written.append(dest / "report.json")
    if "svg" in formats:
        written += _figures(out, dest, deltas)
    return written


def _figures(out: Path, dest: Path, deltas: Sequence[float]) -> list[Path]:
    from .plotting import plot_centroids, plot_hour_of_week, plot_sweep, plot_wss_curves

    clusters = read_json(out / "cluster" / "clusters.json")["datasets"]
    paths = []
    for ds, rec in sorted(clusters.items()):
        names = [profile_name(Kind(rec["kind"]), rec["semester"], i + 1) for i in range(rec["k"])]
        paths.append(plot_centroids(rec["centroids"], names, f"{ds} centroids ({rec['n_rows']} days)", dest / f"centroids_{ds}.svg"))
    curves = {ds: {int(k): v for k, v in rec["wss_curve"].items()} for ds, rec in clusters.items()}
    paths.append(plot_wss_curves(curves, {ds: rec["k"] for ds, rec in clusters.items()}, dest / "wss_curves.svg"))
    summary = read_json(out / "savings" / "summary.json")["deltas"]
    for delta in deltas:
        entry = summary.get(fmt_float(delta))
        if not entry:
            continue
        how = {}
        for b, sems in entry["buildings"].items():
            how[b] = np.sum([s["by_hour_of_week"] for s in sems.values()], axis=0)
        paths.append(plot_hour_of_week(how, f"savings by hour of week, delta={delta:.2f}", dest / f"savings_how_{delta:.2f}.svg"))
    f = pd.read_csv(out / "sweep" / "sweep.csv", float_precision="round_trip")
    grid = f.groupby(["shift_morning_h", "shift_evening_h"])["avg_savings_pct"].mean().to_dict()
    paths.append(plot_sweep({(int(a), int(b)): v for (a, b), v in grid.items()}, dest / "sweep.svg"))
    return paths
