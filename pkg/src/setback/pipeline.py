"""Stage orchestration with on-disk artifacts and a hash manifest.

Each stage reads only its upstream stages' files under the output directory
and writes into its own subdirectory, so any stage can be rerun alone.
``manifest.json`` records, per stage, the config it ran with and the sha256
of every file it read and wrote; a stage refuses to run on upstream
artifacts that no longer match those records.
"""
from __future__ import annotations

import hashlib
import json
import logging
import platform
import shutil
from datetime import date
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np
import pandas as pd

from . import __version__
from .cluster import (
    DAY_GROUPS, ClusterCalendar, ScheduleTable, assign_calendar, build_profile_matrix,
    dataset_id, kmeans, mode_schedule_table, profile_name, select_k,
)
from .config import RunConfig
from .errors import ConfigError, DataError, NoRampError, SetbackError, StageError
from .ingest import ConnectionLog, MeterLog, filter_external, parse_connection_log, parse_meter_log
from .preprocess import (
    SEMESTERS, HourlySeries, Kind, NormalizationParams, Quality, classify_devices, flatline_clean,
    interpolate_gaps, iqr_clean, normalize, normalize_scoped, occupancy_series, resample_meter, semester_slice,
)
from .savings import DemandProfiles, SavingsLedger, aggregate_savings, sensitivity_sweep
from .schedule import DemandSignals, OccupancySignals, ScheduleParams, demand_signals, miss_waste, occupancy_signals

log = logging.getLogger(__name__)

STAGES = ("ingest", "preprocess", "cluster", "schedule", "savings", "sweep", "report")
CORE_STAGES = STAGES[:5]
UPSTREAM = {
    "ingest": (),
    "preprocess": ("ingest",),
    "cluster": ("preprocess",),
    "schedule": ("cluster",),
    "savings": ("preprocess", "cluster", "schedule"),
    "sweep": ("preprocess", "cluster", "schedule"),
    "report": ("cluster", "schedule", "savings", "sweep"),
}
MANIFEST = "manifest.json"
TS_FORMAT = "%Y-%m-%d %H:%M:%S"


# --- small IO helpers -----------------------------------------------------------

def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path: Path):
    return json.loads(Path(path).read_text())


def write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, lineterminator="\n")


def fmt_float(v) -> str:
    """Shortest exact text for a float; empty for NaN/None."""
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    return repr(float(v))


def _int_col(values: Iterable) -> pd.Series:
    return pd.Series(list(values), dtype="Int64")


class _Hasher:
    def __init__(self):
        self._cache: dict[tuple, str] = {}

    def __call__(self, path: Path) -> str | None:
        try:
            st = path.stat()
        except FileNotFoundError:
            return None
        key = (str(path), st.st_size, st.st_mtime_ns)
        if key not in self._cache:
            h = hashlib.sha256()
            with open(path, "rb") as fh:
                for block in iter(lambda: fh.read(1 << 22), b""):
                    h.update(block)
            self._cache[key] = h.hexdigest()
        return self._cache[key]


# --- manifest -------------------------------------------------------------------

class Manifest:
    def __init__(self, out_dir: Path, hasher: _Hasher | None = None):
        self.out_dir = out_dir
        self.path = out_dir / MANIFEST
        self.hash = hasher or _Hasher()
        self.data = read_json(self.path) if self.path.is_file() else {"stages": {}}
        self.data["versions"] = {
            "setback": __version__, "numpy": np.__version__, "pandas": pd.__version__,
            "python": platform.python_version(),
        }

    def _resolve(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.out_dir / p

    def outputs(self, stage: str) -> dict[str, str]:
        return self.data["stages"].get(stage, {}).get("outputs", {})

    def verify(self, stage: str, cfg: RunConfig) -> None:
        """Raise StageError unless every upstream artifact is present and current."""
        checked: set[str] = set()

        def check(u: str) -> None:
            if u in checked:
                return
            checked.add(u)
            entry = self.data["stages"].get(u)
            if entry is None:
                raise StageError(f"{stage}: upstream stage '{u}' has no artifacts in {self.out_dir}; run it first")
            if entry["config"] != cfg.fingerprint(u):
                raise StageError(f"{stage}: '{u}' artifacts were built with different settings; rerun '{u}'")
            for kind in ("inputs", "outputs"):
                for name, sha in entry[kind].items():
                    now = self.hash(self._resolve(name))
                    if now != sha:
                        state = "missing" if now is None else "changed"
                        raise StageError(f"{stage}: stale upstream artifact {name} ({state} since '{u}' ran); rerun '{u}'")
            for uu in UPSTREAM[u]:
                check(uu)

        for u in UPSTREAM[stage]:
            check(u)

    def record(self, stage: str, cfg: RunConfig, inputs: Iterable[Path]) -> None:
        stage_dir = self.out_dir / stage
        outputs = sorted(p for p in stage_dir.rglob("*") if p.is_file())
        self.data["stages"][stage] = {
            "config": cfg.fingerprint(stage),
            "params": cfg.stage_params(stage),
            "inputs": {self._name(p): self.hash(p) for p in sorted(set(inputs))},
            "outputs": {self._name(p): self.hash(p) for p in outputs},
        }

    def _name(self, p: Path) -> str:
        try:
            return p.resolve().relative_to(self.out_dir.resolve()).as_posix()
        except ValueError:
            return str(p.resolve())

    def save(self) -> None:
        self.data["stages"] = dict(sorted(self.data["stages"].items(), key=lambda kv: STAGES.index(kv[0])))
        write_json(self.path, self.data)


# --- ingest ---------------------------------------------------------------------

def _save_codes(d: Path, prefix: str, col: pd.Series) -> None:
    codes, names = pd.factorize(col, sort=True)
    np.save(d / f"{prefix}_codes.npy", codes.astype(np.int32))
    np.save(d / f"{prefix}_names.npy", np.asarray(names, dtype=str))


def _load_codes(d: Path, prefix: str) -> pd.Categorical:
    codes = np.load(d / f"{prefix}_codes.npy")
    names = np.load(d / f"{prefix}_names.npy")
    return pd.Categorical.from_codes(codes, categories=names.astype(object))


def stage_ingest(cfg: RunConfig, out: Path, d: Path) -> None:
    ing = cfg["ingest"]
    opts = dict(timestamp_format=ing["timestamp_format"], malformed_abort_pct=float(ing["malformed_abort_pct"]))
    wifi = parse_connection_log(cfg.path("wifi"), ing["wifi_schema"] or None, **opts)
    internal, external = filter_external(wifi, ing["wap_pattern"])
    meter = parse_meter_log(cfg.path("meter"), ing["meter_schema"] or None, duplicates=ing["meter_duplicates"], **opts)
    if not len(internal):
        raise DataError("no connection events left after dropping external WAPs")
    if not len(meter):
        raise DataError("no meter readings parsed")
    f = internal.frame
    np.save(d / "events_time.npy", f["timestamp"].to_numpy(dtype="datetime64[s]"))
    for col in ("building_id", "wap_name", "device_hash"):
        _save_codes(d, f"events_{col}", f[col])
    m = meter.frame
    np.save(d / "meter_time.npy", m["timestamp"].to_numpy(dtype="datetime64[s]"))
    _save_codes(d, "meter_building_id", m["building_id"])
    np.save(d / "meter_demand.npy", m["demand_kw"].to_numpy(dtype=float))
    np.save(d / "meter_valid.npy", m["valid"].to_numpy(dtype=bool))
    write_json(d / "report.json", {
        "wifi": wifi.report.to_dict(),
        "meter": meter.report.to_dict(),
        "external_waps": external,
        "n_internal_events": len(internal),
        "n_external_events": len(wifi) - len(internal),
        "n_devices": int(f["device_hash"].nunique()),
        "n_waps": int(f["wap_name"].nunique()),
    })


def load_events(out: Path) -> ConnectionLog:
    d = out / "ingest"
    frame = pd.DataFrame({
        "timestamp": pd.to_datetime(np.load(d / "events_time.npy")).as_unit("ns"),
        "building_id": _load_codes(d, "events_building_id"),
        "wap_name": _load_codes(d, "events_wap_name"),
        "device_hash": _load_codes(d, "events_device_hash"),
    })
    return ConnectionLog(frame)


def load_meter(out: Path) -> MeterLog:
    d = out / "ingest"
    frame = pd.DataFrame({
        "timestamp": pd.to_datetime(np.load(d / "meter_time.npy")).as_unit("ns"),
        "building_id": _load_codes(d, "meter_building_id"),
        "demand_kw": np.load(d / "meter_demand.npy"),
        "valid": np.load(d / "meter_valid.npy"),
    })
    return MeterLog(frame)


# --- preprocess -----------------------------------------------------------------

def _analysis_period(cfg: RunConfig, events: ConnectionLog, meter: MeterLog) -> tuple[date, date]:
    stamps = [events.frame["timestamp"], meter.frame["timestamp"]]
    first = cfg.start or min(s.min() for s in stamps).date()
    last = cfg.end or max(s.max() for s in stamps).date()
    split = cfg.split_date
    if not first < split <= last:
        raise ConfigError(f"split date {split} lies outside the analysis period {first}..{last}")
    return first, last


def _n_null(s: HourlySeries) -> int:
    return int(np.isnan(s.values).sum())


def clean_with_report(raw: HourlySeries, iqr_factor: float, window: int, max_gap: int) -> tuple[HourlySeries, dict]:
    s1 = iqr_clean(raw, iqr_factor)
    s2 = flatline_clean(s1, window)
    s3 = interpolate_gaps(s2, max_gap)
    report = {
        "hours": len(raw.values),
        "missing": _n_null(raw),
        "iqr_nullified": _n_null(s1) - _n_null(raw),
        "flatline_nullified": _n_null(s2) - _n_null(s1),
        "interpolated": int((s3.quality == Quality.INTERPOLATED).sum()),
        "null_after_cleaning": _n_null(s3),
        "complete_days": int(s3.complete_days().sum()),
        "days": s3.n_days,
        "notes": list(s3.notes),
    }
    return s3, report


def series_frame(series: Mapping[str, HourlySeries]) -> pd.DataFrame:
    parts = []
    for b in sorted(series):
        s = series[b]
        stamps = pd.date_range(pd.Timestamp(s.start), periods=len(s.values), freq="h").strftime(TS_FORMAT)
        parts.append(pd.DataFrame({
            "building_id": b,
            "timestamp": stamps,
            "kind": s.kind.value,
            "value": [fmt_float(v) for v in s.values],
            "quality": [Quality(q).name.lower() for q in s.quality],
        }))
    return pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(
        columns=["building_id", "timestamp", "kind", "value", "quality"])


def stage_preprocess(cfg: RunConfig, out: Path, d: Path) -> None:
    pre = cfg["preprocess"]
    events, meter = load_events(out), load_meter(out)
    first, last = _analysis_period(cfg, events, meter)
    stats = classify_devices(events, int(pre["short_stay_max_min"]), int(pre["regular_max_min"]))
    occ = occupancy_series(stats, events, first, last)
    dem_raw = resample_meter(meter, first, last)
    dem, cleaning = {}, {}
    for b, s in dem_raw.items():
        dem[b], cleaning[b] = clean_with_report(s, float(pre["iqr_factor"]), int(pre["flatline_window_h"]), int(pre["max_gap_h"]))
    params = []
    for series in (occ, dem):
        for (b, sem), (_, p) in normalize_scoped(series, cfg.split_date, pre["norm_scope"]).items():
            params.append({"building_id": b, "semester": sem, "kind": p.scope_id[-1], "min": p.min, "max": p.max,
                           "scope_id": list(p.scope_id)})
    write_csv(pd.concat([series_frame(occ), series_frame(dem)], ignore_index=True), d / "series.csv")
    write_json(d / "norm_params.json", params)
    write_json(d / "cleaning_report.json", {"period": [first.isoformat(), last.isoformat()], "demand": cleaning})
    classes = (stats.groupby(["building_id", "date", "device_class"]).size()
               .unstack(fill_value=0).reindex(columns=["short_stay", "regular", "stationary"], fill_value=0)
               .reset_index())
    classes["date"] = classes["date"].astype(str)
    write_csv(classes, d / "device_classes.csv")


def load_series(out: Path) -> dict[tuple[str, str], HourlySeries]:
    """Cleaned hourly series keyed by (kind, building)."""
    f = pd.read_csv(out / "preprocess" / "series.csv", dtype={"building_id": str, "kind": str, "quality": str},
                    float_precision="round_trip", keep_default_na=False, na_values=[""])
    codes = {q.name.lower(): int(q) for q in Quality}
    result = {}
    for (kind, b), grp in f.groupby(["kind", "building_id"], sort=True):
        start = date.fromisoformat(grp["timestamp"].iloc[0][:10])
        result[(kind, b)] = HourlySeries(
            b, Kind(kind), start, grp["value"].to_numpy(dtype=float),
            grp["quality"].map(codes).to_numpy(dtype=np.int8),
        )
    return result


def load_norm_params(out: Path) -> dict[tuple[str, str, str], NormalizationParams]:
    return {
        (p["building_id"], p["semester"], p["kind"]): NormalizationParams(tuple(p["scope_id"]), p["min"], p["max"])
        for p in read_json(out / "preprocess" / "norm_params.json")
    }


# --- cluster --------------------------------------------------------------------

def _fit_dataset(cfg: RunConfig, matrix, ds: str) -> dict:
    clu = cfg["cluster"]
    n = len(matrix)
    k_min, k_max, restarts, seed = int(clu["k_min"]), int(clu["k_max"]), int(clu["restarts"]), int(clu["seed"])
    override = cfg.k_override(ds)
    models = {k: kmeans(matrix, k, restarts, seed) for k in range(k_min, min(k_max, n) + 1)}
    curve = {k: m.wss for k, m in models.items()}
    if override is not None:
        if override > n:
            raise DataError(f"{ds}: k_override {override} exceeds the {n} available days")
        k = override
        sel = select_k(curve, override) if len(curve) >= 3 else None
    else:
        if len(curve) < 3:
            raise DataError(f"{ds}: only {n} complete days; elbow selection needs k_min+2 <= n")
        sel = select_k(curve)
        k = sel.k
    model = models.get(k) or kmeans(matrix, k, restarts, seed)
    return {
        "model": model,
        "record": {
            "dataset": ds, "kind": matrix.kind.value, "semester": matrix.semester, "n_rows": n,
            "k": k, "seed": seed, "restarts": restarts, "wss": model.wss,
            "centroids": model.centroids.tolist(),
            "wss_curve": {str(kk): v for kk, v in curve.items()},
            "second_diff": {str(kk): v for kk, v in (sel.second_diff if sel else {}).items()},
            "violations": list(sel.violations) if sel else [],
            "overridden": override is not None,
        },
    }


def normalized_semester(series: Mapping[str, HourlySeries], params, split: date, sem: str, kind: Kind) -> dict[str, HourlySeries]:
    out = {}
    for b, s in series.items():
        part = semester_slice(s, split, sem)
        p = params.get((b, sem, kind.value))
        if part.n_days == 0 or p is None:
            continue
        values, _ = normalize(part.values, p)
        out[b] = part.with_values(values)
    return out


def stage_cluster(cfg: RunConfig, out: Path, d: Path) -> None:
    series = load_series(out)
    params = load_norm_params(out)
    split = cfg.split_date
    records, cal_rows, curve_rows, table_rows, warnings = {}, [], [], [], []
    for kind in Kind:
        per_building = {b: s for (k, b), s in series.items() if k == kind.value}
        calendar = ClusterCalendar(kind, split)
        for sem in SEMESTERS:
            ds = dataset_id(kind, sem)
            norm = normalized_semester(per_building, params, split, sem, kind)
            matrix = build_profile_matrix(norm, split, sem, kind)
            if len(matrix) == 0:
                warnings.append(f"{ds}: no complete days; dataset skipped")
                log.warning(warnings[-1])
                continue
            fit = _fit_dataset(cfg, matrix, ds)
            records[ds] = fit["record"]
            curve_rows += [{"dataset": ds, "k": int(k), "wss": fmt_float(v)} for k, v in fit["record"]["wss_curve"].items()]
            calendar = calendar.merge(assign_calendar(fit["model"], matrix, split))
            log.info("%s: %d days, k=%d", ds, len(matrix), fit["record"]["k"])
        cal_rows += [{"building_id": b, "date": day.isoformat(), "kind": kind.value, "label": l} for (b, day), l in calendar.items()]
        table = mode_schedule_table(calendar, sorted(per_building))
        warnings += table.warnings
        table_rows += [{"building_id": b, "semester": sem, "day_group": g, "kind": kind.value, "label": l}
                       for (b, sem, g), l in sorted(table.rows.items(), key=lambda kv: (kv[0][0], SEMESTERS.index(kv[0][1]), DAY_GROUPS.index(kv[0][2])))]
    if not records:
        raise DataError("no dataset had complete days to cluster")
    write_json(d / "clusters.json", {"datasets": records, "warnings": warnings, "split_date": split.isoformat()})
    write_csv(pd.DataFrame(cal_rows, columns=["building_id", "date", "kind", "label"]), d / "calendar.csv")
    write_csv(pd.DataFrame(curve_rows, columns=["dataset", "k", "wss"]), d / "wss_curve.csv")
    write_csv(pd.DataFrame(table_rows, columns=["building_id", "semester", "day_group", "kind", "label"]), d / "schedule_table.csv")


def load_clusters(out: Path) -> dict:
    return read_json(out / "cluster" / "clusters.json")


def load_calendar(out: Path, kind: Kind, split: date) -> ClusterCalendar:
    f = pd.read_csv(out / "cluster" / "calendar.csv", dtype={"building_id": str, "date": str, "kind": str})
    f = f[f["kind"] == kind.value]
    entries = {(b, date.fromisoformat(dt)): int(l) for b, dt, l in zip(f["building_id"], f["date"], f["label"])}
    return ClusterCalendar(kind, split, entries)


def load_schedule_table(out: Path, kind: Kind) -> ScheduleTable:
    f = pd.read_csv(out / "cluster" / "schedule_table.csv", dtype={"building_id": str})
    f = f[f["kind"] == kind.value]
    return ScheduleTable({(b, s, g): int(l) for b, s, g, l in zip(f["building_id"], f["semester"], f["day_group"], f["label"])})


def centroids_by_label(clusters: dict, kind: Kind) -> dict[tuple[str, int], np.ndarray]:
    out = {}
    for rec in clusters["datasets"].values():
        if rec["kind"] == kind.value:
            for i, c in enumerate(rec["centroids"]):
                out[(rec["semester"], i + 1)] = np.asarray(c, dtype=float)
    return out


# --- schedule -------------------------------------------------------------------

SIGNAL_COLUMNS = ["profile_label", "delta", "tau", "t_a", "t_d", "t_s_o", "t_e_o"]
DEMAND_SIGNAL_COLUMNS = ["profile_label", "t_s_e", "t_e_e"]


def _parse_label(name: str) -> tuple[str, int]:
    """``D-OS-2`` -> ("summer", 2)."""
    ds, label = name.rsplit("-", 1)
    return (SEMESTERS[0] if ds.endswith("S") else SEMESTERS[1]), int(label)


def stage_schedule(cfg: RunConfig, out: Path, d: Path) -> None:
    clusters = load_clusters(out)
    tau, sign = cfg.tau, int(cfg["schedule"]["tau_sign_evening"])
    occ_rows, dem_rows = [], []
    occ_sig: dict[tuple[str, int, float], OccupancySignals] = {}
    dem_sig: dict[tuple[str, int], DemandSignals | None] = {}
    for ds, rec in sorted(clusters["datasets"].items()):
        kind, sem = Kind(rec["kind"]), rec["semester"]
        for i, c in enumerate(rec["centroids"]):
            name = profile_name(kind, sem, i + 1)
            if kind is Kind.OCCUPANCY:
                for delta in cfg.deltas:
                    s = occupancy_signals(c, ScheduleParams(delta, tau, sign))
                    occ_sig[(sem, i + 1, delta)] = s
                    occ_rows.append([name, delta, tau, s.t_a, s.t_d, s.t_s_o, s.t_e_o])
            else:
                try:
                    s = demand_signals(c)
                except NoRampError as exc:
                    log.warning("%s: %s", name, exc)
                    s = None
                dem_sig[(sem, i + 1)] = s
                dem_rows.append([name, s and s.t_s_e, s and s.t_e_e])
    occ = pd.DataFrame(occ_rows, columns=SIGNAL_COLUMNS)
    for c in SIGNAL_COLUMNS[3:]:
        occ[c] = _int_col(occ[c].where(occ[c].notna(), None))
    occ["delta"] = occ["delta"].map(fmt_float)
    dem = pd.DataFrame(dem_rows, columns=DEMAND_SIGNAL_COLUMNS)
    for c in DEMAND_SIGNAL_COLUMNS[1:]:
        dem[c] = _int_col(dem[c].where(dem[c].notna(), None))
    write_csv(occ, d / "signals.csv")
    write_csv(dem, d / "demand_signals.csv")

    occ_table, dem_table = load_schedule_table(out, Kind.OCCUPANCY), load_schedule_table(out, Kind.DEMAND)
    rows = []
    for (b, sem, g), lo in sorted(occ_table.rows.items()):
        ld = dem_table.rows.get((b, sem, g))
        dem_s = dem_sig.get((sem, ld)) if ld is not None else None
        if dem_s is None:
            continue
        for delta in cfg.deltas:
            mw = miss_waste(occ_sig[(sem, lo, delta)], dem_s)
            rows.append([b, sem, g, fmt_float(delta), lo, ld, mw.waste_h, mw.miss_h])
    write_csv(pd.DataFrame(rows, columns=["building_id", "semester", "day_group", "delta", "label_occupancy",
                                          "label_demand", "waste_h", "miss_h"]), d / "miss_waste.csv")


def _opt_int(v) -> int | None:
    return None if pd.isna(v) else int(v)


def load_occupancy_signals(out: Path) -> dict[float, dict[tuple[str, int], OccupancySignals]]:
    f = pd.read_csv(out / "schedule" / "signals.csv", float_precision="round_trip")
    result: dict[float, dict] = {}
    for row in f.itertuples(index=False):
        t_a, t_d = _opt_int(row.t_a), _opt_int(row.t_d)
        sig = OccupancySignals(t_a, t_d, _opt_int(row.t_s_o), _opt_int(row.t_e_o),
                               unoccupied=t_a is None, open_ended=t_a is not None and t_d is None)
        result.setdefault(float(row.delta), {})[_parse_label(row.profile_label)] = sig
    return result


def load_demand_signals(out: Path) -> dict[tuple[str, int], DemandSignals | None]:
    f = pd.read_csv(out / "schedule" / "demand_signals.csv")
    return {
        _parse_label(r.profile_label): (None if pd.isna(r.t_s_e) else DemandSignals(int(r.t_s_e), int(r.t_e_e)))
        for r in f.itertuples(index=False)
    }


# --- savings and sweep ----------------------------------------------------------

def load_demand_profiles(out: Path, cfg: RunConfig, mode: str) -> DemandProfiles:
    split = cfg.split_date
    params = {(b, sem): p for (b, sem, k), p in load_norm_params(out).items() if k == Kind.DEMAND.value}
    actual = {}
    if mode == "actual":
        for (kind, b), s in load_series(out).items():
            if kind != Kind.DEMAND.value:
                continue
            complete = s.complete_days()
            for i, (day, row) in enumerate(zip(s.dates, s.day_matrix())):
                if complete[i]:
                    actual[(b, day)] = row
    return DemandProfiles(
        load_calendar(out, Kind.DEMAND, split),
        centroids_by_label(load_clusters(out), Kind.DEMAND),
        load_demand_signals(out),
        params,
        actual,
    )


def ledger_rollup_dict(ledger: SavingsLedger) -> dict:
    out: dict[str, dict] = {}
    for (b, sem), r in ledger.rollups().items():
        out.setdefault(b, {})[sem] = {
            "total_kwh": r.total_kwh, "baseline_kwh": r.baseline_kwh, "pct": r.pct,
            "n_days": len(r.by_day),
            "by_hour_of_week": r.by_hour_of_week.tolist(),
            "by_day": {day.isoformat(): v for day, v in r.by_day.items()},
        }
    return out


def stage_savings(cfg: RunConfig, out: Path, d: Path) -> None:
    mode = cfg["savings"]["mode"]
    demand = load_demand_profiles(out, cfg, mode)
    table = load_schedule_table(out, Kind.OCCUPANCY)
    signals = load_occupancy_signals(out)
    rows, summary = [], {}
    for delta in cfg.deltas:
        if delta not in signals:
            raise StageError(f"no occupancy signals for delta={delta}; rerun 'schedule'")
        ledger = aggregate_savings(demand, table, signals[delta], mode, delta, cfg.tau)
        for r in sorted(ledger.days, key=lambda r: (r.building_id, r.date)):
            rows.append([r.building_id, r.date.isoformat(), r.label_demand, r.label_occupancy,
                         fmt_float(r.savings_kwh), fmt_float(delta)])
        summary[fmt_float(delta)] = {
            "total_kwh": ledger.total_kwh,
            "skipped": dict(sorted(ledger.skipped.items())),
            "buildings": ledger_rollup_dict(ledger),
        }
    write_csv(pd.DataFrame(rows, columns=["building_id", "date", "label_demand", "label_occupancy", "savings_kwh", "delta"]),
              d / "ledger.csv")
    write_json(d / "summary.json", {"mode": mode, "tau": cfg.tau, "deltas": summary})


def stage_sweep(cfg: RunConfig, out: Path, d: Path) -> None:
    sav = cfg["savings"]
    mode = sav["mode"]
    result = sensitivity_sweep(load_demand_profiles(out, cfg, mode), sav["sweep_morning"], sav["sweep_evening"], mode)
    rows = [[b, a, e, fmt_float(v)] for b, grid in result.grid.items() for (a, e), v in sorted(grid.items(), key=lambda kv: (kv[0][0], -kv[0][1]))]
    write_csv(pd.DataFrame(rows, columns=["building_id", "shift_morning_h", "shift_evening_h", "avg_savings_pct"]), d / "sweep.csv")
    write_json(d / "sweep_summary.json", {
        "mode": mode,
        "max_savings": {b: {"pct": v, "shift_morning_h": c[0], "shift_evening_h": c[1]} for b, (v, c) in result.max_savings.items()},
        "histogram": result.histogram,
        "average": [{"shift_morning_h": a, "shift_evening_h": e, "avg_savings_pct": v} for (a, e), v in result.average().items()],
        "skipped": dict(sorted(result.skipped.items())),
    })


def stage_report(cfg: RunConfig, out: Path, d: Path) -> None:
    from .report import emit_report
    emit_report(out, d, cfg["report"]["formats"], cfg.deltas)


STAGE_FUNCS: dict[str, Callable[[RunConfig, Path, Path], None]] = {
    "ingest": stage_ingest,
    "preprocess": stage_preprocess,
    "cluster": stage_cluster,
    "schedule": stage_schedule,
    "savings": stage_savings,
    "sweep": stage_sweep,
    "report": stage_report,
}


def _stage_inputs(cfg: RunConfig, manifest: Manifest, stage: str) -> list[Path]:
    if stage == "ingest":
        return [cfg.path("wifi"), cfg.path("meter")]
    return [manifest.out_dir / name for u in UPSTREAM[stage] for name in manifest.outputs(u)]


def run_pipeline(cfg: RunConfig, stages: Iterable[str] = STAGES) -> Manifest:
    """Run ``stages`` in pipeline order; returns the updated manifest.

    Failures are re-raised with the stage name prefixed; unexpected
    exceptions become :class:`StageError`.
    """
    wanted = set(stages)
    unknown = wanted - set(STAGES)
    if unknown:
        raise ConfigError(f"unknown stage(s) {sorted(unknown)}")
    cfg.validate(require_inputs="ingest" in wanted)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out)
    for stage in (s for s in STAGES if s in wanted):
        manifest.verify(stage, cfg)
        d = out / stage
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        log.info("stage %s", stage)
        try:
            STAGE_FUNCS[stage](cfg, out, d)
        except SetbackError as exc:
            raise type(exc)(f"[{stage}] {exc}") from exc
        except Exception as exc:
            raise StageError(f"[{stage}] {type(exc).__name__}: {exc}") from exc
        manifest.record(stage, cfg, _stage_inputs(cfg, manifest, stage))
        manifest.save()
    return manifest
