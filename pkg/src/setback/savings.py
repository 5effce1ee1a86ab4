"""Virtual demand profiles, daily and seasonal savings, and the shift sweep."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from typing import Mapping, Sequence

import numpy as np

from .cluster import ClusterCalendar, ScheduleTable, day_group
from .errors import DataError, WindowOverlapError
from .preprocess import NormalizationParams, denormalize
from .schedule import LAST_HOUR, DemandSignals, OccupancySignals

log = logging.getLogger(__name__)

MODES = ("centroid", "actual")


@dataclass(frozen=True)
class VirtualProfile:
    base: np.ndarray
    virtual: np.ndarray
    morning_window: tuple[int, int] | None
    evening_window: tuple[int, int] | None
    levels: tuple[float, float]

    @property
    def hourly_savings(self) -> np.ndarray:
        return self.base - self.virtual


def _span(lo: int, hi: int) -> range:
    """Hours in the half-open interval (lo, hi]."""
    return range(lo + 1, hi + 1)


def virtual_profile(base: Sequence[float], dem: DemandSignals, target: OccupancySignals | tuple | None) -> VirtualProfile:
    """Counterfactual demand with ramp-up/setback moved to the target window.

    ``target`` is an :class:`OccupancySignals` or a ``(t_s_o, t_e_o)`` pair;
    ``None`` or an unoccupied signal holds the pre-ramp level across the
    whole static window. An undefined ``t_e_o`` leaves the evening as is.
    Between the static and target times the profile is held flat: at the
    pre-ramp (post-setback) level when the window shrinks, at the first
    (last) operating hour's level when it grows.
    """
    base = np.asarray(base, dtype=float)
    if base.shape != (24,):
        raise ValueError("base profile must have 24 hourly values")
    if isinstance(target, OccupancySignals):
        unoccupied = target.unoccupied or target.t_s_o is None
        t_s_o, t_e_o = target.t_s_o, target.t_e_o
    elif target is None:
        unoccupied, t_s_o, t_e_o = True, None, None
    else:
        t_s_o, t_e_o = target
        unoccupied = t_s_o is None
    s, e = dem.t_s_e, dem.t_e_e
    l_m = float(base[s])
    l_e = float(base[min(e + 1, LAST_HOUR)])
    virtual = base.copy()
    if unoccupied:
        virtual[list(_span(s, e))] = l_m
        return VirtualProfile(base, virtual, (s, e), None, (l_m, l_e))

    if t_s_o >= s:
        morning = (s, t_s_o)
        virtual[list(_span(s, t_s_o))] = l_m
    else:
        morning = (t_s_o, s)
        virtual[list(_span(t_s_o, s))] = base[min(s + 1, LAST_HOUR)]
    evening = None
    if t_e_o is not None:
        if t_s_o > t_e_o:
            raise WindowOverlapError(f"ramp-up {t_s_o} after setback {t_e_o}")
        evening = (t_e_o, e) if t_e_o <= e else (e, t_e_o)
        if set(_span(*morning)) & set(_span(*evening)):
            raise WindowOverlapError(f"morning window {morning} overlaps evening window {evening}")
        if t_e_o <= e:
            virtual[list(_span(t_e_o, e))] = l_e
        else:
            virtual[list(_span(e, t_e_o))] = base[e]
    return VirtualProfile(base, virtual, morning, evening, (l_m, l_e))


def daily_savings(vp: VirtualProfile) -> float:
    """Integrated actual-minus-virtual demand over one day, kWh (1 h steps)."""
    return float(np.sum(vp.base - vp.virtual))


# --- aggregation --------------------------------------------------------------

@dataclass(frozen=True)
class DayRecord:
    building_id: str
    date: date
    semester: str
    label_demand: int
    label_occupancy: int | None
    savings_kwh: float
    baseline_kwh: float
    hourly: np.ndarray


@dataclass(frozen=True)
class Rollup:
    total_kwh: float
    baseline_kwh: float
    pct: float
    by_hour_of_week: np.ndarray
    by_day: dict[date, float]


@dataclass
class SavingsLedger:
    delta: float | None
    tau: int | None
    mode: str
    days: list[DayRecord] = field(default_factory=list)
    skipped: Counter = field(default_factory=Counter)

    def rollups(self) -> dict[tuple[str, str], Rollup]:
        out = {}
        keys = sorted({(r.building_id, r.semester) for r in self.days})
        for b, sem in keys:
            recs = sorted((r for r in self.days if r.building_id == b and r.semester == sem), key=lambda r: r.date)
            how = np.zeros(168)
            for r in recs:
                how[24 * r.date.weekday():24 * r.date.weekday() + 24] += r.hourly
            total = float(sum(r.savings_kwh for r in recs))
            baseline = float(sum(r.baseline_kwh for r in recs))
            pct = 100.0 * total / baseline if baseline else 0.0
            out[(b, sem)] = Rollup(total, baseline, pct, how, {r.date: r.savings_kwh for r in recs})
        return out

    @property
    def total_kwh(self) -> float:
        return float(sum(r.savings_kwh for r in self.days))


@dataclass(frozen=True)
class DemandProfiles:
    """Everything needed to reconstruct a day's base demand in kW.

    ``centroids`` and ``signals`` are keyed by ``(semester, label)``;
    ``params`` by ``(building, semester)``; ``actual`` (raw kW, only for
    mode ``actual``) by ``(building, date)``.
    """

    calendar: ClusterCalendar
    centroids: Mapping[tuple[str, int], np.ndarray]
    signals: Mapping[tuple[str, int], DemandSignals | None]
    params: Mapping[tuple[str, str], NormalizationParams]
    actual: Mapping[tuple[str, date], np.ndarray] = field(default_factory=dict)

    def base(self, building: str, day: date, mode: str) -> np.ndarray:
        if mode == "actual":
            return np.asarray(self.actual[(building, day)], dtype=float)
        sem = self.calendar.semester(day)
        label = self.calendar.entries[(building, day)]
        return denormalize(self.centroids[(sem, label)], self.params[(building, sem)])


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def aggregate_savings(
    demand: DemandProfiles,
    schedule_table: ScheduleTable,
    occupancy: Mapping[tuple[str, int], OccupancySignals],
    mode: str = "centroid",
    delta: float | None = None,
    tau: int | None = None,
) -> SavingsLedger:
    """Savings for every demand-calendar day of the scheduled buildings.

    ``occupancy`` maps ``(semester, occupancy label)`` to signals already
    computed at one (delta, tau). Days whose day group has no schedule row,
    whose demand profile has no ramp, or whose windows overlap are skipped
    and counted in ``ledger.skipped``.
    """
    _check_mode(mode)
    ledger = SavingsLedger(delta, tau, mode)
    buildings = set(schedule_table.buildings())
    for (b, d), label_dem in demand.calendar.items():
        if b not in buildings:
            continue
        sem = demand.calendar.semester(d)
        occ_label = schedule_table.rows.get((b, sem, day_group(d)))
        if occ_label is None or (sem, occ_label) not in occupancy:
            ledger.skipped["no_occupancy_schedule"] += 1
            continue
        dem = demand.signals.get((sem, label_dem))
        if dem is None:
            ledger.skipped["no_demand_ramp"] += 1
            continue
        if mode == "actual" and (b, d) not in demand.actual:
            ledger.skipped["no_actual_profile"] += 1
            continue
        base = demand.base(b, d, mode)
        try:
            vp = virtual_profile(base, dem, occupancy[(sem, occ_label)])
        except WindowOverlapError as exc:
            log.info("%s %s skipped: %s", b, d, exc)
            ledger.skipped["window_overlap"] += 1
            continue
        ledger.days.append(DayRecord(b, d, sem, label_dem, occ_label, daily_savings(vp), float(base.sum()), vp.hourly_savings))
    if ledger.skipped:
        log.warning("savings: skipped days %s", dict(ledger.skipped))
    return ledger


@dataclass
class SweepResult:
    grid: dict[str, dict[tuple[int, int], float]]
    max_savings: dict[str, tuple[float, tuple[int, int]]]
    histogram: dict[str, int]
    skipped: Counter = field(default_factory=Counter)

    def average(self) -> dict[tuple[int, int], float]:
        cells = sorted({c for g in self.grid.values() for c in g})
        return {c: float(np.mean([g[c] for g in self.grid.values() if c in g])) for c in cells}


HISTOGRAM_BINS = (("<1%", -np.inf, 1.0), ("1-2%", 1.0, 2.0), ("2-4%", 2.0, 4.0), (">4%", 4.0, np.inf))


def savings_histogram(values: Sequence[float]) -> dict[str, int]:
    return {name: int(sum(lo <= v < hi for v in values)) for name, lo, hi in HISTOGRAM_BINS}


def sensitivity_sweep(
    demand: DemandProfiles,
    morning: Sequence[int] = (0, 1, 2),
    evening: Sequence[int] = (0, -1, -2),
    mode: str = "centroid",
) -> SweepResult:
    """Percent savings per building from shifting the static window itself.

    Each cell moves ramp-up later by ``a`` hours and setback earlier by
    ``|b|`` hours on every day's own demand signals; no occupancy data is used.
    """
    _check_mode(mode)
    cells = [(a, b) for a in morning for b in evening]
    totals: dict[str, dict[tuple[int, int], float]] = {}
    baselines: dict[str, float] = {}
    skipped: Counter = Counter()
    for (bld, d), label in demand.calendar.items():
        sem = demand.calendar.semester(d)
        dem = demand.signals.get((sem, label))
        if dem is None:
            skipped["no_demand_ramp"] += 1
            continue
        if mode == "actual" and (bld, d) not in demand.actual:
            skipped["no_actual_profile"] += 1
            continue
        base = demand.base(bld, d, mode)
        day = {}
        try:
            for a, b in cells:
                target = (min(dem.t_s_e + a, LAST_HOUR), max(dem.t_e_e + b, 0))
                day[(a, b)] = daily_savings(virtual_profile(base, dem, target))
        except WindowOverlapError:
            skipped["window_overlap"] += 1
            continue
        acc = totals.setdefault(bld, dict.fromkeys(cells, 0.0))
        for c, v in day.items():
            acc[c] += v
        baselines[bld] = baselines.get(bld, 0.0) + float(base.sum())
    if not totals:
        raise DataError("sensitivity sweep found no usable demand days")
    grid = {
        bld: {c: (100.0 * v / baselines[bld] if baselines[bld] else 0.0) for c, v in acc.items()}
        for bld, acc in sorted(totals.items())
    }
    best = {bld: max(((v, c) for c, v in g.items()), key=lambda t: t[0]) for bld, g in grid.items()}
    return SweepResult(grid, best, savings_histogram([v for v, _ in best.values()]), skipped)
