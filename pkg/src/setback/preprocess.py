"""Hourly occupant-count and demand series: device classes, resampling,
outlier cleaning, gap filling and min-max normalization."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace
from datetime import date, timedelta
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import ConfigError
from .ingest import ConnectionLog, MeterLog

log = logging.getLogger(__name__)

SLOT_MINUTES = 5
SEMESTERS = ("summer", "fall")


class Kind(str, enum.Enum):
    OCCUPANCY = "occupancy"
    DEMAND = "demand"


class Quality(enum.IntEnum):
    OBSERVED = 0
    INTERPOLATED = 1
    NULLIFIED = 2
    ZERO_FILLED = 3


class DeviceClass(str, enum.Enum):
    SHORT_STAY = "short_stay"
    REGULAR = "regular"
    STATIONARY = "stationary"


@dataclass(frozen=True)
class DeviceDayStats:
    device_hash: str
    building_id: str
    date: date
    connected_minutes: int
    device_class: DeviceClass


def device_class(minutes: int, short_stay_max: int = 45, regular_max: int = 540) -> DeviceClass:
    if minutes < short_stay_max:
        return DeviceClass.SHORT_STAY
    if minutes <= regular_max:
        return DeviceClass.REGULAR
    return DeviceClass.STATIONARY


@dataclass(frozen=True)
class HourlySeries:
    """Hourly samples for one building, 24 per covered day.

    ``values`` holds NaN exactly where ``quality`` is NULLIFIED.
    """

    building_id: str
    kind: Kind
    start: date
    values: np.ndarray
    quality: np.ndarray
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.values) % 24 or len(self.values) != len(self.quality):
            raise ValueError("series must hold 24 samples per day with one quality flag each")

    @property
    def n_days(self) -> int:
        return len(self.values) // 24

    @property
    def dates(self) -> list[date]:
        return [self.start + timedelta(days=i) for i in range(self.n_days)]

    def day_matrix(self) -> np.ndarray:
        return self.values.reshape(-1, 24)

    def complete_days(self) -> np.ndarray:
        return ~np.isnan(self.day_matrix()).any(axis=1)

    def with_values(self, values: np.ndarray, quality: np.ndarray | None = None, note: str | None = None) -> "HourlySeries":
        notes = self.notes + ((note,) if note else ())
        return replace(self, values=values, quality=self.quality if quality is None else quality, notes=notes)

    def between(self, first: date | None, last: date | None) -> "HourlySeries":
        """Sub-series covering ``first``..``last`` inclusive (clipped to coverage)."""
        i0 = 0 if first is None else max(0, (first - self.start).days)
        i1 = self.n_days if last is None else min(self.n_days, (last - self.start).days + 1)
        i1 = max(i0, i1)
        return replace(
            self, start=self.start + timedelta(days=i0),
            values=self.values[24 * i0:24 * i1].copy(), quality=self.quality[24 * i0:24 * i1].copy(),
        )


# --- WiFi ---------------------------------------------------------------------

SLOTS_PER_DAY = 24 * 60 // SLOT_MINUTES
_EPOCH = date(1970, 1, 1)


def _slot_index(ts: pd.Series) -> np.ndarray:
    ns = ts.to_numpy(dtype="datetime64[ns]").astype(np.int64)
    return ns // (SLOT_MINUTES * 60 * 10**9)


def _codes(col: pd.Series) -> tuple[np.ndarray, np.ndarray]:
    codes, uniques = pd.factorize(col, sort=True)
    return codes.astype(np.int64), np.asarray(uniques, dtype=object)


def _device_slots(events: ConnectionLog):
    """Distinct (device, building, slot) triples as integer arrays."""
    f = events.frame
    dev, devs = _codes(f["device_hash"])
    bld, blds = _codes(f["building_id"])
    slot = _slot_index(f["timestamp"])
    slot0 = int(slot.min())
    span = int(slot.max()) - slot0 + 1
    n_b = len(blds)
    key = np.unique((dev * n_b + bld) * span + (slot - slot0))
    pair, rel = np.divmod(key, span)
    dev_u, bld_u = np.divmod(pair, n_b)
    return dev_u, bld_u, rel + slot0, devs, blds


def classify_devices(events: ConnectionLog, short_stay_max: int = 45, regular_max: int = 540) -> pd.DataFrame:
    """Per (device, building, day) connected minutes and device class.

    A connection event marks its whole 5-minute slot, so minutes are five
    times the number of distinct slots seen. Returns a frame with columns
    ``device_hash, building_id, date, connected_minutes, device_class``.
    """
    cols = ["device_hash", "building_id", "date", "connected_minutes", "device_class"]
    if events.frame.empty:
        return pd.DataFrame(columns=cols)
    dev, bld, slot, devs, blds = _device_slots(events)
    day = slot // SLOTS_PER_DAY
    day0 = int(day.min())
    n_days = int(day.max()) - day0 + 1
    n_b = len(blds)
    keys, n_slots = np.unique((dev * n_b + bld) * n_days + (day - day0), return_counts=True)
    pair, day_u = np.divmod(keys, n_days)
    dev_u, bld_u = np.divmod(pair, n_b)
    order = np.lexsort((dev_u, day_u, bld_u))
    dev_u, bld_u, day_u, n_slots = dev_u[order], bld_u[order], day_u[order], n_slots[order]
    minutes = n_slots * SLOT_MINUTES
    cls = np.where(minutes < short_stay_max, DeviceClass.SHORT_STAY.value,
                   np.where(minutes <= regular_max, DeviceClass.REGULAR.value, DeviceClass.STATIONARY.value))
    day_dates = np.array([_EPOCH + timedelta(days=day0 + i) for i in range(n_days)], dtype=object)
    return pd.DataFrame({
        "device_hash": devs[dev_u],
        "building_id": blds[bld_u],
        "date": day_dates[day_u],
        "connected_minutes": minutes,
        "device_class": cls,
    })


def device_day_records(stats: pd.DataFrame) -> list[DeviceDayStats]:
    return [
        DeviceDayStats(d, b, dt, int(m), DeviceClass(c))
        for d, b, dt, m, c in stats[["device_hash", "building_id", "date", "connected_minutes", "device_class"]].itertuples(index=False)
    ]


def _day_range(first: date, last: date) -> int:
    return (last - first).days + 1


def occupancy_series(
    stats: pd.DataFrame,
    events: ConnectionLog,
    start: date | None = None,
    end: date | None = None,
) -> dict[str, HourlySeries]:
    """Hourly regular-device counts per building.

    Each 5-minute slot in which the building logged any connection counts the
    distinct regular devices seen in it; the hour's value is the ceiling of
    the mean over those slots. Hours with no logged slot are zero-filled.
    """
    if events.frame.empty:
        return {}
    dev, bld, slot, devs, blds = _device_slots(events)
    day = slot // SLOTS_PER_DAY
    first = start or _EPOCH + timedelta(days=int(day.min()))
    last = end or _EPOCH + timedelta(days=int(day.max()))
    day0 = (first - _EPOCH).days
    n_days = _day_range(first, last)
    n_hours = n_days * 24

    # Mark (device, building, day) triples classified regular.
    n_b = len(blds)
    regular = stats[stats["device_class"] == DeviceClass.REGULAR.value]
    reg_dev = pd.Index(devs).get_indexer(regular["device_hash"]).astype(np.int64)
    reg_bld = pd.Index(blds).get_indexer(regular["building_id"]).astype(np.int64)
    reg_day = np.array([(d - _EPOCH).days for d in regular["date"]], dtype=np.int64)
    known = (reg_dev >= 0) & (reg_bld >= 0)
    day_lo = min(int(day.min()), int(reg_day.min()) if reg_day.size else 0)
    day_span = max(int(day.max()), int(reg_day.max()) if reg_day.size else 0) - day_lo + 1
    reg_key = ((reg_dev * n_b + reg_bld) * day_span + reg_day - day_lo)[known]
    is_reg = np.isin((dev * n_b + bld) * day_span + day - day_lo, reg_key)

    local = slot - day0 * SLOTS_PER_DAY
    keep = (local >= 0) & (local < n_days * SLOTS_PER_DAY)
    out: dict[str, HourlySeries] = {}
    for b in range(n_b):
        mine = keep & (bld == b)
        if not mine.any():
            continue
        seen = np.unique(local[mine])
        # Triples are already distinct, so counting rows counts distinct devices per slot.
        per_slot = np.bincount(local[mine & is_reg] // 12, minlength=n_hours)[:n_hours]
        hour_n = np.bincount(seen // 12, minlength=n_hours)[:n_hours]
        counts = np.where(hour_n > 0, -(-per_slot // np.maximum(hour_n, 1)), 0)
        quality = np.where(hour_n > 0, Quality.OBSERVED, Quality.ZERO_FILLED).astype(np.int8)
        name = str(blds[b])
        out[name] = HourlySeries(name, Kind.OCCUPANCY, first, counts.astype(float), quality)
    return out


# --- meter --------------------------------------------------------------------

def resample_meter(readings: MeterLog, start: date | None = None, end: date | None = None) -> dict[str, HourlySeries]:
    """Hourly mean of the valid 5-minute readings; hours without any are NULLIFIED."""
    f = readings.frame
    if f.empty:
        return {}
    hours = f["timestamp"].to_numpy(dtype="datetime64[ns]").astype("datetime64[h]").astype(np.int64)
    epoch = date(1970, 1, 1)
    first = start or epoch + timedelta(days=int(hours.min() // 24))
    last = end or epoch + timedelta(days=int(hours.max() // 24))
    h0 = (first - epoch).days * 24
    n_hours = _day_range(first, last) * 24
    frame = pd.DataFrame({"b": f["building_id"].to_numpy(), "h": hours - h0, "v": f["demand_kw"].to_numpy(), "ok": f["valid"].to_numpy()})
    frame = frame[(frame["h"] >= 0) & (frame["h"] < n_hours) & frame["ok"]]
    out: dict[str, HourlySeries] = {}
    for b in sorted(pd.unique(f["building_id"])):
        grp = frame[frame["b"] == b]
        s = np.bincount(grp["h"], weights=grp["v"], minlength=n_hours)
        n = np.bincount(grp["h"], minlength=n_hours)
        with np.errstate(invalid="ignore", divide="ignore"):
            values = np.where(n > 0, s / np.maximum(n, 1), np.nan)
        quality = np.where(n > 0, Quality.OBSERVED, Quality.NULLIFIED).astype(np.int8)
        out[str(b)] = HourlySeries(str(b), Kind.DEMAND, first, values, quality)
    return out


def _nullify(series: HourlySeries, mask: np.ndarray, note: str | None = None) -> HourlySeries:
    values = series.values.copy()
    quality = series.quality.copy()
    values[mask] = np.nan
    quality[mask] = Quality.NULLIFIED
    return series.with_values(values, quality, note)


def iqr_upper_bound(daily_peaks: np.ndarray, factor: float = 1.5) -> float:
    q1, q3 = np.percentile(daily_peaks, [25, 75])
    return float(q3 + factor * (q3 - q1))


def iqr_clean(series: HourlySeries, factor: float = 1.5, min_days: int = 4) -> HourlySeries:
    """Nullify hourly values above the upper IQR fence of complete-day peaks."""
    if series.kind is not Kind.DEMAND:
        raise ValueError("iqr_clean applies to demand series")
    complete = series.complete_days()
    if complete.sum() < min_days:
        log.warning("%s: %d complete days, IQR cleaning skipped", series.building_id, complete.sum())
        return series.with_values(series.values, note="iqr_skipped:insufficient_days")
    peaks = series.day_matrix()[complete].max(axis=1)
    bound = iqr_upper_bound(peaks, factor)
    with np.errstate(invalid="ignore"):
        mask = series.values > bound
    return _nullify(series, mask)


def flat_runs(values: np.ndarray, window: int) -> list[tuple[int, int]]:
    """``(start, length)`` of maximal runs of identical non-null values of
    length >= ``window``."""
    runs = []
    n = len(values)
    i = 0
    while i < n:
        if np.isnan(values[i]):
            i += 1
            continue
        j = i + 1
        while j < n and values[j] == values[i]:
            j += 1
        if j - i >= window:
            runs.append((i, j - i))
        i = j
    return runs


def flatline_clean(series: HourlySeries, window: int = 3) -> HourlySeries:
    """Nullify every run of ``window`` or more hours without hour-to-hour change."""
    if series.kind is not Kind.DEMAND:
        raise ValueError("flatline_clean applies to demand series")
    mask = np.zeros(len(series.values), dtype=bool)
    for s, n in flat_runs(series.values, window):
        mask[s:s + n] = True
    return _nullify(series, mask)


def interpolate_gaps(series: HourlySeries, max_gap: int = 6) -> HourlySeries:
    """Linearly fill null runs of at most ``max_gap`` hours that have a valid
    sample on both sides."""
    values = series.values.copy()
    quality = series.quality.copy()
    null = np.isnan(values)
    n = len(values)
    i = 0
    while i < n:
        if not null[i]:
            i += 1
            continue
        j = i
        while j < n and null[j]:
            j += 1
        if i > 0 and j < n and j - i <= max_gap:
            left, right = values[i - 1], values[j]
            frac = np.arange(1, j - i + 1) / (j - i + 1)
            values[i:j] = left + (right - left) * frac
            quality[i:j] = Quality.INTERPOLATED
        i = j
    return series.with_values(values, quality)


def clean_demand(series: HourlySeries, iqr_factor: float = 1.5, flatline_window: int = 3, max_gap: int = 6) -> HourlySeries:
    return interpolate_gaps(flatline_clean(iqr_clean(series, iqr_factor), flatline_window), max_gap)


# --- normalization ------------------------------------------------------------

@dataclass(frozen=True)
class NormalizationParams:
    scope_id: tuple[str, ...]
    min: float
    max: float

    def __post_init__(self):
        if self.max < self.min:
            raise ValueError("max must be >= min")

    @property
    def degenerate(self) -> bool:
        return self.max == self.min

    def to_dict(self) -> dict:
        return {"scope_id": list(self.scope_id), "min": self.min, "max": self.max}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormalizationParams":
        return cls(tuple(d["scope_id"]), float(d["min"]), float(d["max"]))


def normalize(values, params: NormalizationParams | None = None, scope_id: tuple[str, ...] = ()) -> tuple[np.ndarray, NormalizationParams]:
    """Min-max scale to [0, 1]. NaNs pass through; a constant scope maps to 0."""
    v = np.asarray(values, dtype=float)
    if params is None:
        finite = v[~np.isnan(v)]
        lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 0.0)
        params = NormalizationParams(tuple(scope_id), lo, hi)
    if params.degenerate:
        return np.where(np.isnan(v), np.nan, 0.0), params
    out = (v - params.min) / (params.max - params.min)
    return np.clip(out, 0.0, 1.0, where=~np.isnan(out), out=out), params


def denormalize(values, params: NormalizationParams | None) -> np.ndarray:
    if params is None:
        raise ValueError("denormalize needs the scope's NormalizationParams")
    v = np.asarray(values, dtype=float)
    return v * (params.max - params.min) + params.min


def semester_of(day: date, split_date: date) -> str:
    return SEMESTERS[1] if day >= split_date else SEMESTERS[0]


def semester_slice(series: HourlySeries, split_date: date, semester: str) -> HourlySeries:
    if semester == SEMESTERS[0]:
        return series.between(None, split_date - timedelta(days=1))
    if semester == SEMESTERS[1]:
        return series.between(split_date, None)
    raise ValueError(f"unknown semester {semester!r}")


NORM_SCOPES = ("building-semester", "building")


def normalize_scoped(
    series: Mapping[str, HourlySeries], split_date: date, scope: str = "building-semester",
) -> dict[tuple[str, str], tuple[HourlySeries, NormalizationParams]]:
    """Normalize every building's series per semester.

    With scope ``building-semester`` each (building, semester) gets its own
    min/max; with ``building`` one min/max spans both semesters.
    """
    if scope not in NORM_SCOPES:
        raise ConfigError(f"norm_scope must be one of {NORM_SCOPES}, got {scope!r}")
    out = {}
    for b in sorted(series):
        s = series[b]
        shared = None
        if scope == "building":
            _, shared = normalize(s.values, scope_id=(b, "all", s.kind.value))
        for sem in SEMESTERS:
            part = semester_slice(s, split_date, sem)
            if part.n_days == 0:
                continue
            norm, params = normalize(part.values, shared, scope_id=(b, sem, s.kind.value))
            out[(b, sem)] = (part.with_values(norm), params)
    return out
