"""Parsing and validation of raw WiFi connection logs and smart-meter logs.

Both log types are held column-wise in a :class:`pandas.DataFrame` because a
semester of 5-minute connection records runs to millions of rows. Iterating a
log still yields the typed records (:class:`ConnectionEvent`,
:class:`MeterReading`).
"""
from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"
DEFAULT_WAP_PATTERN = r"^(?P<building>[A-Za-z0-9]+)-(?P<floor>[0-9]+)-(?P<room>[A-Za-z0-9]+)$"
WIFI_COLUMNS = ("timestamp", "building_id", "wap_name", "device_hash")
METER_COLUMNS = ("timestamp", "building_id", "demand_kw")


@dataclass(frozen=True)
class ConnectionEvent:
    timestamp: datetime
    building_id: str
    wap_name: str
    device_hash: str


@dataclass(frozen=True)
class MeterReading:
    timestamp: datetime
    building_id: str
    demand: float
    valid: bool = True


@dataclass(frozen=True)
class WapLocation:
    wap_name: str
    building: str | None
    floor: str | None
    room: str | None
    is_external: bool


@dataclass
class ParseReport:
    """Row accounting for one parsed file.

    ``n_rows == n_accepted + n_rejected`` always holds.
    """

    path: str
    n_rows: int
    n_accepted: int
    rejected_by_reason: dict[str, int] = field(default_factory=dict)

    @property
    def n_rejected(self) -> int:
        return sum(self.rejected_by_reason.values())

    @property
    def rejected_pct(self) -> float:
        return 100.0 * self.n_rejected / self.n_rows if self.n_rows else 0.0

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "n_rows": self.n_rows,
            "n_accepted": self.n_accepted,
            "n_rejected": self.n_rejected,
            "rejected_by_reason": dict(sorted(self.rejected_by_reason.items())),
        }


@dataclass
class ConnectionLog:
    frame: pd.DataFrame
    report: ParseReport | None = None

    def __len__(self) -> int:
        return len(self.frame)

    def __iter__(self) -> Iterator[ConnectionEvent]:
        for ts, b, w, d in zip(
            self.frame["timestamp"], self.frame["building_id"],
            self.frame["wap_name"], self.frame["device_hash"],
        ):
            yield ConnectionEvent(ts.to_pydatetime(), str(b), str(w), str(d))


@dataclass
class MeterLog:
    frame: pd.DataFrame
    report: ParseReport | None = None

    def __len__(self) -> int:
        return len(self.frame)

    def __iter__(self) -> Iterator[MeterReading]:
        for ts, b, v, ok in zip(
            self.frame["timestamp"], self.frame["building_id"],
            self.frame["demand_kw"], self.frame["valid"],
        ):
            yield MeterReading(ts.to_pydatetime(), str(b), float(v), bool(ok))


def _count_data_rows(path: Path, chunk: int = 1 << 24) -> int:
    """Non-blank lines after the header (a blank line holds at most a CR)."""
    lines = blank = 0
    prev_nl = -1  # absolute offset of the last newline seen
    offset = 0
    last_byte = 0
    with open(path, "rb") as fh:
        while True:
            buf = fh.read(chunk)
            if not buf:
                break
            arr = np.frombuffer(buf, dtype=np.uint8)
            nl = np.flatnonzero(arr == 10)
            if nl.size:
                starts = np.concatenate(([prev_nl], nl[:-1] + offset))
                length = nl + offset - starts
                before = np.where(nl > 0, arr[np.maximum(nl - 1, 0)], last_byte)
                blank += int(((length == 1) | ((length == 2) & (before == 13))).sum())
                lines += nl.size
                prev_nl = int(nl[-1]) + offset
            last_byte = int(arr[-1])
            offset += len(buf)
    tail = offset - prev_nl - 1
    if tail > 0 and not (tail == 1 and last_byte == 13):
        lines += 1
    return max(lines - blank - 1, 0)


def _read_raw(
    path: Path, columns: tuple[str, ...], schema: Mapping[str, str] | None, categorical: tuple[str, ...] = (),
) -> tuple[pd.DataFrame, int]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"cannot read {path}: no such file")
    schema = dict(schema or {})
    source_cols = [schema.get(c, c) for c in columns]
    try:
        header = pd.read_csv(path, nrows=0, dtype=str).columns
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{path} is empty (no header row)") from exc
    missing = [c for c in source_cols if c not in header]
    if missing:
        raise DataError(f"{path}: missing required column(s) {missing}; header is {list(header)}")
    n_rows = _count_data_rows(path)
    # Lines with too many fields are skipped here and show up as the shortfall
    # against n_rows. usecols would hide them, so every column is read.
    dtypes = {h: str for h in header}
    dtypes.update({schema.get(c, c): ("category" if c in categorical else str) for c in columns})
    frame = pd.read_csv(
        path, dtype=dtypes, keep_default_na=False,
        na_values=[], on_bad_lines="skip", engine="c",
    )
    frame = frame.rename(columns={s: c for s, c in zip(source_cols, columns)})[list(columns)]
    return frame, n_rows


def _check_abort(report: ParseReport, abort_pct: float) -> None:
    if report.rejected_pct > abort_pct:
        raise DataError(
            f"{report.path}: {report.n_rejected} of {report.n_rows} rows malformed "
            f"({report.rejected_pct:.1f}% > {abort_pct}%): {report.rejected_by_reason}"
        )
    if report.n_rejected:
        log.warning("%s: rejected %d malformed rows %s", report.path, report.n_rejected, report.rejected_by_reason)


def _blank(col: pd.Series) -> np.ndarray:
    if isinstance(col.dtype, pd.CategoricalDtype):
        blank_cats = [c for c in col.cat.categories if not str(c).strip()]
        return (col.isna() | col.isin(blank_cats)).to_numpy()
    blank = col.isna().to_numpy() | (col.to_numpy(dtype=object) == "")
    # Stripping millions of hashes is slow; only do it when some value has a space.
    if col.str.contains(" ", regex=False).any():
        blank |= (col.str.strip() == "").to_numpy()
    return blank


def _to_float(col: pd.Series) -> pd.Series:
    """Exact decimal-to-float conversion; unparseable values become NaN."""
    try:
        return col.astype(float)
    except ValueError:
        # pandas' lenient parser may differ in the last bit, so it only locates the bad values.
        ok = pd.to_numeric(col.str.strip(), errors="coerce").notna()
        out = pd.Series(np.nan, index=col.index)
        out[ok] = col[ok].astype(float)
        return out


def _parse_timestamps(col: pd.Series, fmt: str) -> pd.Series:
    return pd.to_datetime(col.fillna(""), format=fmt, errors="coerce")


def parse_connection_log(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    *,
    timestamp_format: str = TIMESTAMP_FORMAT,
    malformed_abort_pct: float = 5.0,
) -> ConnectionLog:
    """Parse a WiFi connection CSV.

    ``schema`` maps canonical column names to the names used in the file.
    Malformed rows are counted per reason and dropped; the parse aborts with
    :class:`DataError` when they exceed ``malformed_abort_pct`` percent.
    """
    raw, n_rows = _read_raw(path, WIFI_COLUMNS, schema, categorical=("building_id", "wap_name", "device_hash"))
    reasons: Counter[str] = Counter()
    reasons["field_count"] = n_rows - len(raw)
    ts = _parse_timestamps(raw["timestamp"], timestamp_format)
    bad_ts = ts.isna().to_numpy()
    empty = np.zeros(len(raw), dtype=bool)
    for c in ("building_id", "wap_name", "device_hash"):
        empty |= _blank(raw[c])
    reasons["bad_timestamp"] = int(bad_ts.sum())
    reasons["empty_field"] = int((empty & ~bad_ts).sum())
    ok = ~(bad_ts | empty)
    frame = pd.DataFrame({
        "timestamp": ts, "building_id": raw["building_id"],
        "wap_name": raw["wap_name"], "device_hash": raw["device_hash"],
    })
    if not ok.all():
        frame = frame[ok].reset_index(drop=True)
        for c in ("building_id", "wap_name", "device_hash"):
            frame[c] = frame[c].cat.remove_unused_categories()
    report = ParseReport(str(path), n_rows, len(frame), {k: v for k, v in reasons.items() if v})
    _check_abort(report, malformed_abort_pct)
    return ConnectionLog(frame, report)


def parse_meter_log(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    *,
    timestamp_format: str = TIMESTAMP_FORMAT,
    malformed_abort_pct: float = 5.0,
    duplicates: str = "last",
) -> MeterLog:
    """Parse a smart-meter CSV of kW demand readings.

    Negative demand is kept but marked ``valid=False`` so the cleaning stage
    can decide what to do with it. Duplicate ``(building, timestamp)`` rows
    are resolved last-wins, or rejected when ``duplicates="reject"``.
    """
    if duplicates not in ("last", "reject"):
        raise ConfigError(f"duplicates must be 'last' or 'reject', got {duplicates!r}")
    raw, n_rows = _read_raw(path, METER_COLUMNS, schema)
    reasons: Counter[str] = Counter()
    reasons["field_count"] = n_rows - len(raw)
    ts = _parse_timestamps(raw["timestamp"], timestamp_format)
    demand = _to_float(raw["demand_kw"])
    bad_ts = ts.isna().to_numpy()
    bad_demand = (demand.isna() | ~np.isfinite(demand.fillna(0.0))).to_numpy() & ~bad_ts
    empty = _blank(raw["building_id"]) & ~bad_ts & ~bad_demand
    reasons["bad_timestamp"] = int(bad_ts.sum())
    reasons["bad_demand"] = int(bad_demand.sum())
    reasons["empty_field"] = int(empty.sum())
    ok = ~(bad_ts | bad_demand | empty)
    frame = pd.DataFrame({
        "timestamp": ts[ok].to_numpy(),
        "building_id": raw["building_id"][ok].to_numpy(),
        "demand_kw": demand[ok].to_numpy(dtype=float),
    })
    dup = frame.duplicated(["building_id", "timestamp"], keep="last" if duplicates == "last" else False)
    if duplicates == "reject":
        reasons["duplicate"] = int(dup.sum())
    else:
        reasons["duplicate_superseded"] = int(dup.sum())
    frame = frame[~dup.to_numpy()].reset_index(drop=True)
    frame["valid"] = frame["demand_kw"].to_numpy() >= 0.0
    frame = frame.sort_values(["building_id", "timestamp"], kind="stable").reset_index(drop=True)
    report = ParseReport(str(path), n_rows, len(frame), {k: v for k, v in reasons.items() if v})
    _check_abort(report, malformed_abort_pct)
    return MeterLog(frame, report)


def compile_wap_pattern(pattern: str) -> re.Pattern:
    try:
        rx = re.compile(pattern)
    except re.error as exc:
        raise ConfigError(f"invalid WAP pattern {pattern!r}: {exc}") from exc
    missing = {"building", "floor", "room"} - set(rx.groupindex)
    if missing:
        raise ConfigError(f"WAP pattern {pattern!r} lacks named group(s) {sorted(missing)}")
    return rx


@lru_cache(maxsize=None)
def _compiled(pattern: str) -> re.Pattern:
    return compile_wap_pattern(pattern)


def classify_wap(wap_name: str, pattern: str = DEFAULT_WAP_PATTERN) -> WapLocation:
    m = _compiled(pattern).match(wap_name)
    if m is None:
        return WapLocation(wap_name, None, None, None, True)
    return WapLocation(wap_name, m.group("building"), m.group("floor"), m.group("room"), False)


def filter_external(events: ConnectionLog, pattern: str = DEFAULT_WAP_PATTERN) -> tuple[ConnectionLog, list[str]]:
    """Drop events on WAPs whose names do not match ``pattern``.

    Returns the internal-only log and the sorted external WAP names.
    """
    names = pd.unique(events.frame["wap_name"])
    external = sorted(str(n) for n in names if classify_wap(str(n), pattern).is_external)
    keep = ~events.frame["wap_name"].isin(external).to_numpy()
    frame = events.frame[keep].reset_index(drop=True)
    return ConnectionLog(frame, events.report), external


def write_connection_log(events: ConnectionLog, path: str | Path) -> None:
    f = events.frame
    out = pd.DataFrame({
        "timestamp": f["timestamp"].dt.strftime(TIMESTAMP_FORMAT),
        "building_id": f["building_id"], "wap_name": f["wap_name"], "device_hash": f["device_hash"],
    })
    out.to_csv(path, index=False, lineterminator="\n")


def write_meter_log(readings: MeterLog, path: str | Path) -> None:
    f = readings.frame
    out = pd.DataFrame({
        "timestamp": f["timestamp"].dt.strftime(TIMESTAMP_FORMAT),
        "building_id": f["building_id"], "demand_kw": f["demand_kw"].map(repr),
    })
    out.to_csv(path, index=False, lineterminator="\n")
