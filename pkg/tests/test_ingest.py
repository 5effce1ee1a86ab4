"""WiFi and meter log parsing, WAP classification and external filtering."""
from __future__ import annotations

import hashlib
from datetime import date, datetime

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from setback.errors import ConfigError, DataError
from setback.ingest import (
    ConnectionEvent, ConnectionLog, MeterLog, MeterReading, classify_wap, compile_wap_pattern, filter_external,
    parse_connection_log, parse_meter_log, write_connection_log, write_meter_log,
)
from setback.preprocess import classify_devices

WIFI_HEADER = "timestamp,building_id,wap_name,device_hash\n"
METER_HEADER = "timestamp,building_id,demand_kw\n"


def _write(tmp_path, name: str, text: str):
    p = tmp_path / name
    p.write_text(text)
    return p


def _good_wifi_rows(n: int) -> list[str]:
    return [f"2019-07-09 08:{m % 60:02d}:00,B001,B001-2-204,dev{m}" for m in range(n)]


# --- connection log -----------------------------------------------------------

def test_wifi_row_becomes_event(tmp_path):
    p = _write(tmp_path, "wifi.csv", WIFI_HEADER + "2019-07-09 08:05:00,B001,B001-2-204,ab12f9\n")
    log = parse_connection_log(p)
    assert list(log) == [ConnectionEvent(datetime(2019, 7, 9, 8, 5), "B001", "B001-2-204", "ab12f9")]
    assert log.report.n_rows == 1 and log.report.n_rejected == 0


@pytest.mark.parametrize("bad_row, reason", [
    ("2019-07-09 09:00:00,B001,B001-2-204,", "empty_field"),
    ("2019-07-09 09:00:00,,B001-2-204,dev", "empty_field"),
    ("2019-07-09 09:00:00,B001,B001-2-204", "empty_field"),
    ("09/07/2019 09:00,B001,B001-2-204,dev", "bad_timestamp"),
    ("2019-07-09 25:00:00,B001,B001-2-204,dev", "bad_timestamp"),
    ("2019-07-09 09:00:00,B001,B001-2-204,dev,extra", "field_count"),
])
def test_malformed_wifi_row_counted_and_skipped(tmp_path, bad_row, reason):
    rows = _good_wifi_rows(30)
    rows.insert(10, bad_row)
    log = parse_connection_log(_write(tmp_path, "wifi.csv", WIFI_HEADER + "\n".join(rows) + "\n"))
    assert len(log) == 30
    assert log.report.rejected_by_reason == {reason: 1}
    assert log.report.n_rows == log.report.n_accepted + log.report.n_rejected == 31


def test_blank_lines_are_not_data_rows(tmp_path):
    text = WIFI_HEADER + "\n".join(_good_wifi_rows(3)) + "\n\n\r\n"
    log = parse_connection_log(_write(tmp_path, "wifi.csv", text))
    assert log.report.n_rows == 3 and len(log) == 3


def test_too_many_malformed_rows_abort(tmp_path):
    rows = _good_wifi_rows(10) + ["bad,B001,B001-2-204,dev"]
    p = _write(tmp_path, "wifi.csv", WIFI_HEADER + "\n".join(rows) + "\n")
    with pytest.raises(DataError, match="malformed"):
        parse_connection_log(p)
    assert len(parse_connection_log(p, malformed_abort_pct=10.0)) == 10


def test_missing_column_and_file_are_data_errors(tmp_path):
    p = _write(tmp_path, "wifi.csv", "timestamp,building_id,device_hash\n2019-07-09 08:05:00,B001,x\n")
    with pytest.raises(DataError, match="wap_name"):
        parse_connection_log(p)
    with pytest.raises(DataError, match="no such file"):
        parse_connection_log(tmp_path / "absent.csv")
    with pytest.raises(DataError, match="empty"):
        parse_connection_log(_write(tmp_path, "empty.csv", ""))


def test_schema_maps_source_columns(tmp_path):
    p = _write(tmp_path, "wifi.csv", "mac,ts,ap,bldg\nab12,2019-07-09 08:05:00,B001-2-204,B001\n")
    schema = {"timestamp": "ts", "building_id": "bldg", "wap_name": "ap", "device_hash": "mac"}
    (event,) = list(parse_connection_log(p, schema))
    assert event == ConnectionEvent(datetime(2019, 7, 9, 8, 5), "B001", "B001-2-204", "ab12")


def test_distinct_device_hashes_do_not_collide(tmp_path):
    # Campus-scale count of hashed MACs across five buildings.
    n = 176_336
    hashes = [hashlib.blake2b(str(i).encode(), digest_size=10).hexdigest() for i in range(n)]
    day = np.arange(n) % 7
    frame = pd.DataFrame({
        "timestamp": [f"2019-07-{9 + d:02d} 10:00:00" for d in day],
        "building_id": [f"B00{1 + i % 5}" for i in range(n)],
        "wap_name": [f"B00{1 + i % 5}-1-101" for i in range(n)],
        "device_hash": hashes,
    })
    p = tmp_path / "wifi.csv"
    frame.to_csv(p, index=False)
    log = parse_connection_log(p)
    assert len(log) == n
    assert log.frame["device_hash"].nunique() == n
    assert log.frame["device_hash"].cat.codes.nunique() == n
    stats = classify_devices(log)
    assert len(stats) == n and stats["device_hash"].nunique() == n


_ids = st.text("ABCDEFGHJK0123456789", min_size=1, max_size=6)
_hashes = st.text("0123456789abcdef", min_size=1, max_size=20)
_stamps = st.datetimes(datetime(2019, 1, 1), datetime(2020, 12, 31)).map(lambda t: t.replace(second=0, microsecond=0))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(_stamps, _ids, st.integers(0, 9), _hashes), min_size=1, max_size=40))
def test_connection_log_round_trip(tmp_path_factory, rows):
    d = tmp_path_factory.mktemp("rt")
    frame = pd.DataFrame({
        "timestamp": pd.to_datetime([r[0] for r in rows]),
        "building_id": [r[1] for r in rows],
        "wap_name": [f"{r[1]}-{r[2]}-101" for r in rows],
        "device_hash": [r[3] for r in rows],
    })
    original = ConnectionLog(frame)
    write_connection_log(original, d / "a.csv")
    parsed = parse_connection_log(d / "a.csv")
    assert list(parsed) == list(original)
    write_connection_log(parsed, d / "b.csv")
    assert (d / "a.csv").read_bytes() == (d / "b.csv").read_bytes()


# --- meter log ----------------------------------------------------------------

def test_meter_row_becomes_reading(tmp_path):
    p = _write(tmp_path, "meter.csv", METER_HEADER + "2019-07-09 00:00:00,B001,412.5\n")
    assert list(parse_meter_log(p)) == [MeterReading(datetime(2019, 7, 9), "B001", 412.5, True)]


def test_negative_demand_is_flagged_not_dropped(tmp_path):
    p = _write(tmp_path, "meter.csv", METER_HEADER + "2019-07-09 00:00:00,B001,-3\n2019-07-09 00:05:00,B001,10\n")
    readings = list(parse_meter_log(p))
    assert [(r.demand, r.valid) for r in readings] == [(-3.0, False), (10.0, True)]


def test_meter_duplicates_last_wins_or_reject(tmp_path):
    text = METER_HEADER + "2019-07-09 00:00:00,B001,1\n2019-07-09 00:00:00,B001,2\n2019-07-09 00:05:00,B001,3\n"
    p = _write(tmp_path, "meter.csv", text)
    log = parse_meter_log(p, malformed_abort_pct=100)
    assert [r.demand for r in log] == [2.0, 3.0]
    assert log.report.rejected_by_reason == {"duplicate_superseded": 1}
    strict = parse_meter_log(p, malformed_abort_pct=100, duplicates="reject")
    assert [r.demand for r in strict] == [3.0]
    assert strict.report.n_rows == strict.report.n_accepted + strict.report.n_rejected
    with pytest.raises(ConfigError):
        parse_meter_log(p, duplicates="first")


def test_unparseable_demand_is_rejected(tmp_path):
    rows = [f"2019-07-09 {h:02d}:00:00,B001,{100 + h}" for h in range(24)] + ["2019-07-10 00:00:00,B001,abc"]
    log = parse_meter_log(_write(tmp_path, "meter.csv", METER_HEADER + "\n".join(rows) + "\n"))
    assert len(log) == 24 and log.report.rejected_by_reason == {"bad_demand": 1}


def test_complete_meter_file_has_288_readings_per_building_day(tmp_path):
    # Analysis period 2019-07-09..2019-12-19 is 164 days; 51 buildings give 2,408,832 rows.
    assert (date(2019, 12, 19) - date(2019, 7, 9)).days + 1 == 164
    assert 51 * 164 * 288 == 2_408_832
    stamps = pd.date_range("2019-07-09", periods=2 * 288, freq="5min")
    frame = pd.concat([
        pd.DataFrame({"timestamp": stamps, "building_id": b, "demand_kw": 100.0, "valid": True}) for b in ("B1", "B2", "B3")
    ], ignore_index=True)
    write_meter_log(MeterLog(frame), tmp_path / "meter.csv")
    assert len(parse_meter_log(tmp_path / "meter.csv")) == 3 * 2 * 288


def test_meter_log_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    stamps = pd.date_range("2019-07-09", periods=50, freq="5min")
    frame = pd.DataFrame({
        "timestamp": np.tile(stamps, 2), "building_id": np.repeat(["B1", "B2"], 50),
        "demand_kw": rng.normal(300, 80, 100), "valid": True,
    })
    frame["valid"] = frame["demand_kw"] >= 0
    write_meter_log(MeterLog(frame), tmp_path / "a.csv")
    parsed = parse_meter_log(tmp_path / "a.csv")
    assert list(parsed) == list(MeterLog(frame))
    write_meter_log(parsed, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# --- WAP classification -------------------------------------------------------

def test_classify_wap_internal_and_external():
    loc = classify_wap("B001-2-204")
    assert (loc.building, loc.floor, loc.room, loc.is_external) == ("B001", "2", "204", False)
    assert classify_wap("OUTDOOR-AP-17").is_external
    assert classify_wap("B001-2-204") == classify_wap("B001-2-204")


def test_custom_pattern_and_invalid_patterns():
    pattern = r"^(?P<building>[A-Z]+)_(?P<floor>\d)(?P<room>\d\d)$"
    assert classify_wap("LIB_204", pattern).room == "04"
    assert classify_wap("B001-2-204", pattern).is_external
    with pytest.raises(ConfigError, match="invalid"):
        compile_wap_pattern("([unclosed")
    with pytest.raises(ConfigError, match="room"):
        compile_wap_pattern(r"(?P<building>\w+)-(?P<floor>\d+)")


def test_filter_external_drops_outdoor_waps(tmp_path):
    rows = _good_wifi_rows(20) + ["2019-07-09 09:00:00,B001,OUTDOOR-AP-17,walker"] * 2
    log = parse_connection_log(_write(tmp_path, "wifi.csv", WIFI_HEADER + "\n".join(rows) + "\n"))
    internal, external = filter_external(log)
    assert external == ["OUTDOOR-AP-17"]
    assert len(internal) == 20 and "walker" not in set(internal.frame["device_hash"])
