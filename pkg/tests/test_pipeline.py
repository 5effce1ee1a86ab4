"""Stage artifacts, manifests, staleness checks and the command line."""
from __future__ import annotations

import json
import os
import shutil
import subprocess
import sys

import pandas as pd
import pytest

from conftest import run_cli, write_config

HEADERS = {
    "cluster/calendar.csv": "building_id,date,kind,label",
    "cluster/schedule_table.csv": "building_id,semester,day_group,kind,label",
    "cluster/wss_curve.csv": "dataset,k,wss",
    "schedule/signals.csv": "profile_label,delta,tau,t_a,t_d,t_s_o,t_e_o",
    "schedule/demand_signals.csv": "profile_label,t_s_e,t_e_e",
    "savings/ledger.csv": "building_id,date,label_demand,label_occupancy,savings_kwh,delta",
    "sweep/sweep.csv": "building_id,shift_morning_h,shift_evening_h,avg_savings_pct",
    "preprocess/series.csv": "building_id,timestamp,kind,value,quality",
}


@pytest.fixture
def run_copy(small_run, tmp_path):
    """A private copy of the small run's output directory."""
    out = tmp_path / "out"
    shutil.copytree(small_run["out"], out)
    cfg = write_config(tmp_path / "config.toml", small_run["wifi"], small_run["meter"], out)
    return {"config": cfg, "out": out}


def test_every_stage_writes_its_artifacts(small_run):
    out = small_run["out"]
    for name, header in HEADERS.items():
        assert (out / name).read_text().splitlines()[0] == header
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["stages"]) == {"ingest", "preprocess", "cluster", "schedule", "savings", "sweep", "report"}
    for stage, entry in manifest["stages"].items():
        for name in entry["outputs"]:
            assert (out / name).exists(), f"{stage} lists missing {name}"
    clusters = json.loads((out / "cluster/clusters.json").read_text())
    assert set(clusters["datasets"]) == {"D-OS", "D-OF", "D-CS", "D-CF"}
    svgs = sorted(p.name for p in (out / "report").glob("*.svg"))
    assert "sweep.svg" in svgs and "wss_curves.svg" in svgs


def test_schedule_table_covers_every_building_and_group(small_run):
    table = pd.read_csv(small_run["out"] / "cluster/schedule_table.csv")
    assert len(table) == 3 * 2 * 3 * 2  # buildings x semesters x day groups x kinds
    assert table["label"].min() >= 1


def test_ledger_has_one_row_per_building_day_and_delta(small_run):
    ledger = pd.read_csv(small_run["out"] / "savings/ledger.csv")
    summary = json.loads((small_run["out"] / "savings/summary.json").read_text())
    calendar = pd.read_csv(small_run["out"] / "cluster/calendar.csv")
    # Days whose cleaned demand stayed incomplete carry no demand label and are not costed.
    labelled = (calendar["kind"] == "demand").sum()
    assert 0.95 * 3 * 70 <= labelled <= 3 * 70
    assert sorted(ledger["delta"].unique()) == [0.05, 0.1, 0.15]
    for delta, group in ledger.groupby("delta"):
        skipped = sum(summary["deltas"][str(delta)].get("skipped", {}).values())
        assert len(group) + skipped == labelled
        assert not group.duplicated(["building_id", "date"]).any()


def test_report_tables_use_dashes_and_average_rows(small_run):
    report = small_run["out"] / "report"
    savings = pd.read_csv(report / "savings_table.csv")
    assert {"Average (%)", "Average (MWh)"} <= set(savings["building"])
    signals = pd.read_csv(report / "signals_table.csv", dtype=str)
    undefined = signals[signals["t_a"] == "-"]
    assert (undefined[["t_d", "t_s_o", "t_e_o"]] == "-").all().all()
    assert signals.loc[signals["t_a"] != "-", "t_a"].str.fullmatch(r"\d\d:00").all()
    assert "Occupancy-derived signals" in (report / "report.txt").read_text()


def test_svg_output_is_deterministic(small_run, run_copy):
    assert run_cli("report", "--config", run_copy["config"]) == 0
    for svg in (small_run["out"] / "report").glob("*.svg"):
        assert svg.read_bytes() == (run_copy["out"] / "report" / svg.name).read_bytes()


# --- manifests and staleness --------------------------------------------------

def test_missing_upstream_is_a_stage_error(small_run, tmp_path):
    cfg = write_config(tmp_path / "c.toml", small_run["wifi"], small_run["meter"], tmp_path / "empty")
    assert run_cli("cluster", "--config", cfg) == 4


def test_modified_artifact_is_stale(run_copy):
    series = run_copy["out"] / "preprocess/series.csv"
    series.write_text(series.read_text().replace("S0,", "Z0,", 1))
    assert run_cli("cluster", "--config", run_copy["config"]) == 4
    assert run_cli("run", "--stages", "preprocess,cluster", "--config", run_copy["config"]) == 0


def test_changed_settings_invalidate_downstream(run_copy, tmp_path):
    cfg = run_copy["config"]
    cfg.write_text(cfg.read_text() + "[preprocess]\niqr_factor = 3.0\n")
    assert run_cli("cluster", "--config", cfg) == 4
    assert run_cli("run", "--core", "--config", cfg) == 0


def test_savings_only_rerun_keeps_upstream(run_copy):
    before = (run_copy["out"] / "cluster/clusters.json").read_bytes()
    assert run_cli("savings", "--config", run_copy["config"], "--mode", "actual") == 0
    assert (run_copy["out"] / "cluster/clusters.json").read_bytes() == before
    manifest = json.loads((run_copy["out"] / "manifest.json").read_text())
    assert manifest["stages"]["savings"]["params"]["savings"]["mode"] == "actual"


def test_k_override_applies_everywhere(run_copy):
    assert run_cli("cluster", "--config", run_copy["config"], "--k-override", "4") == 0
    clusters = json.loads((run_copy["out"] / "cluster/clusters.json").read_text())
    for ds in clusters["datasets"].values():
        assert ds["k"] == 4 and ds["overridden"] is True


# --- command line -------------------------------------------------------------

def test_config_errors_exit_2(small_run, tmp_path):
    assert run_cli("run", "--config", tmp_path / "absent.toml") == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[cluster]\nbogus = 1\n")
    assert run_cli("run", "--config", bad) == 2
    with pytest.raises(SystemExit) as exc:
        run_cli("savings", "--config", small_run["config"], "--delta", "abc")
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run_cli("report", "--config", small_run["config"], "--format", "pdf")
    assert exc.value.code == 2
    assert run_cli("savings", "--config", small_run["config"], "--out", tmp_path / "o", "--delta", "1.5") == 2


def test_malformed_data_exits_3(tmp_path):
    wifi = tmp_path / "wifi.csv"
    meter = tmp_path / "meter.csv"
    wifi.write_text("timestamp,building_id,wap_name,device_hash\n" + "garbage,,,\n" * 5)
    meter.write_text("timestamp,building_id,demand_kw\n2019-07-09 00:00:00,B1,1\n")
    cfg = write_config(tmp_path / "c.toml", wifi, meter, tmp_path / "out")
    assert run_cli("ingest", "--config", cfg) == 3


def test_synth_subcommand_and_log_env(tmp_path):
    env = {**os.environ, "MARTINI_LOG": "INFO"}
    synth = subprocess.run(
        [sys.executable, "-m", "setback.cli", "synth", "--out", str(tmp_path / "camp"), "--days", "50", "--seed", "1"],
        capture_output=True, text=True, env=env,
    )
    assert synth.returncode == 0, synth.stderr
    assert {"wifi.csv", "meter.csv", "truth.json"} <= {p.name for p in (tmp_path / "camp").iterdir()}
    cfg = write_config(tmp_path / "c.toml", tmp_path / "camp/wifi.csv", tmp_path / "camp/meter.csv", tmp_path / "out")
    quiet = subprocess.run([sys.executable, "-m", "setback.cli", "ingest", "--config", str(cfg)],
                           capture_output=True, text=True)
    loud = subprocess.run([sys.executable, "-m", "setback.cli", "ingest", "--config", str(cfg)],
                          capture_output=True, text=True, env=env)
    assert quiet.returncode == loud.returncode == 0
    assert "INFO" not in quiet.stderr and "INFO" in loud.stderr
    assert "ingest\t" in loud.stdout


def test_rerun_is_byte_identical(small_run, tmp_path):
    cfg = write_config(tmp_path / "c.toml", small_run["wifi"], small_run["meter"], tmp_path / "out")
    assert run_cli("run", "--all", "--config", cfg) == 0
    first = small_run["out"]
    for p in sorted(first.rglob("*")):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "out" / p.relative_to(first)).read_bytes(), p.name
