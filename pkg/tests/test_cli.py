import json

import pandas as pd
import pytest

from cli_chain import csv_files, run_chain
from conftest import tlc_row, tlc_text
from taxidemand.cli import CONFIG_ENV, EXIT_DATA, EXIT_INPUT, EXIT_OK, EXIT_USAGE, main
from taxidemand.ingest import Schema
from taxidemand.stats import TABLE_COLUMNS


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    return run_chain(tmp_path_factory.mktemp("chain"))


def test_chain_outputs(chain):
    expected = {
        "simulate": ["trips.csv", "weather.csv", "stations.csv", "schema.cfg", "truth_shifts.csv", "truth_hours.csv", "sim.cfg", "recovery.json"],
        "ingest": ["trips.csv", "rejects.csv", "ingest_report.json"],
        "shifts": ["shifts.csv", "shift_start_density.csv", "shift_end_density.csv", "empty_intervals.csv"],
        "analyze": ["hour_weather.csv", "bins.csv", "comparison.csv", "hotspot_bins.csv", "hotspot_comparison.csv", "pickups_per_driver.svg"],
        "test": ["tests_morning_peak.csv", "tests_evening_peak.csv", "test_results.csv"],
    }
    for cmd, names in expected.items():
        for n in names:
            assert (chain[cmd] / n).is_file(), f"{cmd}/{n}"
        assert (chain[cmd] / "manifest.json").is_file()


def test_manifest_lists_outputs_with_digests(chain):
    import hashlib

    for d in chain.values():
        m = json.loads((d / "manifest.json").read_text())
        assert len(m["id"]) == 16 and m["started"] and m["versions"]["taxidemand"]
        for o in m["outputs"]:
            assert hashlib.sha256((d / o["path"]).read_bytes()).hexdigest() == o["sha256"]
        for i in m["inputs"]:
            assert len(i["sha256"]) == 64
    assert "wilcoxon_pairing" in json.loads((chain["test"] / "manifest.json").read_text())


def test_recovery_exact_via_cli(chain):
    rec = json.loads((chain["simulate"] / "recovery.json").read_text())
    assert rec["partition_exact"] and rec["supply_mae"] == 0.0


def test_ingest_accepts_everything(chain):
    rep = json.loads((chain["ingest"] / "ingest_report.json").read_text())
    assert rep["rows_read"] == rep["rows_accepted"] > 0
    assert (chain["ingest"] / "rejects.csv").read_text() == ""


def test_results_table_layout(chain):
    t = pd.read_csv(chain["test"] / "tests_morning_peak.csv", dtype=str)
    assert list(t.columns) == TABLE_COLUMNS
    assert list(t["day_class"]) == ["Weekday"] * 3 + ["Weekend"] * 3


def test_rerun_is_byte_identical(chain, tmp_path):
    again = run_chain(tmp_path)
    a, b = csv_files(chain), csv_files(again)
    assert a.keys() == b.keys() and len(a) >= 15
    assert a == b


# -- exit codes ---------------------------------------------------------------------


def test_missing_schema_is_usage_error(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(CONFIG_ENV, raising=False)
    p = tmp_path / "t.csv"
    p.write_text(tlc_text([tlc_row()]))
    assert main(["ingest", str(p), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "schema" in err and "usage" in err.lower()


def test_schema_path_not_found(tmp_path, capsys):
    p = tmp_path / "t.csv"
    p.write_text(tlc_text([tlc_row()]))
    assert main(["ingest", str(p), "--schema", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "o")]) == EXIT_INPUT
    assert "usage" in capsys.readouterr().err.lower()


def test_schema_from_config_dir(tmp_path, monkeypatch):
    (tmp_path / "schema.cfg").write_text(Schema.tlc("km").to_text())
    monkeypatch.setenv(CONFIG_ENV, str(tmp_path))
    p = tmp_path / "t.csv"
    p.write_text(tlc_text([tlc_row()]))
    assert main(["ingest", str(p), "--out", str(tmp_path / "o")]) == EXIT_OK


def test_zero_accepted_rows(tmp_path, capsys):
    (tmp_path / "schema.cfg").write_text(Schema.tlc("km").to_text())
    p = tmp_path / "t.csv"
    p.write_text(tlc_text([tlc_row(plat="0", plon="0"), "x,y"]))
    assert main(["ingest", str(p), "--schema", str(tmp_path / "schema.cfg"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert "no usable data" in capsys.readouterr().err


def test_missing_trip_file(tmp_path):
    (tmp_path / "schema.cfg").write_text(Schema.tlc("km").to_text())
    assert main(["ingest", str(tmp_path / "nope.csv"), "--schema", str(tmp_path / "schema.cfg"), "--out", str(tmp_path / "o")]) == EXIT_INPUT


def test_bad_header_is_input_error(tmp_path):
    (tmp_path / "schema.cfg").write_text(Schema.tlc("km").to_text())
    p = tmp_path / "t.csv"
    p.write_text("a,b,c\n1,2,3\n")
    assert main(["ingest", str(p), "--schema", str(tmp_path / "schema.cfg"), "--out", str(tmp_path / "o")]) == EXIT_INPUT


def test_argparse_usage_error(capsys):
    assert main(["shifts"]) == EXIT_USAGE


def test_bad_cell_is_usage_error(chain, tmp_path):
    sim = chain["simulate"]
    code = main(
        ["analyze", "--trips", str(chain["ingest"] / "trips.csv"), "--weather", str(sim / "weather.csv"), "--cell", "9999:1", "--out", str(tmp_path)]
    )
    assert code == EXIT_USAGE


def test_weather_without_overlap_is_data_error(chain, tmp_path):
    w = tmp_path / "w.csv"
    w.write_text("station,hour,precip_mm\ncentral_park,1999-01-01 00:00,0.0\n")
    code = main(["analyze", "--trips", str(chain["ingest"] / "trips.csv"), "--weather", str(w), "--out", str(tmp_path / "o")])
    assert code == EXIT_DATA


def test_bad_sim_config(tmp_path):
    c = tmp_path / "sim.cfg"
    c.write_text("days=0\n")
    assert main(["simulate", "--config", str(c), "--out-dir", str(tmp_path / "o")]) == EXIT_INPUT


def test_test_command_single_regime(chain, tmp_path):
    assert main(["test", "--bins", str(chain["analyze"] / "bins.csv"), "--regime", "observed", "--out", str(tmp_path)]) == EXIT_OK
    t = pd.read_csv(tmp_path / "tests_evening_peak.csv", dtype=str)
    assert (t["perm_pvalue"] == "-").all()
