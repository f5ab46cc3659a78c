import numpy as np
import pytest

from bsfa import load_thresholds, predicted_density, TileConfig
from bsfa.cli import (EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_VERIFY_FAIL,
                      load_report, load_traces, main)
from bsfa.errors import FormatError


@pytest.fixture(scope="module")
def dump_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "dump"
    rc = main(["gen", "--kind", "model-dump", "--n", "512", "--d", "32",
               "--layers", "1", "--heads", "2", "--samples", "2",
               "--out", str(out)])
    assert rc == EXIT_OK
    return out


@pytest.fixture(scope="module")
def thresholds(dump_dir, tmp_path_factory):
    path = tmp_path_factory.mktemp("thr") / "thr.bin"
    rc = main(["calibrate", "--data", str(dump_dir), "--k", "2,4",
               "--out", str(path)])
    assert rc == EXIT_OK
    return path


def test_calibrate_output_loads(thresholds):
    t = load_thresholds(thresholds)
    assert t.k_levels == (2, 4)
    assert t.num_positions == 4


def test_verify_dense_gate_passes(dump_dir, capsys):
    rc = main(["verify", "--data", str(dump_dir), "--gate", "dense",
               "--threads", "2"])
    assert rc == EXIT_OK
    assert "PASS" in capsys.readouterr().out


def test_verify_threshold_gate_with_report(dump_dir, thresholds, tmp_path, capsys):
    report = tmp_path / "report.json"
    traces = tmp_path / "traces.npz"
    rc = main(["verify", "--data", str(dump_dir), "--gate", "threshold",
               "--thresholds", str(thresholds), "--k", "2",
               "--json", str(report), "--trace-out", str(traces), "--table"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "retained" in out and "PASS" in out

    rep = load_report(report)
    assert rep["config"]["gate"] == "threshold"
    assert rep["verify"]["pass"] is True
    assert 0 < rep["density"]["measured_mean"] <= 1

    by_sample = load_traces(traces)
    assert len(by_sample) == 2 and len(by_sample[0]) == 2

    rc = main(["density", "--trace", str(traces)])
    assert rc == EXIT_OK


def test_verify_detects_injected_fault(dump_dir, capsys):
    rc = main(["verify", "--data", str(dump_dir), "--gate", "dense",
               "--inject-fault"])
    assert rc == EXIT_VERIFY_FAIL
    assert "FAIL" in capsys.readouterr().out


def test_report_rejects_unknown_fields(dump_dir, thresholds, tmp_path):
    report = tmp_path / "report.json"
    main(["verify", "--data", str(dump_dir), "--gate", "threshold",
          "--thresholds", str(thresholds), "--k", "2", "--json", str(report)])
    text = report.read_text().replace('"schema": 1', '"schema": 1, "extra": 0')
    report.write_text(text)
    with pytest.raises(FormatError):
        load_report(report)


def test_config_errors_exit_2(dump_dir, capsys):
    assert main(["verify", "--data", str(dump_dir), "--gate", "threshold"]) == EXIT_CONFIG
    assert main(["verify", "--data", str(dump_dir), "--gate", "sliding-window"]) == EXIT_CONFIG
    assert main(["verify", "--data", str(dump_dir), "--gate", "dense",
                 "--bm", "96", "--bn", "64"]) == EXIT_CONFIG
    assert main(["density"]) == EXIT_CONFIG
    capsys.readouterr()


def test_io_errors_exit_3(dump_dir, tmp_path, capsys):
    assert main(["calibrate", "--data", str(tmp_path / "missing"),
                 "--k", "2", "--out", str(tmp_path / "t.bin")]) == EXIT_IO
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXX" + bytes(64))
    assert main(["verify", "--data", str(dump_dir), "--gate", "threshold",
                 "--thresholds", str(bad), "--k", "2"]) == EXIT_IO
    capsys.readouterr()


def test_density_command(capsys):
    assert main(["density", "--n", "32768", "--k", "128"]) == EXIT_OK
    printed = float(capsys.readouterr().out.strip())
    assert printed == pytest.approx(
        predicted_density(32768, TileConfig(128, 64), 128), abs=1e-4)
    assert main(["density", "--table1"]) == EXIT_OK
    assert len(capsys.readouterr().out.strip().splitlines()) == 11  # header + 10 rows


def test_bench_smoke(dump_dir, tmp_path, capsys):
    report = tmp_path / "bench.json"
    rc = main(["bench", "--data", str(dump_dir), "--gate", "frontier",
               "--warmup", "0", "--repeat", "2", "--json", str(report)])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "speedup" in out
    rep = load_report(report)
    assert rep["timing"]["repeats"] == 2
    assert rep["cost"]["qk_flops"] > 0
