"""
Command line runs that write real output files
"""

import io
import json

import pandas as pd
import pytest

from src.handlers.cli_handler import CliApplication
from src.main import main

from tests.conftest import CASE14_PATH, DATA_DIR, PARTITION14_PATH


# generate takes the scenario flags only; estimator flags go to estimate and compare
MEASUREMENT_FLAGS = [
    "--case", str(CASE14_PATH),
    "--areas", str(PARTITION14_PATH),
    "--seed", "7",
    "--bad-targets", "p_injection:5,v_squared:14,p_flow:5-6",
]
SCENARIO_FLAGS = [*MEASUREMENT_FLAGS, "--max-iter", "5000"]


def _run(argv):
    out = io.StringIO()
    code = CliApplication(stdout=out).run(argv)
    return code, json.loads(out.getvalue().splitlines()[-1])


class TestEstimate:

    def test_writes_report_and_traces(self, tmp_path):
        code, document = _run(["estimate", *SCENARIO_FLAGS, "--out", str(tmp_path)])
        assert code == 0
        assert set(document["outputs"]) == {"report", "trace_stage1", "trace_stage2"}

        report = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
        assert len(report["per_bus"]) == 14
        assert report["metrics"]["s_v"] is not None
        assert "wall_time" not in report
        assert report["config"]["seed"] == 7

        trace = pd.read_csv(tmp_path / "trace_stage1.csv")
        assert list(trace.columns[:5]) == ["stage", "iteration", "delta", "r_inf", "d_inf"]

    def test_timing_flag(self, tmp_path):
        code, _ = _run(["estimate", *SCENARIO_FLAGS, "--out", str(tmp_path), "--timing"])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
        assert report["wall_time"] > 0

    def test_scenario_file(self, tmp_path, monkeypatch):
        # scenario paths are relative to the repository root
        monkeypatch.chdir(DATA_DIR.parent)
        code, _ = _run(["estimate", "--scenario", "data/scenarios/ieee14_bad_data.json",
                        "--max-iter", "5000", "--out", str(tmp_path)])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
        assert report["config"]["bad_data"]["targets"] == ["p_injection:5", "v_squared:14", "p_flow:5-6"]


class TestGenerateThenEstimate:

    def test_generated_measurements_are_reused(self, tmp_path):
        measurements = tmp_path / "measurements.json"
        code, _ = _run(["generate", *MEASUREMENT_FLAGS, "--out", str(measurements)])
        assert code == 0
        document = json.loads(measurements.read_text(encoding="utf-8"))
        assert len(document["measurements"]) == 80
        assert sum(1 for m in document["measurements"] if m["is_bad"]) == 3

        first, second = tmp_path / "first", tmp_path / "second"
        assert _run(["estimate", *SCENARIO_FLAGS, "--out", str(first)])[0] == 0
        assert _run(["estimate", *SCENARIO_FLAGS, "--measurements", str(measurements), "--out", str(second)])[0] == 0
        a = json.loads((first / "report.json").read_text(encoding="utf-8"))
        b = json.loads((second / "report.json").read_text(encoding="utf-8"))
        assert a["per_bus"] == b["per_bus"]


class TestCompareAndSweep:

    def test_compare(self, tmp_path):
        code, document = _run(["compare", *SCENARIO_FLAGS, "--out", str(tmp_path)])
        assert code == 0
        assert set(document["outputs"]) == {"report", "states", "bad_data"}
        report = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
        assert set(report["comparison"]) == {"drbse", "centralized_rbse", "wls", "wls_lnrt"}
        bad = pd.read_csv(tmp_path / "compare_bad_data.csv")
        assert len(bad) == 3

    def test_small_sweep(self, tmp_path):
        code, _ = _run(["sweep", "--case", str(CASE14_PATH), "--areas", str(PARTITION14_PATH),
                        "--fractions", "0,0.05", "--trials", "2", "--max-iter", "5000", "--out", str(tmp_path)])
        assert code == 0
        summary = pd.read_csv(tmp_path / "sweep.csv")
        assert len(summary) == 3 * 2
        assert set(summary["method"]) == {"drbse", "wls", "wls_lnrt"}
        trials = pd.read_csv(tmp_path / "sweep_trials.csv")
        assert len(trials) == 3 * 2 * 2


class TestDeterminism:

    @pytest.mark.parametrize("schedule_seeds", [("3", "3"), ("3", "11")])
    def test_repeated_runs_write_identical_files(self, tmp_path, schedule_seeds):
        runs = []
        for i, schedule_seed in enumerate(schedule_seeds):
            out = tmp_path / f"run{i}"
            code, _ = _run(["estimate", *SCENARIO_FLAGS, "--schedule-seed", schedule_seed, "--out", str(out)])
            assert code == 0
            runs.append(out)
        first, second = runs
        for name in ("trace_stage1.csv", "trace_stage2.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes()
        a = json.loads((first / "report.json").read_text(encoding="utf-8"))
        b = json.loads((second / "report.json").read_text(encoding="utf-8"))
        a["config"].pop("schedule_seed")
        b["config"].pop("schedule_seed")
        assert a == b
        if schedule_seeds[0] == schedule_seeds[1]:
            assert (first / "report.json").read_bytes() == (second / "report.json").read_bytes()

    def test_generate_is_byte_identical(self, tmp_path):
        first, second = tmp_path / "a.json", tmp_path / "b.json"
        assert _run(["generate", *MEASUREMENT_FLAGS, "--out", str(first)])[0] == 0
        assert _run(["generate", *MEASUREMENT_FLAGS, "--out", str(second)])[0] == 0
        assert first.read_bytes() == second.read_bytes()


class TestEntryPoint:

    def test_main_returns_usage_code(self, capsys):
        assert main(["estimate", "--error-json"]) == 2
        document = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert document["command"] == "estimate"

    @pytest.mark.parametrize("level", ["DEBUG", "WARNING"])
    def test_log_level_flag(self, tmp_path, level):
        target = tmp_path / "case.json"
        assert main(["--log-level", level, "convert-case", str(CASE14_PATH), "--out", str(target)]) == 0
        assert target.exists()
