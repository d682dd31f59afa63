import csv
import json

import numpy as np
import pytest
import yaml

from cldbs import cli, harness
from cldbs.params import default_params


@pytest.fixture(scope="module")
def params_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("params") / "bgt.yaml"
    path.write_text(yaml.safe_dump(default_params()._raw))
    return path


@pytest.fixture(scope="module")
def calibration_dir(tmp_path_factory, params_file):
    out = tmp_path_factory.mktemp("calib")
    rc = cli.main(["calibrate", "--params", str(params_file),
                   "--out", str(out), "--seed", "0", "--episodes", "1"])
    assert rc == 0
    return out


class TestCalibrate:
    def test_writes_all_artifacts(self, calibration_dir):
        for name in ("calibration.json", "norm_spec.json", "config.json"):
            assert (calibration_dir / name).exists()

    def test_output_round_trips_through_loader(self, calibration_dir):
        cal = harness.Calibration.load(calibration_dir / "calibration.json")
        assert cal.r1_max > cal.r1_min
        from cldbs.biomarkers import NormalizationSpec

        spec = NormalizationSpec.load(calibration_dir / "norm_spec.json")
        assert spec == cal.norm_spec

    def test_rerun_with_same_seed_is_byte_identical(self, tmp_path, params_file,
                                                    calibration_dir):
        out = tmp_path / "again"
        rc = cli.main(["calibrate", "--params", str(params_file),
                       "--out", str(out), "--seed", "0", "--episodes", "1"])
        assert rc == 0
        assert (out / "calibration.json").read_bytes() == \
            (calibration_dir / "calibration.json").read_bytes()

    def test_missing_parameter_file_exits_2(self, tmp_path):
        rc = cli.main(["calibrate", "--params", str(tmp_path / "nope.yaml"),
                       "--out", str(tmp_path / "out")])
        assert rc == cli.EXIT_CONFIG

    def test_config_snapshot_has_hash(self, calibration_dir):
        snapshot = json.loads((calibration_dir / "config.json").read_text())
        assert "config_hash" in snapshot
        assert snapshot["seed"] == 0


@pytest.fixture(scope="module")
def baseline_dir(tmp_path_factory, params_file, calibration_dir):
    out = tmp_path_factory.mktemp("baseline")
    rc = cli.main(["baseline", "--condition", "odbs",
                   "--params", str(params_file),
                   "--calibration", str(calibration_dir / "calibration.json"),
                   "--out", str(out), "--episodes", "1", "--seed", "7",
                   "--trace"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def train_dir(tmp_path_factory, params_file, calibration_dir):
    out = tmp_path_factory.mktemp("train")
    rc = cli.main(["train", "--params", str(params_file),
                   "--calibration", str(calibration_dir / "calibration.json"),
                   "--out", str(out), "--seeds", "0", "--max-steps", "40",
                   "--warmup", "20", "--batch-size", "8"])
    assert rc == 0
    return out


class TestBaselineCommand:
    def test_artifacts_present(self, baseline_dir):
        for name in ("windows.csv", "episodes.csv", "summary.csv",
                      "summary.txt", "steps.jsonl", "config.json"):
            assert (baseline_dir / name).exists()

    def test_summary_row_shows_odbs_operating_point(self, baseline_dir):
        with open(baseline_dir / "summary.csv") as fh:
            row = next(csv.DictReader(fh))
        assert row["condition"] == "odbs"
        assert float(row["frequency_mean"]) == pytest.approx(130.0)
        assert float(row["amplitude_mean"]) == pytest.approx(2500.0)
        assert float(row["rms_mean"]) == pytest.approx(494.0, rel=0.01)

    def test_windows_csv_round_trips_exactly(self, baseline_dir, params_file,
                                             calibration_dir):
        cal = harness.Calibration.load(calibration_dir / "calibration.json")
        from cldbs.params import load_params

        report = harness.run_baseline("odbs", load_params(params_file), cal,
                                      episodes=1, seed=7)
        parsed = cli.read_windows_csv(baseline_dir / "windows.csv")
        assert tuple(parsed) == report.windows
        episodes = cli.read_episodes_csv(baseline_dir / "episodes.csv")
        assert tuple(episodes) == report.episodes

    def test_trace_lines_are_json_records(self, baseline_dir):
        lines = (baseline_dir / "steps.jsonl").read_text().strip().splitlines()
        assert len(lines) == 10  # one episode of ten steps
        record = json.loads(lines[0])
        assert record["label"] == "odbs"
        assert len(record["features"]) == 6


class TestTrainEvaluateCommands:
    def test_train_artifacts(self, train_dir):
        assert (train_dir / "checkpoint.bin").exists()
        assert (train_dir / "learning_curve_seed0.csv").exists()
        manifest = json.loads((train_dir / "training.json").read_text())
        assert manifest["env_steps"] == 40

    def test_learning_curve_parses(self, train_dir):
        with open(train_dir / "learning_curve_seed0.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4  # 40 steps = 4 episodes
        assert all(float(r["episode_return"]) <= 0.0 for r in rows)

    def test_evaluate_runs_on_checkpoint(self, tmp_path, params_file,
                                         calibration_dir, train_dir):
        out = tmp_path / "eval"
        rc = cli.main(["evaluate", "--params", str(params_file),
                       "--calibration", str(calibration_dir / "calibration.json"),
                       "--checkpoint", str(train_dir / "checkpoint.bin"),
                       "--out", str(out), "--episodes", "1", "--seed", "3"])
        assert rc == 0
        assert (out / "summary.txt").exists()

    def test_evaluate_refuses_mismatched_calibration(self, tmp_path, params_file,
                                                     calibration_dir, train_dir):
        other = tmp_path / "other_cal"
        rc = cli.main(["calibrate", "--params", str(params_file),
                       "--out", str(other), "--seed", "123", "--episodes", "1"])
        assert rc == 0
        rc = cli.main(["evaluate", "--params", str(params_file),
                       "--calibration", str(other / "calibration.json"),
                       "--checkpoint", str(train_dir / "checkpoint.bin"),
                       "--out", str(tmp_path / "eval2"), "--episodes", "1"])
        assert rc == cli.EXIT_CONFIG

    def test_corrupt_checkpoint_exits_2(self, tmp_path, params_file,
                                        calibration_dir, train_dir):
        bad = tmp_path / "bad.bin"
        blob = bytearray((train_dir / "checkpoint.bin").read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        bad.write_bytes(bytes(blob))
        rc = cli.main(["evaluate", "--params", str(params_file),
                       "--calibration", str(calibration_dir / "calibration.json"),
                       "--checkpoint", str(bad),
                       "--out", str(tmp_path / "eval3"), "--episodes", "1"])
        assert rc == cli.EXIT_CONFIG


class TestPlotsAndSummaries:
    def test_baseline_plot_writes_sgi_trace(self, tmp_path, params_file,
                                            calibration_dir):
        pytest.importorskip("matplotlib")
        out = tmp_path / "plotted"
        rc = cli.main(["baseline", "--condition", "pd",
                       "--params", str(params_file),
                       "--calibration", str(calibration_dir / "calibration.json"),
                       "--out", str(out), "--episodes", "1", "--plot"])
        assert rc == 0
        assert (out / "sgi_trace.png").stat().st_size > 0

    def test_summary_csv_round_trips(self, baseline_dir):
        with open(baseline_dir / "summary.csv") as fh:
            row = next(csv.DictReader(fh))
        parsed = cli.read_windows_csv(baseline_dir / "windows.csv")
        sgi = np.array([w.r1_raw for w in parsed])
        assert float(row["sgi_power_mean"]) == sgi.mean()
        assert float(row["sgi_power_std"]) == sgi.std()

    def test_learning_curve_round_trips(self, train_dir, params_file,
                                        calibration_dir):
        from cldbs.params import load_params
        from cldbs.td3 import AgentParams

        cal = harness.Calibration.load(calibration_dir / "calibration.json")
        res = harness.train(load_params(params_file), cal,
                            AgentParams(batch_size=8, warmup_steps=20,
                                        exploration_sigma=0.1),
                            max_steps=40, seed=0)
        with open(train_dir / "learning_curve_seed0.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [float(r["episode_return"]) for r in rows] == res.returns


class TestExportWaveform:
    def test_waveform_csv(self, tmp_path):
        out = tmp_path / "wave"
        rc = cli.main(["export-waveform", "--out", str(out),
                       "--frequency", "130", "--amplitude", "2500",
                       "--duration", "20"])
        assert rc == 0
        with open(out / "waveform.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 800  # 20 ms at 25 us
        values = np.array([float(r["i_dbs"]) for r in rows])
        assert values.max() == 2500.0
        assert values.min() == -2500.0
        assert abs(values.sum()) < 1e-9 * np.abs(values).sum()

    def test_writes_only_inside_out_dir(self, tmp_path, monkeypatch):
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        out = tmp_path / "wave2"
        rc = cli.main(["export-waveform", "--out", str(out),
                       "--frequency", "10", "--amplitude", "100"])
        assert rc == 0
        assert list(workdir.iterdir()) == []
