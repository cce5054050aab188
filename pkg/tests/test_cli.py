"""End-to-end command-line tests, all in-process via cli.main."""

import json
import warnings

import pandas as pd
import pytest

from flowcast.cli import build_parser, main
from flowcast.errors import TrainingError
from flowcast.synthetic import generate

TINY = ["--samples", "2", "--look-back", "8", "--hidden", "8",
        "--heads", "2", "--head-dim", "2", "--batch-size", "16",
        "--max-epochs", "2"]


@pytest.fixture(scope="module")
def small_data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_data")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        generate(out, days=6, seed=11)
    return out


@pytest.fixture(scope="module")
def run_dir(small_data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_run")
    argv = ["run-scenarios", "--data-dir", str(small_data_dir),
            "--output-dir", str(out), "--cv", "0.4"] + TINY
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert main(argv) == 0
    return out


class TestParsing:
    def test_help_lists_every_subcommand(self):
        text = build_parser().format_help()
        for name in ("validate", "adjacency", "train", "predict",
                     "baselines", "run-scenarios", "report"):
            assert name in text

    def test_data_dir_is_required_without_config(self, capsys):
        assert main(["validate"]) == 2
        assert "either --config or --data-dir" in capsys.readouterr().err

    def test_unknown_config_key_exits_2(self, small_data_dir, tmp_path, capsys):
        path = tmp_path / "bad.toml"
        path.write_text(f'data_dir = "{small_data_dir}"\nbogus = 1\n')
        assert main(["validate", "--config", str(path)]) == 2
        assert "config error" in capsys.readouterr().err


class TestValidate:
    def test_reports_dataset_summary(self, small_data_dir, capsys):
        assert main(["validate", "--data-dir", str(small_data_dir)]) == 0
        out = capsys.readouterr().out
        assert "dataset ok" in out
        assert "stations retained" in out
        assert "directed links" in out

    def test_missing_dataset_exits_3(self, tmp_path, capsys):
        assert main(["validate", "--data-dir", str(tmp_path / "nope")]) == 3
        assert "data error" in capsys.readouterr().err

    def test_bogus_log_level_is_tolerated(self, small_data_dir, monkeypatch):
        monkeypatch.setenv("FLOWCAST_LOG_LEVEL", "NOT_A_LEVEL")
        assert main(["validate", "--data-dir", str(small_data_dir)]) == 0


class TestAdjacency:
    def test_mean_mode_writes_one_matrix_per_cv(self, small_data_dir,
                                                tmp_path, capsys):
        out = tmp_path / "adj"
        code = main(["adjacency", "--data-dir", str(small_data_dir),
                     "--output-dir", str(out), "--cv", "0.3", "0.6",
                     "--samples", "2", "--look-back", "8"])
        assert code == 0
        stdout = capsys.readouterr().out
        for name in ("adjacency_cv0.3.csv", "adjacency_cv0.6.csv"):
            assert (out / name).exists()
            assert name in stdout
        edges = pd.read_csv(out / "adjacency_cv0.3.csv")
        assert list(edges.columns) == ["from_id", "to_id", "weight"]
        assert ((edges["weight"] > 0) & (edges["weight"] <= 1)).all()

    def test_flags_override_config_file(self, small_data_dir, tmp_path):
        out = tmp_path / "adj"
        config = tmp_path / "run.toml"
        config.write_text(
            f'data_dir = "{small_data_dir}"\n'
            f'output_dir = "{out}"\n'
            'samples = 3\n'
            'look_back = 8\n'
            'aggregation = "per_sample"\n'
            'cv_levels = [0.4]\n')
        # --samples 2 must beat samples = 3 from the file.
        assert main(["adjacency", "--config", str(config),
                     "--samples", "2"]) == 0
        names = sorted(p.name for p in out.glob("adjacency_cv0.4*.csv"))
        assert names == ["adjacency_cv0.4_m0.csv", "adjacency_cv0.4_m1.csv"]


class TestTrainValidation:
    def test_multiple_cv_levels_exit_2(self, small_data_dir, capsys):
        code = main(["train", "--data-dir", str(small_data_dir),
                     "--cv", "0.3", "0.5"] + TINY)
        assert code == 2
        assert "exactly one CV level" in capsys.readouterr().err


class TestBaselinesCommand:
    def test_scores_all_three_methods(self, small_data_dir, capsys):
        assert main(["baselines", "--data-dir", str(small_data_dir),
                     "--look-back", "8"]) == 0
        out = capsys.readouterr().out
        for name in ("ha", "saf", "ltm"):
            assert name in out
        assert "mae" in out and "rmse" in out


class TestRunScenarios:
    def test_writes_manifest_and_artifacts(self, run_dir, small_data_dir):
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert [s["status"] for s in manifest["scenarios"]] == ["ok"]
        assert manifest["scenarios"][0]["cv"] == 0.4
        scen = run_dir / "scenario_cv0.4"
        for name in ("adjacency.csv", "checkpoint.bin", "calibration.json",
                     "predictions.csv", "metrics.json"):
            assert (scen / name).exists(), name

    def test_metrics_cover_model_and_baselines(self, run_dir):
        metrics = json.loads(
            (run_dir / "scenario_cv0.4" / "metrics.json").read_text())
        assert set(metrics["methods"]) == {"model", "model_split_cp",
                                           "ha", "saf", "ltm"}
        model = metrics["methods"]["model"]
        assert {"mae", "rmse", "picp", "mpiw", "count"} <= set(model)
        assert metrics["training"]["epochs"] <= 2

    def test_predictions_csv_is_consistent(self, run_dir):
        metrics = json.loads(
            (run_dir / "scenario_cv0.4" / "metrics.json").read_text())
        df = pd.read_csv(run_dir / "scenario_cv0.4" / "predictions.csv")
        assert list(df.columns) == ["station_id", "timestamp", "point",
                                    "lower", "upper"]
        stations = df["station_id"].nunique()
        assert len(df) == metrics["counts"]["test"] * stations
        assert (df["lower"] <= df["point"]).all()
        assert (df["point"] <= df["upper"]).all()

    def test_rerun_is_byte_identical(self, run_dir, small_data_dir):
        metrics_path = run_dir / "scenario_cv0.4" / "metrics.json"
        manifest_path = run_dir / "manifest.json"
        before_metrics = metrics_path.read_bytes()
        before_manifest = manifest_path.read_bytes()
        argv = ["run-scenarios", "--data-dir", str(small_data_dir),
                "--output-dir", str(run_dir), "--cv", "0.4"] + TINY
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert main(argv) == 0
        assert metrics_path.read_bytes() == before_metrics
        assert manifest_path.read_bytes() == before_manifest

    def test_training_failure_exits_4(self, small_data_dir, tmp_path,
                                      monkeypatch, capsys):
        def boom(*args, **kwargs):
            raise TrainingError("injected failure")

        monkeypatch.setattr("flowcast.scenarios.train_model", boom)
        out = tmp_path / "run"
        code = main(["run-scenarios", "--data-dir", str(small_data_dir),
                     "--output-dir", str(out), "--cv", "0.4"] + TINY)
        assert code == 4
        marker = out / "scenario_cv0.4" / ".failed"
        assert marker.exists()
        assert "TrainingError: injected failure" in marker.read_text()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["scenarios"][0]["status"] == "failed"
        assert "failed" in capsys.readouterr().out


class TestPredict:
    def test_interval_forecast_from_artifacts(self, run_dir, small_data_dir,
                                              tmp_path):
        scen = run_dir / "scenario_cv0.4"
        out_csv = tmp_path / "forecast.csv"
        code = main(["predict", "--checkpoint", str(scen / "checkpoint.bin"),
                     "--calibration", str(scen / "calibration.json"),
                     "--data-dir", str(small_data_dir), "--out", str(out_csv)])
        assert code == 0
        df = pd.read_csv(out_csv)
        assert list(df.columns) == ["station_id", "timestamp", "point",
                                    "lower", "upper"]
        assert len(df) == df["station_id"].nunique()  # horizon 1
        assert df["timestamp"].nunique() == 1
        assert (df["lower"] <= df["point"]).all()
        assert (df["point"] <= df["upper"]).all()

    def test_missing_calibration_warns_and_emits_points(self, run_dir,
                                                        small_data_dir,
                                                        tmp_path):
        scen = run_dir / "scenario_cv0.4"
        out_csv = tmp_path / "points.csv"
        with pytest.warns(UserWarning, match="point forecasts only"):
            code = main(["predict", "--checkpoint",
                         str(scen / "checkpoint.bin"),
                         "--data-dir", str(small_data_dir),
                         "--out", str(out_csv)])
        assert code == 0
        df = pd.read_csv(out_csv)
        assert list(df.columns) == ["station_id", "timestamp", "point"]

    def test_requires_a_data_source(self, run_dir, capsys):
        scen = run_dir / "scenario_cv0.4"
        code = main(["predict", "--checkpoint", str(scen / "checkpoint.bin")])
        assert code == 2
        assert "predict needs --data-dir" in capsys.readouterr().err


class TestReport:
    def test_builds_table_and_report_json(self, run_dir, capsys):
        assert main(["report", "--run-dir", str(run_dir)]) == 0
        out = capsys.readouterr().out
        assert "cv=0.4" in out
        assert "model" in out and "mpiw" in out
        report = json.loads((run_dir / "report.json").read_text())
        assert report["cv_levels"] == [0.4]
        assert report["scenarios"][0]["methods"]["model"]["picp"] is not None

    def test_missing_manifest_exits_3(self, tmp_path, capsys):
        assert main(["report", "--run-dir", str(tmp_path)]) == 3
        assert "no manifest" in capsys.readouterr().err
