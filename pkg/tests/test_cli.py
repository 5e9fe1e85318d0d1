"""Config round-trips and the command-line surface (desk-scale invocations)."""
import json

import pandas as pd
import pytest

from dvlcal.cli import EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, main
from dvlcal.config import (
    ExperimentConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
    save_config,
)
from dvlcal.core import ConfigurationError, EmKind
from dvlcal.network import TrainConfig, build_model, save_checkpoint


TINY_GRID_YAML = """
seed: 7
grid:
  x_velocity: {lower: 1.5, upper: 1.6, step: 0.1}
  scale_percent: {lower: 0.5, upper: 0.6, step: 0.1}
  bias: {lower: 0.001, upper: 0.002, step: 0.001}
  noise: {lower: 0.0001, upper: 0.0002, step: 0.0001}
  repeats: 1
  trajectory_seconds: 100.0
  augment_yz: false
evaluation:
  runs: 2
  calibration_windows: [10.0, 20.0]
  baseline_window: 100.0
test_suite:
  dvl_types:
    4: {scale_percent: 1.0, bias: 0.007, noise_sigma: 0.0002}
  calib_velocity: [2.0, -0.08, -0.01]
  eval_velocities:
    - [1.8, 0.1, 0.1]
    - [2.2, 0.5, -0.1]
  calib_seconds: 200.0
  eval_seconds: 60.0
"""


class TestConfig:
    def test_defaults_reproduce_protocol_tables(self):
        cfg = ExperimentConfig()
        grid = cfg.grid_spec()
        assert grid.n_combinations == 7938
        assert grid.n_trajectories == 31752
        suite = cfg.test_suite_spec()
        assert suite.dvl_types[3].scale == pytest.approx(0.01)
        assert suite.dvl_types[3].noise_sigma == pytest.approx(0.02)
        assert suite.calib_velocity == (2.0, -0.08, -0.01)
        assert cfg.evaluation.runs == 200
        assert cfg.training.dropout == 0.2

    def test_percent_is_converted_at_the_boundary(self):
        cfg = ExperimentConfig()
        grid = cfg.grid_spec()
        assert grid.scale.lower == pytest.approx(0.002, abs=1e-15)
        assert grid.scale.upper == pytest.approx(0.015, abs=1e-15)
        assert cfg.test_suite_spec().dvl_types[1].scale == pytest.approx(0.005, abs=1e-15)

    def test_yaml_round_trip_identical(self, tmp_path):
        cfg = ExperimentConfig()
        path = tmp_path / "cfg.yaml"
        save_config(cfg, path)
        again = load_config(path)
        assert again == cfg
        save_config(again, tmp_path / "cfg2.yaml")
        assert (tmp_path / "cfg2.yaml").read_text() == path.read_text()
        assert config_hash(again) == config_hash(cfg)

    def test_partial_override_from_yaml(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(TINY_GRID_YAML)
        cfg = load_config(path)
        assert cfg.seed == 7
        assert cfg.grid_spec().n_combinations == 16
        assert cfg.evaluation.runs == 2
        assert cfg.training.batch_size == 256  # untouched default
        assert list(cfg.test_suite_spec().dvl_types) == [4]

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigurationError):
            config_from_dict({"grdi": {}})

    def test_dict_round_trip(self):
        cfg = ExperimentConfig()
        assert config_from_dict(config_to_dict(cfg)) == cfg


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.yaml"
    path.write_text(TINY_GRID_YAML)
    return path


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "em4.ckpt"
    save_checkpoint(path, build_model(EmKind.EM4, 10, seed=0), TrainConfig())
    return path


class TestSimulateCommand:
    def test_full_suite_writes_20_files(self, tmp_path):
        out = tmp_path / "traj"
        assert main(["simulate", "--out", str(out), "--seed", "3"]) == 0
        files = sorted(p.name for p in out.glob("*.csv"))
        assert len(files) == 20
        assert "dvl4_calib.csv" in files and "dvl1_eval4.csv" in files

    def test_single_trajectory(self, tmp_path, tiny_config):
        out = tmp_path / "one"
        rc = main(["simulate", "--config", str(tiny_config), "--out", str(out),
                   "--dvl-type", "4", "--traj", "calib"])
        assert rc == 0
        files = list(out.glob("*.csv"))
        assert [p.name for p in files] == ["dvl4_calib.csv"]
        assert sum(1 for _ in open(files[0])) == 201  # header + 200 epochs

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--out", str(a), "--seed", "9", "--dvl-type", "2", "--traj", "eval1"])
        main(["simulate", "--out", str(b), "--seed", "9", "--dvl-type", "2", "--traj", "eval1"])
        assert (a / "dvl2_eval1.csv").read_bytes() == (b / "dvl2_eval1.csv").read_bytes()

    def test_bad_config_exit_code(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("grid: {x_velocity: {lower: 1}}")
        assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


class TestGenDatasetCommand:
    def test_manifest_counts_and_rerun_hash(self, tmp_path, tiny_config, capsys):
        out = tmp_path / "ds"
        assert main(["gen-dataset", "--config", str(tiny_config), "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["counts"]["combinations"] == 16
        assert manifest["counts"]["train_windows"] == 16 * 8
        first = (out / "manifest.json").read_bytes()
        out2 = tmp_path / "ds2"
        assert main(["gen-dataset", "--config", str(tiny_config), "--out", str(out2)]) == 0
        assert (out2 / "manifest.json").read_bytes() == first

    def test_scale_fraction(self, tmp_path, tiny_config):
        out = tmp_path / "ds"
        rc = main(["gen-dataset", "--config", str(tiny_config), "--out", str(out),
                   "--scale-fraction", "0.5"])
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["counts"]["combinations"] == 8


class TestTrainCommand:
    def test_train_writes_checkpoint_and_loss_csv(self, tmp_path, tiny_config):
        ds = tmp_path / "ds"
        main(["gen-dataset", "--config", str(tiny_config), "--out", str(ds)])
        ckpt = tmp_path / "em4.ckpt"
        cfg_text = TINY_GRID_YAML + "training:\n  learning_rate: 0.001\n  batch_size: 16\n  max_epochs: 2\n  patience: 2\n  dropout: 0.2\n  window_n: 10\n  seed: 0\n"
        cfg_path = tmp_path / "train.yaml"
        cfg_path.write_text(cfg_text)
        rc = main(["train", "--config", str(cfg_path), "--dataset", str(ds),
                   "--em", "EM4", "--out", str(ckpt)])
        assert rc == 0
        from dvlcal.network import load_checkpoint

        bundle = load_checkpoint(ckpt)
        assert bundle.model.output_dim == 3
        assert bundle.header["epochs_completed"] == 2
        assert "manifest_sha256" in bundle.header["dataset_fingerprint"]
        loss = pd.read_csv(ckpt.with_suffix(".loss.csv"))
        assert list(loss.columns) == ["epoch", "train_loss", "val_loss"]
        assert len(loss) == 2
        assert list(loss["epoch"]) == [1, 2]

        # resume continues the epoch numbering
        ckpt2 = tmp_path / "em4b.ckpt"
        rc = main(["train", "--config", str(cfg_path), "--dataset", str(ds),
                   "--em", "EM4", "--out", str(ckpt2), "--resume", str(ckpt)])
        assert rc == 0
        loss2 = pd.read_csv(ckpt2.with_suffix(".loss.csv"))
        assert list(loss2["epoch"]) == [3, 4]

    def test_missing_dataset_is_data_error(self, tmp_path):
        rc = main(["train", "--dataset", str(tmp_path / "nope"), "--em", "EM4",
                   "--out", str(tmp_path / "x.ckpt")])
        assert rc == EXIT_DATA

    def test_divergence_exit_code(self, tmp_path, tiny_config):
        ds = tmp_path / "ds"
        main(["gen-dataset", "--config", str(tiny_config), "--out", str(ds)])
        cfg_path = tmp_path / "diverge.yaml"
        cfg_path.write_text(
            TINY_GRID_YAML
            + "training:\n  learning_rate: 1.0e+25\n  batch_size: 16\n  max_epochs: 3\n"
              "  patience: 3\n  dropout: 0.2\n  window_n: 10\n  seed: 0\n"
        )
        rc = main(["train", "--config", str(cfg_path), "--dataset", str(ds),
                   "--em", "EM4", "--out", str(tmp_path / "d.ckpt")])
        assert rc == EXIT_DIVERGENCE


class TestEvaluateCommand:
    def test_report_files_and_shape(self, tmp_path, tiny_config, tiny_checkpoint):
        out = tmp_path / "report"
        rc = main(["evaluate", "--config", str(tiny_config), "--checkpoint",
                   str(tiny_checkpoint), "--out", str(out), "--runs", "2"])
        assert rc == 0
        doc = json.loads((out / "report.json").read_text())
        assert doc["runs"] == 2 and doc["canonical"] is False
        assert set(doc["rmse"]) == {"DVL4"}
        assert set(doc["rmse"]["DVL4"]) == {"baseline", "nn_em4"}
        t4 = (out / "table4_rmse.csv").read_text().strip().splitlines()
        assert len(t4) == 1 + 2  # one DVL type x 2 methods
        t5 = (out / "table5_convergence.csv").read_text().strip().splitlines()
        assert len(t5) == 2

    def test_full_default_report_layout(self, tmp_path, tiny_checkpoint):
        out = tmp_path / "report"
        rc = main(["evaluate", "--checkpoint", str(tiny_checkpoint), "--out", str(out),
                   "--runs", "1", "--seed", "5"])
        # full default config: 4 DVL types x 2 methods x (4 eval + mean)
        assert rc == 0
        doc = json.loads((out / "report.json").read_text())
        cells = sum(len(m) - 1 for d in doc["rmse"].values() for m in d.values())
        assert cells == 4 * 2 * 4
        assert len(doc["convergence"]) == 4

    def test_missing_checkpoint_is_data_error(self, tmp_path):
        rc = main(["evaluate", "--checkpoint", str(tmp_path / "none.ckpt"),
                   "--out", str(tmp_path / "r")])
        assert rc == EXIT_DATA

    def test_em_mismatch_is_data_error(self, tmp_path, tiny_checkpoint):
        rc = main(["evaluate", "--checkpoint", str(tiny_checkpoint), "--em", "EM1",
                   "--out", str(tmp_path / "r")])
        assert rc == EXIT_DATA

    def test_same_seed_identical_report(self, tmp_path, tiny_config, tiny_checkpoint):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            main(["evaluate", "--config", str(tiny_config), "--checkpoint",
                  str(tiny_checkpoint), "--out", str(out), "--runs", "2"])
        assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()


class TestWriteConfig:
    def test_written_default_parses_back(self, tmp_path):
        path = tmp_path / "default.yaml"
        assert main(["write-config", "--out", str(path)]) == 0
        assert load_config(path) == ExperimentConfig()
