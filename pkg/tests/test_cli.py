import csv
import json

import numpy as np
import pytest

from probtsf.cli import ConfigError, main, resolve_config
from probtsf.dataio import write_csv_dataset
from probtsf.training import TrainConfig, init_models, load_checkpoint

TINY_TRAIN = ["--lookback", "12", "--horizon", "6", "--latent-dim", "4", "--hidden", "8", "--batch-size", "8"]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def sines_csv(tmp_path):
    path = tmp_path / "sines.csv"
    assert main(["generate", "--kind", "sines", "--n", "30", "--len", "18", "--seed", "3", "--output", str(path)]) == 0
    return path


class TestGenerate:
    def test_shape_contract(self, tmp_path):
        path = tmp_path / "s.csv"
        assert main(["generate", "--kind", "sines", "--n", "2000", "--len", "192", "--seed", "7", "--output", str(path)]) == 0
        rows = read_rows(path)
        assert len(rows) == 1 + 192
        assert all(len(r) == 1 + 2000 for r in rows)
        assert rows[0][:2] == ["t", "series_0"]

    @pytest.mark.parametrize("kind", ["sines", "vdp", "brownian"])
    def test_rerun_identical_bytes(self, tmp_path, kind):
        outs = []
        for name in ("a.csv", "b.csv"):
            path = tmp_path / name
            assert main(["generate", "--kind", kind, "--n", "5", "--len", "20", "--seed", "1", "--output", str(path)]) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_vdp_lambda_default_and_manifest(self, tmp_path):
        path = tmp_path / "v.csv"
        assert main(["generate", "--kind", "vdp", "--n", "3", "--len", "10", "--output", str(path)]) == 0
        manifest = json.loads((tmp_path / "v.csv.manifest.json").read_text())
        assert manifest["generator"] == "gen_vdp"
        assert manifest["generator_config"]["lambda_mean"] == 5.0
        assert manifest["seed"] == 0
        assert resolve_config("generate", None, {})["lambda_mean"] == 5.0

    def test_bad_kind(self, tmp_path, capsys):
        assert main(["generate", "--kind", "lorenz", "--output", str(tmp_path / "x.csv")]) == 2
        assert "kind must be one of" in capsys.readouterr().err


class TestConfig:
    def test_file_then_flag_precedence(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[generate]\nn = 4\nseed = 9\nnoise-std = 0.5\n")
        cfg = resolve_config("generate", str(ini), {"seed": 11})
        assert (cfg["n"], cfg["seed"], cfg["noise_std"]) == (4, 11, 0.5)

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        ini = tmp_path / "run.ini"
        ini.write_text("[generate]\nnumber = 4\n")
        assert main(["generate", "--config", str(ini)]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_unknown_section(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[plot]\nx = 1\n")
        with pytest.raises(ConfigError, match="unknown sections"):
            resolve_config("generate", str(ini), {})

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            resolve_config("train", None, {"data": "x.csv", "learning_rate": "-1"})
        with pytest.raises(ConfigError, match="invalid value"):
            resolve_config("evaluate", None, {"data": "x.csv", "model": "brownian_oracle", "svg": "maybe"})

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="data"):
            resolve_config("train", None, {})

    def test_train_defaults_match_trainconfig(self):
        cfg = resolve_config("train", None, {"data": "x.csv"})
        from probtsf.cli import train_config

        assert train_config(cfg) == TrainConfig()


class TestTrainEvaluateForecast:
    def test_end_to_end(self, tmp_path, sines_csv):
        run = tmp_path / "run"
        argv = ["train", "--data", str(sines_csv), "--output-dir", str(run), "--pretrain-epochs", "2", "--joint-epochs", "1"]
        assert main(argv + TINY_TRAIN) == 0
        for name in ("checkpoint.json", "history.csv", "timing.csv", "manifest.json"):
            assert (run / name).exists()
        hist = read_rows(run / "history.csv")
        assert hist[0] == ["step", "phase", "epoch", "loss", "point_loss"]

        rep = tmp_path / "rep"
        assert main(["evaluate", "--data", str(sines_csv), "--checkpoint", str(run / "checkpoint.json"), "--output-dir", str(rep)]) == 0
        cov = read_rows(rep / "coverage.csv")
        assert cov[0] == ["tau", "k1", "k2", "k3"]
        assert len(cov) == 1 + 6
        report = json.loads((rep / "report.json").read_text())
        assert report["horizon"] == 6 and report["n_test"] == 6
        assert report["kl_pooled"] >= 0
        assert (rep / "calibration.svg").read_text().startswith("<?xml")
        assert (rep / "coverage.svg").exists()
        assert len(read_rows(rep / "variance_per_tau.csv")) == 7
        assert len(read_rows(rep / "histograms.csv")) == 1 + 4 * 40

        # evaluating twice gives identical outputs
        rep2 = tmp_path / "rep2"
        assert main(["evaluate", "--data", str(sines_csv), "--checkpoint", str(run / "checkpoint.json"), "--output-dir", str(rep2)]) == 0
        for name in ("report.json", "coverage.csv", "histograms.csv", "calibration.svg", "coverage.svg"):
            assert (rep / name).read_bytes() == (rep2 / name).read_bytes(), name

        out = tmp_path / "fc.csv"
        assert main(["forecast", "--data", str(sines_csv), "--checkpoint", str(run / "checkpoint.json"), "--output", str(out)]) == 0
        rows = read_rows(out)
        assert rows[0][:3] == ["tau", "series_0_mu", "series_0_sigma"]
        assert len(rows) == 7 and len(rows[0]) == 1 + 2 * 30
        assert all(float(v) > 0 for v in rows[1][2::2])

    def test_history_reproducible(self, tmp_path, sines_csv):
        for name in ("a", "b"):
            argv = ["train", "--data", str(sines_csv), "--output-dir", str(tmp_path / name), "--pretrain-epochs", "1", "--joint-epochs", "1"]
            assert main(argv + TINY_TRAIN) == 0
        for name in ("history.csv", "checkpoint.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_joint_zero_keeps_sigma_init(self, tmp_path, sines_csv):
        argv = ["train", "--data", str(sines_csv), "--output-dir", str(tmp_path / "r"), "--pretrain-epochs", "1", "--joint-epochs", "0"]
        assert main(argv + TINY_TRAIN) == 0
        ck = load_checkpoint(tmp_path / "r" / "checkpoint.json")
        _, sigma0 = init_models(12, 6, ck.train_config)
        assert ck.sigma == sigma0

    def test_missing_dataset(self, tmp_path, capsys):
        assert main(["train", "--data", str(tmp_path / "nope.csv"), "--output-dir", str(tmp_path / "r")]) == 2
        assert "no such dataset" in capsys.readouterr().err

    def test_malformed_dataset_location(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,series_0\n1,1\n2,x\n")
        assert main(["train", "--data", str(bad)]) == 2
        assert "row 2" in capsys.readouterr().err

    def test_shape_mismatch(self, tmp_path, sines_csv, capsys):
        run = tmp_path / "run"
        argv = ["train", "--data", str(sines_csv), "--output-dir", str(run), "--pretrain-epochs", "1", "--joint-epochs", "0"]
        assert main(argv + TINY_TRAIN) == 0
        code = main(
            ["evaluate", "--data", str(sines_csv), "--checkpoint", str(run / "checkpoint.json"), "--horizon", "5", "--output-dir", str(tmp_path / "e")]
        )
        assert code == 2
        assert "lookback/horizon" in capsys.readouterr().err

    def test_svg_can_be_disabled(self, tmp_path):
        data = tmp_path / "bm.csv"
        assert main(["generate", "--kind", "brownian", "--n", "40", "--len", "30", "--output", str(data)]) == 0
        rep = tmp_path / "rep"
        argv = ["evaluate", "--data", str(data), "--model", "brownian_oracle", "--lookback", "10", "--horizon", "20"]
        assert main(argv + ["--output-dir", str(rep), "--svg", "false"]) == 0
        assert (rep / "coverage.csv").exists() and (rep / "report.json").exists()
        assert not list(rep.glob("*.svg"))

    def test_oracle_evaluation_calibrated(self, tmp_path):
        data = tmp_path / "bm.csv"
        assert main(["generate", "--kind", "brownian", "--n", "25000", "--len", "12", "--seed", "2", "--output", str(data)]) == 0
        rep = tmp_path / "rep"
        argv = ["evaluate", "--data", str(data), "--model", "brownian_oracle", "--lookback", "8", "--horizon", "4", "--split", "all"]
        assert main(argv + ["--output-dir", str(rep), "--svg", "false"]) == 0
        report = json.loads((rep / "report.json").read_text())
        assert report["n_test"] * report["horizon"] >= 100_000
        assert report["kl_pooled"] <= 1e-3

    def test_electricity_schema_end_to_end(self, tmp_path):
        rng = np.random.default_rng(0)
        hours = np.arange(60)
        data = 200 + 50 * np.sin(2 * np.pi * hours / 24)[None, :] + rng.normal(0, 10, size=(321, 60))
        path = tmp_path / "electricity.csv"
        write_csv_dataset(path, data, t=hours, names=[f"MT_{i:03d}" for i in range(1, 322)])
        run = tmp_path / "run"
        argv = ["train", "--data", str(path), "--output-dir", str(run), "--pretrain-epochs", "1", "--joint-epochs", "1"]
        assert main(argv + ["--lookback", "24", "--horizon", "12", "--latent-dim", "4", "--hidden", "8"]) == 0
        rep = tmp_path / "rep"
        assert main(["evaluate", "--data", str(path), "--checkpoint", str(run / "checkpoint.json"), "--output-dir", str(rep)]) == 0
        report = json.loads((rep / "report.json").read_text())
        assert report["n_test"] == 64 and report["horizon"] == 12
        assert np.isfinite(report["kl_pooled"]) and report["mae_probabilistic"] > 0
        assert len(read_rows(rep / "coverage.csv")) == 13
