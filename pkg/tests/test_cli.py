"""CLI subcommands, config loading, manifests, and output round trips."""

import json
import os

import numpy as np
import pytest

from fbs_unroll.cli import run
from fbs_unroll.config import ConfigError, load_config
from fbs_unroll.storage import (load_control, load_dataset, load_params,
                                read_csv, save_control, save_params)
from fbs_unroll.dynamics import Control, NetworkParams
from fbs_unroll.experiments import gen_dataset

TINY_CFG = """
[data]
m = 6
n = 16
train = 32
val = 8
seed = 3

[train]
epochs = 2
batch = 16
seed = 5
alpha0 = 1.0

[sweep]
layers = [1, 2]
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_CFG)
    return str(path)


def csv_bytes(path):
    with open(path, "rb") as f:
        return f.read()


class TestGenData:
    def test_writes_dataset_and_manifest(self, tmp_path, capsys):
        out = str(tmp_path / "data.bin")
        code = run(["gen-data", "--m", "32", "--n", "128", "--train", "512",
                    "--val", "64", "--sparsity", "0.1", "--noise", "0.01",
                    "--seed", "7", "--out", out])
        assert code == 0
        data = load_dataset(out)
        assert data.m == 32 and data.n == 128
        assert data.train_count == 512 and data.val_count == 64
        manifest = json.loads(open(out + ".manifest.json").read())
        assert manifest["command"] == "gen-data"
        assert manifest["seed"] == 7
        assert os.path.abspath(out) in manifest["outputs"]

    def test_rerun_from_manifest_reproduces_bitwise(self, tmp_path):
        out = str(tmp_path / "data.bin")
        argv = ["gen-data", "--m", "8", "--n", "24", "--train", "16", "--val",
                "4", "--sparsity", "0.2", "--noise", "0.01", "--seed", "9",
                "--out", out]
        assert run(argv) == 0
        first = csv_bytes(out)
        manifest = json.loads(open(out + ".manifest.json").read())
        assert run(manifest["argv"]) == 0
        assert csv_bytes(out) == first


class TestTrain:
    def test_curve_and_params_written(self, tmp_path, tiny_config):
        out = str(tmp_path / "curve.csv")
        pout = str(tmp_path / "params.bin")
        code = run(["train", "--config", tiny_config, "--layers", "2",
                    "--out", out, "--params-out", pout])
        assert code == 0
        header, rows = read_csv(out)
        assert header == ["epoch", "train_objective", "train_data_loss",
                          "val_data_loss"]
        assert len(rows) == 2
        p = load_params(pout)
        assert p.N == 2 and p.m == 6 and p.n == 16


class TestSweepDepth:
    def test_schema_and_row_count(self, tmp_path, tiny_config):
        out = str(tmp_path / "sweep.csv")
        code = run(["sweep-depth", "--config", tiny_config, "--out", out])
        assert code == 0
        header, rows = read_csv(out)
        assert header == ["N", "final_train_objective", "final_train_data_loss",
                          "final_val_data_loss", "wall_time"]
        assert [r[0] for r in rows] == ["1", "2"]
        for row in rows:
            assert np.isfinite(float(row[1]))

    def test_layers_flag_overrides_config(self, tmp_path, tiny_config):
        out = str(tmp_path / "sweep.csv")
        assert run(["sweep-depth", "--config", tiny_config, "--layers", "1,3",
                    "--out", out]) == 0
        _, rows = read_csv(out)
        assert [r[0] for r in rows] == ["1", "3"]


class TestLimitEval:
    def test_writes_terminal_state_json(self, tmp_path, tiny_config):
        rng = np.random.default_rng(0)
        data = gen_dataset(6, 16, 4, 0, 0.2, 0.01, seed=1)
        dpath = str(tmp_path / "d.bin")
        from fbs_unroll.storage import save_dataset
        save_dataset(dpath, data)
        u = Control(1.0, rng.normal(size=(4, 6, 16)) * 0.2,
                    np.full(4, 0.5), np.full(4, 0.05))
        cpath = str(tmp_path / "u.bin")
        save_control(cpath, u)
        out = str(tmp_path / "limit.json")
        code = run(["limit-eval", "--control", cpath, "--data", dpath,
                    "--sample", "1", "--nref", "128", "--out", out])
        assert code == 0
        res = json.loads(open(out).read())
        assert len(res["terminal"]) == 16
        assert res["err_est"] >= 0.0
        assert res["depth_used"] == 128

    def test_sample_out_of_range(self, tmp_path):
        data = gen_dataset(6, 16, 4, 0, 0.2, 0.01, seed=1)
        dpath = str(tmp_path / "d.bin")
        from fbs_unroll.storage import save_dataset
        save_dataset(dpath, data)
        u = Control(1.0, np.zeros((2, 6, 16)), np.zeros(2), np.zeros(2))
        cpath = str(tmp_path / "u.bin")
        save_control(cpath, u)
        code = run(["limit-eval", "--control", cpath, "--data", dpath,
                    "--sample", "99", "--out", str(tmp_path / "o.json")])
        assert code == 1


class TestGammaCheckCmd:
    def test_rows_written(self, tmp_path, tiny_config):
        out = str(tmp_path / "gamma.csv")
        code = run(["gamma-check", "--config", tiny_config, "--layers", "4,8",
                    "--nref", "64", "--out", out])
        assert code == 0
        header, rows = read_csv(out)
        assert header == ["N", "objective_n", "gap"]
        assert [r[0] for r in rows] == ["4", "8"]


class TestStabilityCmd:
    def test_rows_written(self, tmp_path, tiny_config):
        out = str(tmp_path / "stab.csv")
        code = run(["stability", "--config", tiny_config, "--target", "y",
                    "--magnitudes", "0.5,0.25", "--layers", "2", "--out", out])
        assert code == 0
        header, rows = read_csv(out)
        assert header == ["r", "magnitude", "optimal_value_gap",
                          "solution_distance_lp"]
        assert rows[0][2] == "0" and len(rows) == 3


class TestPlot:
    def test_svg_from_sweep_csv(self, tmp_path, tiny_config):
        sweep = str(tmp_path / "sweep.csv")
        assert run(["sweep-depth", "--config", tiny_config, "--out", sweep]) == 0
        out = str(tmp_path / "sweep.svg")
        code = run(["plot", "--in", sweep, "--out", out, "--x", "N",
                    "--y", "final_train_data_loss"])
        assert code == 0
        svg = open(out).read()
        assert svg.startswith("<?xml")
        assert "<polyline" in svg and "</svg>" in svg
        assert "manifest" in svg

    def test_unknown_column(self, tmp_path, tiny_config, capsys):
        sweep = str(tmp_path / "sweep.csv")
        assert run(["sweep-depth", "--config", tiny_config, "--out", sweep]) == 0
        code = run(["plot", "--in", sweep, "--out", str(tmp_path / "x.svg"),
                    "--x", "N", "--y", "nope"])
        assert code == 1
        assert "nope" in capsys.readouterr().err


class TestConfig:
    def test_empty_file_gives_desk_defaults(self, tmp_path):
        path = tmp_path / "empty.toml"
        path.write_text("")
        cfg = load_config(str(path))
        assert cfg.data["m"] == 32 and cfg.data["n"] == 128
        assert cfg.data["train"] == 512 and cfg.data["val"] == 64
        assert cfg.tcfg.epochs == 200 and cfg.tcfg.batch_size == 256
        assert cfg.tcfg.r0 == 1e-3 and cfg.tcfg.momentum == 0.9
        assert cfg.ocfg.beta1 == 1e-7
        assert cfg.layers == [4, 8, 16, 32]
        assert cfg.reg.kind == "l1"

    def test_negative_beta_rejected_naming_field(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[objective]\nbeta1 = -1\n")
        with pytest.raises(ConfigError, match="beta1 must be >= 0"):
            load_config(str(path))

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "typo.toml"
        path.write_text("[train]\nepochz = 3\n")
        with pytest.raises(ConfigError, match="epochz"):
            load_config(str(path))

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "typo.toml"
        path.write_text("[trian]\nepochs = 3\n")
        with pytest.raises(ConfigError, match="trian"):
            load_config(str(path))

    def test_parse_error_has_location(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[data\nm = 3\n")
        with pytest.raises(ConfigError, match="line 1"):
            load_config(str(path))

    def test_paper_full_matches_reported_setup(self):
        here = os.path.dirname(__file__)
        cfg = load_config(os.path.join(here, "..", "configs", "paper_full.toml"))
        assert cfg.data["m"] == 256 and cfg.data["n"] == 1024
        assert cfg.data["train"] == 16384 and cfg.data["val"] == 2048
        assert cfg.tcfg.epochs == 800 and cfg.tcfg.batch_size == 256
        assert cfg.tcfg.r0 == 8e-3 and cfg.tcfg.momentum == 0.9
        assert cfg.tcfg.alpha0 == 10.0 and cfg.tcfg.lambda0 == 0.05
        assert cfg.tcfg.lr_exponents == (1, 3, 1)
        assert cfg.ocfg.beta1 == cfg.ocfg.beta2 == cfg.ocfg.beta3 == 1e-7
        assert cfg.layers == [5, 10, 15, 20, 25]

    def test_desk_config_parses(self):
        here = os.path.dirname(__file__)
        cfg = load_config(os.path.join(here, "..", "configs", "desk.toml"))
        assert cfg.tcfg.alpha0 == 2.0


class TestErrors:
    def test_unknown_flag_suggestion(self, tmp_path, tiny_config, capsys):
        code = run(["sweep-depth", "--config", tiny_config,
                    "--out", str(tmp_path / "s.csv"), "--laters", "1,2"])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("error: usage:")
        assert "--layers" in err

    def test_unknown_command_suggestion(self, capsys):
        code = run(["sweep-deth"])
        assert code == 1
        assert "sweep-depth" in capsys.readouterr().err

    def test_missing_file_names_path(self, capsys):
        code = run(["train", "--config", "/nonexistent/cfg.toml",
                    "--layers", "2", "--out", "/tmp/x.csv"])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("error: io:")
        assert "/nonexistent/cfg.toml" in err

    def test_no_command_prints_help(self, capsys):
        assert run([]) == 1

    def test_bad_config_value_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.toml"
        path.write_text("[objective]\nbeta1 = -1\n")
        code = run(["train", "--config", str(path), "--layers", "2",
                    "--out", str(tmp_path / "c.csv")])
        assert code == 1
        assert "beta1" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_failure_exit_code(self, tmp_path, capsys):
        path = tmp_path / "diverge.toml"
        path.write_text("[data]\nm = 6\nn = 16\ntrain = 32\nval = 8\nseed = 3\n"
                        "[model]\nregularizer = { kind = \"zero\" }\n"
                        "[train]\nepochs = 20\nbatch = 16\nr0 = 50.0\nseed = 5\n")
        code = run(["train", "--config", str(path), "--layers", "8",
                    "--out", str(tmp_path / "c.csv")])
        assert code == 2
        assert capsys.readouterr().err.startswith("error: numeric:")

    def test_threads_env_fallback(self, tmp_path, tiny_config, monkeypatch):
        out = str(tmp_path / "curve.csv")
        monkeypatch.setenv("FBS_UNROLL_THREADS", "2")
        assert run(["train", "--config", tiny_config, "--layers", "2",
                    "--out", out]) == 0
        monkeypatch.setenv("FBS_UNROLL_THREADS", "zebra")
        code = run(["train", "--config", tiny_config, "--layers", "2",
                    "--out", out])
        assert code == 1


class TestStorageRoundTrip:
    def test_params_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        p = NetworkParams(1.5, rng.normal(size=(3, 2, 4)),
                          rng.uniform(0, 1, 3), rng.uniform(0, 1, 3))
        path = str(tmp_path / "p.bin")
        save_params(path, p)
        q = load_params(path)
        assert q.T == p.T
        assert np.array_equal(q.A, p.A)
        assert np.array_equal(q.alpha, p.alpha)
        assert np.array_equal(q.lam, p.lam)

    def test_control_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        u = Control(2.0, rng.normal(size=(5, 3, 2)), rng.uniform(0, 1, 5),
                    rng.uniform(0, 1, 5))
        path = str(tmp_path / "u.bin")
        save_control(path, u)
        v = load_control(path)
        assert np.array_equal(v.A, u.A) and v.T == u.T

    def test_kind_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(3)
        u = Control(1.0, rng.normal(size=(2, 2, 2)), np.zeros(2), np.zeros(2))
        path = str(tmp_path / "u.bin")
        save_control(path, u)
        with pytest.raises(ValueError, match="expected network_params"):
            load_params(path)

    def test_csv_round_trip(self, tmp_path):
        from fbs_unroll.storage import write_csv
        path = str(tmp_path / "t.csv")
        rows = [(1, 0.1 + 0.2, float("nan")), (2, 1e-300, 3.0)]
        write_csv(path, ["a", "b", "c"], rows)
        header, got = read_csv(path)
        assert header == ["a", "b", "c"]
        assert float(got[0][1]) == 0.1 + 0.2     # %.17g is lossless
        assert np.isnan(float(got[0][2]))
        assert float(got[1][1]) == 1e-300
        with open(path, "rb") as f:
            assert b"\r" not in f.read()         # LF endings
