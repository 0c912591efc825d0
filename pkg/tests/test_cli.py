import json

import numpy as np
import pytest

from nlarboot.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _write_linear_csv(path, T=40, rho=0.5, x0=1.0):
    values = [x0]
    for _ in range(T):
        values.append(rho * values[-1])
    path.write_text("x\n" + "\n".join(repr(v) for v in values) + "\n")
    return path


def _linear_model_yaml(path):
    path.write_text("family: polynomial\norder: 1\ndegree: 1\ntheta: [0.5]\n"
                    "label: linear-ar1\n")
    return path


class TestSimulate:
    def test_writes_csv_of_right_length(self, tmp_path, capsys):
        out = tmp_path / "path.csv"
        code, stdout, _ = _run(capsys, "simulate", "--model", "4", "--T", "30",
                               "--burn-in", "50", "--seed", "1", "--out", str(out))
        assert code == 0
        rows = out.read_text().strip().split("\n")
        assert rows[0] == "x" and len(rows) == 32  # header + T + p
        record = json.loads(stdout)
        assert record["seed"] == 1 and record["T"] == 30

    def test_same_seed_same_bytes(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        _run(capsys, "simulate", "--model", "6", "--T", "20", "--seed", "9",
             "--out", str(a))
        _run(capsys, "simulate", "--model", "6", "--T", "20", "--seed", "9",
             "--out", str(b))
        assert a.read_bytes() == b.read_bytes()


class TestFit:
    def test_fit_zoo_model_from_csv(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        _run(capsys, "simulate", "--model", "1", "--T", "80", "--seed", "2",
             "--out", str(data))
        code, stdout, _ = _run(capsys, "fit", "--model", "1", "--data", str(data),
                               "--seed", "3")
        assert code == 0
        rec = json.loads(stdout)
        assert len(rec["theta1_hat"]) == 2
        assert rec["loss_mean"] > 0

    def test_fit_heteroscedastic(self, tmp_path, capsys):
        data = tmp_path / "d3.csv"
        _run(capsys, "simulate", "--model", "3", "--T", "100", "--seed", "4",
             "--out", str(data))
        code, stdout, _ = _run(capsys, "fit", "--model", "3", "--data", str(data),
                               "--seed", "5")
        rec = json.loads(stdout)
        assert code == 0 and len(rec["theta2_hat"]) == 1


class TestPredict:
    def test_noiseless_linear_zero_width_qpi(self, tmp_path, capsys):
        data = _write_linear_csv(tmp_path / "lin.csv")
        model = _linear_model_yaml(tmp_path / "lin.yaml")
        code, stdout, _ = _run(capsys, "predict", "--model", str(model),
                               "--data", str(data), "--horizon", "3",
                               "--M", "50", "--seed", "6")
        assert code == 0
        rec = json.loads(stdout)
        assert rec["theta1_hat"] == [0.5]
        for h in ("1", "2", "3"):
            iv = rec["qpi"][h]
            assert iv["upper"] - iv["lower"] <= 1e-9
        assert rec["predictions"]["L2"]["2"] == pytest.approx(
            0.25 * 0.5 ** 40, rel=1e-6)

    def test_missing_file_is_io_error(self, capsys):
        code, stdout, stderr = _run(capsys, "predict", "--model", "4",
                                    "--data", "/nonexistent/file.csv",
                                    "--seed", "1")
        assert code == 5
        assert json.loads(stderr)["error"] == "io"

    def test_same_invocation_same_bytes(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        _run(capsys, "simulate", "--model", "4", "--T", "60", "--seed", "7",
             "--out", str(data))
        argv = ("predict", "--model", "4", "--data", str(data), "--horizon",
                "2", "--M", "200", "--seed", "8")
        _, out1, _ = _run(capsys, *argv)
        _, out2, _ = _run(capsys, *argv)
        assert out1 == out2

    def test_bad_model_id_is_parse_error(self, capsys):
        code, _, stderr = _run(capsys, "predict", "--model", "11", "--T", "30",
                               "--seed", "1")
        assert code == 2
        assert json.loads(stderr)["error"] == "parse"

    def test_residual_and_ensemble_dumps(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        _run(capsys, "simulate", "--model", "1", "--T", "40", "--seed", "15",
             "--out", str(data))
        res_out = tmp_path / "resid.csv"
        ens_out = tmp_path / "ens.csv"
        code, _, _ = _run(capsys, "predict", "--model", "1", "--data", str(data),
                          "--horizon", "2", "--M", "25", "--seed", "16",
                          "--residuals-out", str(res_out),
                          "--ensemble-out", str(ens_out))
        assert code == 0
        assert len(res_out.read_text().strip().split("\n")) == 41  # header + T
        ens = np.loadtxt(ens_out, delimiter=",")
        assert ens.shape == (25, 2)

    def test_order_flag_must_match_model(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        _run(capsys, "simulate", "--model", "1", "--T", "40", "--seed", "15",
             "--out", str(data))
        code, _, stderr = _run(capsys, "predict", "--model", "1", "--data",
                               str(data), "--order", "3", "--seed", "1")
        assert code == 2
        assert json.loads(stderr)["error"] == "parse"


class TestInterval:
    def test_ppi_record_and_roots_dump(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        _run(capsys, "simulate", "--model", "1", "--T", "50", "--seed", "10",
             "--out", str(data))
        roots = tmp_path / "roots.csv"
        code, stdout, _ = _run(capsys, "interval", "--model", "1", "--data",
                               str(data), "--horizon", "2", "--M", "80",
                               "--K", "40", "--seed", "11",
                               "--roots-out", str(roots))
        assert code == 0
        rec = json.loads(stdout)
        assert rec["lower"] <= rec["upper"]
        assert rec["method"] == "L2-PPI-f"
        dumped = roots.read_text().strip().split("\n")
        assert dumped[0] == "root" and len(dumped) == 41


class TestExperiment:
    def test_smoke_run_writes_table_and_manifest(self, tmp_path, capsys):
        out = tmp_path / "tab.csv"
        code, stdout, _ = _run(capsys, "experiment", "--model", "1", "--T", "50",
                               "--N", "2", "--M", "40", "--K", "10",
                               "--horizon", "2", "--methods", "SPI,L2-Sim,QPI-f",
                               "--seed", "12", "--out", str(out))
        assert code == 0
        text = out.read_text()
        assert text.startswith("method,horizon,")
        assert "SPI,1," in text and "QPI-f,2," in text
        manifest = json.loads((tmp_path / "tab.csv.manifest.json").read_text())
        assert manifest["config"]["master_seed"] == 12
        assert manifest["config"]["model"] == "1"
        assert manifest["n_effective"] == 2
        assert "SPI h=1:" in stdout

    def test_rerun_same_seed_identical_table(self, tmp_path, capsys):
        args = lambda p: ("experiment", "--model", "4", "--T", "40", "--N", "3",
                          "--M", "30", "--K", "8", "--horizon", "1",
                          "--methods", "SPI,L2-Sim", "--seed", "13",
                          "--out", str(p))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        _run(capsys, *args(a))
        _run(capsys, *args(b))
        assert a.read_bytes() == b.read_bytes()

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        cfg = tmp_path / "exp.yaml"
        cfg.write_text("model: '1'\nT: 40\nN: 2\nM: 30\nK: 8\nhorizon: 1\n"
                       "methods: SPI,L2-Sim\nseed: 14\n")
        out1, out2 = tmp_path / "c1.csv", tmp_path / "c2.csv"
        code, _, _ = _run(capsys, "--config", str(cfg), "experiment",
                          "--out", str(out1))
        assert code == 0
        manifest = json.loads((tmp_path / "c1.csv.manifest.json").read_text())
        assert manifest["config"]["T"] == 40
        assert manifest["config"]["N"] == 2
        assert manifest["config"]["M"] == 30
        assert manifest["config"]["master_seed"] == 14
        # a flag given on the command line beats the config value
        code, _, _ = _run(capsys, "--config", str(cfg), "experiment",
                          "--T", "30", "--out", str(out2))
        manifest2 = json.loads((tmp_path / "c2.csv.manifest.json").read_text())
        assert manifest2["config"]["T"] == 30

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("model: '1'\nT: 40\nbogus_key: 3\n")
        code, _, stderr = _run(capsys, "--config", str(cfg), "experiment",
                               "--out", str(tmp_path / "x.csv"))
        assert code == 2
        assert json.loads(stderr)["error"] == "parse"


class TestSeriesFileValidation:
    def test_too_short_series_rejected(self, tmp_path, capsys):
        f = tmp_path / "short.csv"
        f.write_text("x\n1.0\n2.0\n3.0\n")
        code, _, stderr = _run(capsys, "fit", "--model", "2", "--data", str(f),
                               "--seed", "1")
        assert code == 2
        assert json.loads(stderr)["error"] == "parse"

    def test_unparseable_cell_rejected(self, tmp_path, capsys):
        f = tmp_path / "bad.csv"
        f.write_text("x\n1.0\noops\n2.0\n")
        code, _, stderr = _run(capsys, "fit", "--model", "1", "--data", str(f),
                               "--seed", "1")
        assert code == 2
        assert json.loads(stderr)["error"] == "parse"
