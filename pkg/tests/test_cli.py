import json

import numpy as np
import pytest

from coloredshe import cli
from coloredshe.exceptions import NumericError
from coloredshe.io import SMALLBALL_COLUMNS, read_csv, write_csv


def files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_unknown_flag(capsys):
    assert cli.run(["kernel-check", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand():
    assert cli.run([]) == 2


def test_kernel_check_prints_pass(tmp_path, capsys):
    assert cli.run(["kernel-check", "--gamma", "0.5", "--modes", "1024", "--out", str(tmp_path), "--check"]) == 0
    out = capsys.readouterr().out
    assert "PASS dual_series" in out
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["schema"] == 1 and summary["passed"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "kernel-check" and manifest["config"]["modes"] == 1024
    assert "version" in manifest


def test_bad_gamma_is_config_error(tmp_path):
    assert cli.run(["kernel-check", "--gamma", "1.5", "--out", str(tmp_path)]) == 2


def test_numeric_failure_exit(tmp_path, monkeypatch):
    def boom(args, out):
        raise NumericError("blew up")
    monkeypatch.setitem(cli.COMMANDS, "eta", boom)
    assert cli.run(["eta", "--out", str(tmp_path)]) == 3


def test_smallball_determinism(tmp_path):
    argv = ["smallball", "--gamma", "0.5", "--eps", "0.35", "--T", "1", "--trials", "800", "--seed", "7"]
    assert cli.run(argv + ["--out", str(tmp_path / "a")]) == 0
    assert cli.run(argv + ["--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")
    rows = read_csv(tmp_path / "a" / "smallball.csv")
    assert list(rows[0]) == SMALLBALL_COLUMNS and float(rows[0]["p_hat"]) > 0


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# eta sweep\neps = 0.5\nC0 = 1e-4, 1e-2, 1\nmodes = 256\n")
    assert cli.run(["eta", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["config"]["eps"] == [0.5] and manifest["config"]["modes"] == 256
    assert cli.run(["eta", "--config", str(cfg), "--modes", "128", "--out", str(tmp_path / "p")]) == 0
    manifest = json.loads((tmp_path / "p" / "manifest.json").read_text())
    assert manifest["config"]["modes"] == 128
    # the written config.txt reproduces the run
    assert cli.run(["eta", "--config", str(tmp_path / "p" / "config.txt"), "--out", str(tmp_path / "q")]) == 0
    assert files(tmp_path / "p") == files(tmp_path / "q")


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("flux = 3\n")
    assert cli.run(["eta", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_exponent_fit_from_table(tmp_path, capsys):
    eps = [0.35, 0.3, 0.25, 0.2]
    rows = [dict(epsilon=e, T=1.0, p_hat=float(np.exp(-e ** (-10 / 3))), log_p_hat=-e ** (-10 / 3)) for e in eps]
    table = tmp_path / "results.csv"
    write_csv(table, rows, ["epsilon", "T", "p_hat", "log_p_hat"])
    assert cli.run(["exponent-fit", "--gamma", "0.5", "--in", str(table), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["theta_hat"] == pytest.approx(10 / 3)
    assert summary["bracket"] == pytest.approx([10 / 3, 20 / 3])


def test_failed_check_exit_code(tmp_path):
    eps = [0.35, 0.3, 0.25, 0.2]
    rows = [dict(epsilon=e, T=1.0, log_p_hat=-e**-1.0) for e in eps]
    table = tmp_path / "results.csv"
    write_csv(table, rows, ["epsilon", "T", "log_p_hat"])
    argv = ["exponent-fit", "--in", str(table), "--out", str(tmp_path / "o")]
    assert cli.run(argv) == 0
    assert cli.run(argv + ["--check"]) == 4


def test_missing_input_file(tmp_path):
    assert cli.run(["exponent-fit", "--in", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2


def test_simulate_and_factorize(tmp_path):
    assert cli.run(["simulate", "--trials", "2000", "--modes", "64", "--dx", "0.125", "--dt", "1e-4",
                    "--dump-path", "--out", str(tmp_path / "s"), "--check"]) == 0
    assert (tmp_path / "s" / "path.csv").exists()
    assert cli.run(["simulate", "--method", "fd", "--trials", "2000", "--modes", "64", "--dx", "0.125",
                    "--dt", "1e-4", "--out", str(tmp_path / "f"), "--check"]) == 0
    assert cli.run(["factorize", "--out", str(tmp_path / "z"), "--check"]) == 0
    assert len(read_csv(tmp_path / "z" / "factorization.csv")) == 5


def test_bad_method(tmp_path):
    assert cli.run(["smallball", "--method", "guess", "--out", str(tmp_path)]) == 2
