import json
from pathlib import Path

import numpy as np
import pytest

from spectral_lan.cli import COMMANDS, main
from spectral_lan.config import load_config
from spectral_lan.errors import ConfigError

DATA = Path(__file__).parent / "data"


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def help_text(argv, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    with pytest.raises(SystemExit) as ex:
        main(argv)
    assert ex.value.code == 0
    return capsys.readouterr().out


def test_help_golden(capsys, monkeypatch):
    got = help_text(["--help"], capsys, monkeypatch)
    got += help_text(["lan-verify", "--help"], capsys, monkeypatch)
    assert got == (DATA / "help.txt").read_text()
    for name in COMMANDS:
        assert name in got
    for flag in ("--config", "--out", "--seed", "--set", "--workers"):
        assert flag in got


class TestConfig:
    def test_unknown_key(self, tmp_path):
        path = write(tmp_path, "[model]\nlayout = fgn\nthetta = 1,0.7\n")
        with pytest.raises(ConfigError, match="model.thetta"):
            load_config(path)

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ConfigError, match="modle"):
            load_config(write(tmp_path, "[modle]\nlayout = fgn\n"))

    def test_override(self):
        cfg = load_config(None, ["model.theta=1,0.7", "experiment.t_grid=0,0;1,0"])
        assert cfg.get("model", "theta") == (1.0, 0.7)
        assert cfg.get("experiment", "t_grid") == ((0.0, 0.0), (1.0, 0.0))

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            load_config(None, ["simulate.n=many"])


def test_misspelled_key_exit_code(tmp_path, capsys):
    path = write(tmp_path, "[model]\nlayout = white\ntheta = 1\n[simulate]\nnn = 16\n")
    assert main(["simulate", "--config", path, "--out", str(tmp_path)]) == 2
    assert "simulate.nn" in capsys.readouterr().err


def test_simulate_deterministic(tmp_path):
    path = write(tmp_path, "[model]\nlayout = white\ntheta = 1\n[simulate]\nn = 16\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", path, "--seed", "7", "--out", str(a)]) == 0
    assert main(["simulate", "--config", path, "--seed", "7", "--out", str(b)]) == 0
    text = (a / "path.csv").read_bytes()
    assert text == (b / "path.csv").read_bytes()
    assert len(text.decode().splitlines()) == 17
    assert json.loads((a / "path.json").read_text())["seed"] == 7
    assert not [p for p in a.iterdir() if p.name.endswith(".tmp")]


def test_seed_flag_overrides_config(tmp_path):
    path = write(tmp_path, "[model]\nlayout = white\ntheta = 1\n[simulate]\nn = 4\n"
                           "[run]\nseed = 1\n")
    main(["simulate", "--config", path, "--seed", "9", "--out", str(tmp_path)])
    assert json.loads((tmp_path / "path.json").read_text())["seed"] == 9


def test_fisher_arfima(tmp_path, capsys):
    path = write(tmp_path, "[model]\nlayout = arfima\ntheta = 1, 0.3\n")
    assert main(["fisher", "--config", path, "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "fisher.json").read_text())
    assert abs(doc["matrix"][1][1] - 1.64493) <= 1e-4
    # 17 significant digits in the file
    assert "1.6449340668" in (tmp_path / "fisher.json").read_text()


def test_loglik_and_score(tmp_path):
    x = np.random.default_rng(0).standard_normal(32)
    data = tmp_path / "x.csv"
    data.write_text("index,value\n" + "".join(f"{i + 1},{float(v)!r}\n" for i, v in enumerate(x)))
    path = write(tmp_path, f"[model]\nlayout = fgn\ntheta = 1, 0.7\n[data]\npath = {data}\n"
                           "[loglik]\ntheta1 = 1, 0.72\n")
    assert main(["loglik", "--config", path, "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "loglik.json").read_text())
    from spectral_lan.likelihood import log_density, log_likelihood_ratio
    from spectral_lan.spectral_models import FractionalGaussianNoise
    m = FractionalGaussianNoise()
    assert doc["log_density"] == pytest.approx(log_density(x, m, (1, 0.7)), rel=1e-15)
    assert doc["log_likelihood_ratio"] == pytest.approx(
        log_likelihood_ratio(x, m, (1, 0.72), (1, 0.7)), rel=1e-14)
    assert main(["score", "--config", path, "--out", str(tmp_path)]) == 0
    assert len(json.loads((tmp_path / "score.json").read_text())["score"]) == 2


def test_lan_verify_zero_grid(tmp_path, capsys):
    path = write(tmp_path, "[model]\nlayout = fgn\ntheta = 1, 0.7\n[experiment]\n"
                           "n_ladder = 32, 64\nreplications = 20\nt_grid = 0, 0\n"
                           "statistics = remainder\n")
    assert main(["lan-verify", "--config", path, "--out", str(tmp_path), "--workers", "2"]) == 0
    doc = json.loads((tmp_path / "lan_report.json").read_text())
    assert all(r["remainder"]["median"] == 0.0 for r in doc["per_n"])
    out = capsys.readouterr().out
    assert "PASS remainder_trend" in out
    assert (tmp_path / "lan_summary.csv").exists()


def test_gate_failure_exit_code(tmp_path):
    path = write(tmp_path, "[model]\nlayout = fgn\ntheta = 1, 0.7\n[trace_limit]\n"
                           "g = 1\np = 2\nn_ladder = 16, 32\n[gates]\n"
                           "trace_max_deviation = 1e-12\n")
    assert main(["trace-limit", "--config", path, "--out", str(tmp_path)]) == 1


def test_norm_bound_and_check_bounds(tmp_path):
    path = write(tmp_path, "[f_model]\nlayout = fgn\ntheta = 1, 0.8\n[g_model]\n"
                           "layout = fgn\ntheta = 1, 0.6\n[bounds]\nn_ladder = 32, 64\n"
                           "x_count = 40\n[model]\nlayout = arfima\np = 1\n"
                           "theta = 1, 0.3, 0.5\n")
    assert main(["norm-bound", "--config", path, "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "norm_bound.json").read_text())["passed"]
    assert main(["check-bounds", "--config", path, "--out", str(tmp_path)]) == 0


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    from spectral_lan import likelihood
    from spectral_lan.errors import NotPositiveDefiniteError

    def boom(*a, **k):
        raise NotPositiveDefiniteError(3)

    monkeypatch.setattr(likelihood, "fisher_information", boom)
    path = write(tmp_path, "[model]\nlayout = arfima\ntheta = 1, 0.3\n")
    assert main(["fisher", "--config", path, "--out", str(tmp_path)]) == 3


def test_invalid_theta_is_config_error(tmp_path):
    path = write(tmp_path, "[model]\nlayout = fgn\ntheta = 1, 1.5\n")
    assert main(["fisher", "--config", path, "--out", str(tmp_path)]) == 2
