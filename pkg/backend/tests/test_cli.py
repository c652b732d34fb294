import json

import numpy as np
import pandas as pd
import pytest

from chemoreduce.cli import main
from chemoreduce.experiments.config import parse_config
from chemoreduce.experiments.outputs import read_table
from chemoreduce.numerics.diagnostics import find_esd
from chemoreduce.numerics.model import Coefficients, reduce_kernel, write_coefficients_csv


@pytest.fixture(autouse=True)
def _serial(monkeypatch):
    monkeypatch.setenv("CHEMOREDUCE_THREADS", "1")
    monkeypatch.setenv("CHEMOREDUCE_PROGRESS", "false")


def test_reduce_writes_kernel(small_config, write_config, tmp_path, capsys):
    out = tmp_path / "kernel" / "c.csv"
    assert main(["reduce", "--config", str(write_config(small_config)), "--out", str(out)]) == 0
    kernel = read_table(out)
    assert kernel.shape == (41, 42)
    assert kernel.columns[0] == "x"
    matrix = kernel.iloc[:, 1:].to_numpy()
    np.testing.assert_array_equal(matrix, matrix.T)
    assert "PSD True" in capsys.readouterr().out


def test_run_writes_outputs(small_config, write_config, tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--config", str(write_config(small_config)), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert "timeseries_direct.csv" in manifest["artifacts"]


def test_invalid_config_exits_2(small_config, write_config):
    small_config["scales"]["epsilon"] = -1.0
    assert main(["run", "--config", str(write_config(small_config))]) == 2


def test_missing_config_exits_2(tmp_path):
    assert main(["reduce", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "c.csv")]) == 2


def test_unwritable_output_exits_4(small_config, write_config, tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    assert main(["run", "--config", str(write_config(small_config)), "--out", str(blocker / "out")]) == 4


def test_blow_up_exits_3(small_config, write_config, tmp_path, grid41, monkeypatch):
    monkeypatch.setenv("CHEMOREDUCE_MAX_HALVINGS", "0")
    explosive = Coefficients(
        grid_x=grid41,
        grid_y=grid41,
        a=np.full(41, 1000.0),
        m=np.ones(41),
        R_in=np.ones(41),
        K=np.zeros((41, 41)),
    )
    write_coefficients_csv(explosive, tmp_path / "px.csv", tmp_path / "py.csv", tmp_path / "k.csv")
    small_config["coefficients"] = {
        "kind": "csv",
        "profile_x": "px.csv",
        "profile_y": "py.csv",
        "kernel": "k.csv",
    }
    small_config["time"] = {"t_end": 1.0, "dt": 1.0, "sample_every": 1}
    assert main(["run", "--config", str(write_config(small_config))]) == 3


def _candidate_file(path, x, n):
    pd.DataFrame({"x": x, "n": n}).to_csv(path, index=False)
    return path


def test_verify_esd_accepts_a_solved_candidate(small_config, write_config, tmp_path, capsys):
    small_config["model"] = "direct"
    config_path = write_config(small_config)
    coeffs = parse_config(small_config).build_coefficients()
    esd = find_esd(coeffs, reduce_kernel(coeffs))
    candidate = _candidate_file(tmp_path / "esd.csv", coeffs.grid_x.nodes, esd.density)
    assert main(["verify-esd", "--config", str(config_path), "--candidate", str(candidate)]) == 0
    assert "direct" in capsys.readouterr().out


def test_verify_esd_rejects_the_empty_population(small_config, write_config, tmp_path):
    small_config["model"] = "direct"
    config_path = write_config(small_config)
    nodes = parse_config(small_config).grid_x.build().nodes
    candidate = _candidate_file(tmp_path / "zero.csv", nodes, np.zeros(41))
    assert main(["verify-esd", "--config", str(config_path), "--candidate", str(candidate)]) == 1


def test_verify_esd_checks_the_grid(small_config, write_config, tmp_path):
    config_path = write_config(small_config)
    candidate = _candidate_file(tmp_path / "bad.csv", np.linspace(0.0, 1.0, 41), np.ones(41))
    assert main(["verify-esd", "--config", str(config_path), "--candidate", str(candidate)]) == 2
