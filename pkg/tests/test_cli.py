import json
import subprocess
import sys

import pytest

from holo_crlb import cli, harness
from holo_crlb.scene import SystemConfig, dump_config_toml


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "desk.toml"
    cfg = SystemConfig.desk(max_outer_iters=1, updates_per_subproblem=3, n_roi_samples=4)
    path.write_text(dump_config_toml(cfg))
    return path


def run(*args):
    return cli.main([str(a) for a in args])


def test_gradcheck_exit_codes(config_file, tmp_path, monkeypatch):
    assert run("gradcheck", "--config", config_file, "--out", tmp_path, "--seed", 3) == 0
    monkeypatch.setattr(harness, "GRADCHECK_TOL", 1e-30)
    assert run("gradcheck", "--config", config_file, "--out", tmp_path, "--seed", 3) == 1


def test_optimize_method_and_band(config_file, tmp_path):
    code = run("optimize", "--config", config_file, "--out", tmp_path, "--method", "random",
               "--band", 1, "--eval-samples", 8)
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["methods"][0]["method"] == "random"
    assert rep["evaluation"]["capacity_loss_band"] == 1


def test_error_exit_codes(config_file, tmp_path):
    assert run("optimize", "--config", tmp_path / "missing.toml", "--out", tmp_path / "o") == \
        cli.EXIT_CONFIG
    assert not (tmp_path / "o").exists()
    assert run("optimize", "--config", config_file, "--out", tmp_path, "--band", 9) == \
        cli.EXIT_USAGE
    bad = tmp_path / "bad.toml"
    bad.write_text("[system]\nn_elements = 5\n")
    assert run("evaluate", "--config", bad, "--out", tmp_path) == cli.EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        run("optimize", "--config", config_file, "--out", tmp_path, "--method", "sgd")
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        run("optimize", "--config", config_file, "--out", tmp_path, "--seed", -1)


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "holo_crlb.cli", "--help"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    for name in harness.COMMANDS:
        assert name in proc.stdout
