import subprocess
import sys

import pytest

from posefusion import cli
from posefusion.harness import SUMMARY_HEADER

SMALL = ["--res", "20x30", "--spp", "2"]


def test_help_lists_subcommands():
    out = subprocess.run([sys.executable, "-m", "posefusion.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("render", "lidar", "detect", "optimize", "experiment"):
        assert cmd in out.stdout


def test_render(tmp_path, capsys):
    out = tmp_path / "t.ppm"
    assert cli.main(["render", *SMALL, "--out", str(out)]) == 0
    assert out.read_bytes().startswith(b"P6\n30 20\n255\n")
    assert (tmp_path / "t.pdif").exists()


def test_lidar_then_detect(tmp_path, capsys):
    cloud = tmp_path / "c.txt"
    assert cli.main(["lidar", "--res", "60x90", "--spp", "2", "--out", str(cloud)]) == 0
    capsys.readouterr()
    assert cli.main(["detect", "--cloud", str(cloud)]) == 0
    fields = capsys.readouterr().out.split()
    assert len(fields) == 11
    assert abs(float(fields[0]) - 5.0) < 0.5


def test_optimize_and_experiment(tmp_path, capsys):
    assert cli.main(["optimize", *SMALL, "--iters", "3", "--mode", "joint", "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == SUMMARY_HEADER and out[1].startswith("joint,")
    assert (tmp_path / "o" / "trajectory_joint.csv").exists()
    assert cli.main(["experiment", *SMALL, "--iters", "3", "--mode", "joint", "two_stage",
                     "--out", str(tmp_path / "e")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert [line.split(",")[0] for line in out[1:3]] == ["joint", "two_stage"]


def test_config_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["render", "--res", "20by30"])
    assert err.value.code == 2
    assert cli.main(["render", *SMALL, "--scene", str(tmp_path / "missing.toml")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("background = [1, 1]\n")
    assert cli.main(["render", *SMALL, "--scene", str(bad)]) == 2
    assert cli.main(["optimize", *SMALL, "--iters", "0"]) == 2
    assert cli.main(["experiment", *SMALL, "--lr", "-1"]) == 2


def test_no_object_exit_3(tmp_path, capsys):
    cloud = tmp_path / "few.txt"
    cloud.write_text("0 0 0\n1 1 1\n")
    assert cli.main(["detect", "--cloud", str(cloud)]) == 3
    assert cli.main(["detect", "--cloud", str(tmp_path / "few.txt"), "--min-points", "1"]) == 0
    assert cli.main(["experiment", *SMALL, "--target", "8,500,14"]) == 3


def test_numerical_failure_exit_4(monkeypatch, capsys):
    import posefusion.optimizer as opt
    from posefusion.render import NonFiniteGradientError

    def boom(state, grad, lr):
        raise NonFiniteGradientError("forced")

    monkeypatch.setattr(opt, "adam_step", boom)
    assert cli.main(["optimize", *SMALL, "--iters", "2"]) == 4
    assert cli.main(["experiment", *SMALL, "--iters", "2", "--mode", "joint"]) == 4
    assert "numerical failure" in capsys.readouterr().err
