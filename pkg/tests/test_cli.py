import subprocess
import sys

import numpy as np
import pytest

from diffcut.cli import main
from diffcut.dynamics.simulator import read_trajectory_csv
from diffcut.inference import read_samples_csv

FAST = ["--dt", "1e-4", "--duration", "0.003", "--set", "young=1e5", "--set", "poisson=0.3", "--set", "initial_y=0.0102", "--set", "sdf_kd=100"]
FAST += ["--set", "young.lb=1e4", "--set", "sdf_kd.ub=1000"]


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    cfg = tmp_path / "cfgdir"
    cfg.mkdir()
    monkeypatch.setenv("DIFFCUT_CONFIG_DIR", str(cfg))
    monkeypatch.chdir(tmp_path)
    return tmp_path


def effective_block(text):
    lines = text.splitlines()
    start = lines.index("# effective config: diffcut simulate")
    end = lines.index("# end effective config")
    return "\n".join(lines[start + 1 : end]) + "\n"


def test_simulate_writes_trajectory_and_block_reproduces_it(workdir, capsys):
    assert main(["simulate", *FAST, "--out", "a.csv"]) == 0
    block = effective_block(capsys.readouterr().out)
    traj = read_trajectory_csv("a.csv")
    assert len(traj) == 30
    assert np.any(traj.fnorm > 0)
    (workdir / "eff.cfg").write_text(block.replace("cli.out = a.csv", "cli.out = b.csv"))
    assert main(["simulate", "--config", "eff.cfg"]) == 0
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()


def test_zero_duration_writes_header_only(workdir):
    assert main(["simulate", *FAST, "--duration", "0", "--out", "z.csv"]) == 0
    assert (workdir / "z.csv").read_text() == "t,fx,fy,fz,fnorm,knife_y,knife_z\n"


def test_config_precedence(workdir, capsys):
    (workdir / "cfgdir" / "default.cfg").write_text("duration = 0.002\nsdf_ke = 1500\n")
    (workdir / "user.cfg").write_text("sdf_ke = 2500\n")
    assert main(["simulate", *FAST[:2], "--config", "user.cfg", "--set", "young=1e5", "--set", "young.lb=1e4", "--set", "initial_y=0.0102", "--out", "p.csv"]) == 0
    out = capsys.readouterr().out
    assert "duration = 0.002" in out
    assert "sdf_ke = 2500" in out
    assert len(read_trajectory_csv("p.csv")) == 20


def test_unknown_key_and_flag_are_usage_errors(capsys):
    assert main(["simulate", *FAST, "--set", "bogus=1"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--no-such-flag"])
    assert exc.value.code == 2


def test_corrupt_and_missing_mesh_files(workdir, capsys):
    (workdir / "bad.tet").write_text("v 0 0 0\nt 0 1 2 3\n")
    assert main(["simulate", *FAST, "--mesh", "bad.tet", "--cut-x", "0.5"]) == 2
    assert main(["simulate", *FAST, "--mesh", "missing.tet", "--cut-x", "0.5"]) == 2
    assert "error" in capsys.readouterr().err


def test_numerical_failure_exit_code(capsys):
    # apple stiffness at a coarse step is unstable
    args = ["simulate", "--dt", "1e-3", "--duration", "0.2", "--set", "initial_y=0.0102", "--out", "x.csv"]
    assert main(args) == 1
    assert "numerical failure" in capsys.readouterr().err


def test_make_mesh_and_preprocess_are_deterministic(workdir):
    assert main(["make-mesh", "--cells", "4", "2", "2", "--size", "0.04", "0.01", "0.01", "--out", "m.tet"]) == 0
    for name in ("c1.cache", "c2.cache"):
        assert main(["preprocess", "--mesh", "m.tet", "--cut-x", "0.016", "--out", name]) == 0
    assert (workdir / "c1.cache").read_bytes() == (workdir / "c2.cache").read_bytes()
    assert main(["preprocess", "--mesh", "m.tet", "--cut-x", "0.01"]) == 2  # an edge lies in the plane
    assert main(["simulate", *FAST, "--mesh", "c1.cache", "--out", "c.csv"]) == 0


def test_gradcheck_passes_on_toy(workdir, capsys):
    assert main(["gradcheck", *FAST, "--wrt", "sdf_ke", "velocity_y", "--out", "g.csv"]) == 0
    rows = (workdir / "g.csv").read_text().splitlines()
    assert len(rows) == 3


def test_calibrate_posterior_and_transfer(workdir, capsys):
    assert main(["simulate", *FAST, "--out", "ref.csv"]) == 0
    assert main(["calibrate", *FAST, "--ref", "ref.csv", "--iters", "3", "--set", "sdf_ke=2000", "--out", "cal.cfg"]) == 0
    assert "sdf_ke" in (workdir / "cal.cfg").read_text()
    args = ["posterior", *FAST, "--ref", "ref.csv", "--iters", "4", "--burn-in", "1", "--chains", "2", "--temperature", "0.01", "--out", "s.csv"]
    assert main(args) == 0
    labels, samples = read_samples_csv("s.csv")
    assert labels == ["sdf_ke", "cut_spring_ke"]
    assert sorted({s.chain for s in samples}) == [0, 1]
    assert len(samples) == 6
    (workdir / "src.cfg").write_text("cut_spring_ke = 300\ncut_spring_ke.mode = individual\n")
    assert main(["transfer", "--source", "toy", "--source-params", "src.cfg", "--target", "toy", "--out", "t.cfg"]) == 0
    text = (workdir / "t.cfg").read_text()
    assert "cut_spring_ke.mode = individual" in text
    values = [float(v) for v in text.splitlines()[0].split("=")[1].split(",")]
    np.testing.assert_allclose(values, 300.0, rtol=1e-14)


def test_optimize_motion_runs(workdir):
    args = ["optimize-motion", *FAST, "--iters", "2", "--keyframes", "3", "--out", "m.cfg"]
    assert main(args) == 0
    assert (workdir / "m.cfg").read_text().startswith("motion.times =")
    assert (workdir / "knife_path.csv").read_text().startswith("t,y,z\n")


def test_console_script_entry_point(workdir):
    out = subprocess.run([sys.executable, "-m", "diffcut.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "optimize-motion" in out.stdout
