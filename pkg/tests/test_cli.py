import json
import subprocess
import sys

import pytest

from su2kam import __version__
from su2kam.cli import check_schema, main
from su2kam.config import load

SMALL = """\
eps = 1e-3
gamma = 1e-2
M_max = 8
lambda_grid_size = 6
sieve_grid_size = 200
sieve_M_max = 30
sieve_L_max = 4
stability_M_max = 6
stability_t_end_per_inverse_eps = 1.0
output_dir = "{out}"
"""


@pytest.fixture(scope="module")
def cfg_path(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    p = d / "small.toml"
    p.write_text(SMALL.format(out=d / "runs"))
    return p


@pytest.fixture(scope="module")
def reduced(cfg_path):
    assert main(["reduce", str(cfg_path)]) == 0
    return load(cfg_path).run_dir()


def test_reduce_artifacts(reduced):
    assert check_schema(reduced) == []
    man = json.loads((reduced / "manifest.json").read_text())
    assert man["version"] == __version__
    assert man["hash"] == reduced.name
    for name in ("acceptance.csv", "residuals.csv", "eigenvalues.csv"):
        assert (reduced / name).read_text().startswith(f"# manifest {reduced.name}\n")
    assert "acceptance_rate" in (reduced / "summary.txt").read_text()


def test_rerun_is_byte_identical(cfg_path, reduced):
    before = {p.name: p.read_bytes() for p in reduced.iterdir()}
    assert main(["reduce", str(cfg_path)]) == 0
    after = {p.name: p.read_bytes() for p in reduced.iterdir()}
    for name, blob in before.items():
        assert after[name] == blob, name


def test_sieve_and_stability(cfg_path, reduced, capsys):
    assert main(["sieve", str(cfg_path)]) == 0
    assert "audit clean" in capsys.readouterr().out
    assert (reduced / "sieve.csv").read_text().splitlines()[1] == "gamma,fraction"
    assert main(["stability", str(cfg_path)]) == 0
    assert "flow comparison ok" in capsys.readouterr().out
    assert (reduced / "band.csv").exists() and (reduced / "norms.csv").exists()


def test_verify_and_mutation(cfg_path, reduced, capsys):
    assert main(["verify", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS reduction" in out
    assert main(["verify", "--mutate", str(cfg_path)]) == 1
    out = capsys.readouterr().out
    line = next(ln for ln in out.splitlines() if " reduction " in ln)
    assert line.startswith("FAIL") and "at h=" in line


def test_missing_artifacts(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text(SMALL.format(out=tmp_path / "elsewhere"))
    assert main(["stability", str(p)]) == 3
    assert "run `su2kam reduce" in capsys.readouterr().err
    assert main(["sieve", str(p)]) == 3


def test_config_errors(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("eps = 1e-3\ntau = 1.0\n")
    assert main(["reduce", str(p)]) == 2
    assert capsys.readouterr().err.startswith(f"{p}:2: tau:")
    assert main(["reduce", str(tmp_path / "nope.toml")]) == 2


def test_entry_point_version():
    out = subprocess.run([sys.executable, "-m", "su2kam.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
