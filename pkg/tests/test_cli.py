"""
Tests for run configuration and the command-line interface
"""

import json

import numpy as np
import pandas as pd
import pytest

from app.cli import main
from app.config import RunConfig, load_config, parse_config
from app.errors import ConfigError

ONED_RUN = """\
[mesh]
nx = 16
nz1 = 8
nz2 = 8

[boundary]
mode = "oneD"
"""

SMALL_RUN = """\
[physical]
V = {V}

[mesh]
nx = 8
nz1 = 4
nz2 = 4
"""


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ("MEMS_OUTPUT_DIR", "MEMS_LOG_LEVEL", "MEMS_SERIAL"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def write_config(tmp_path):
    def _write(text, name="run.toml"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)
    return _write


def _run(command, config_path, out_dir, *extra):
    return main([command, "--config", config_path, "--out", str(out_dir), *extra])


class TestConfig:
    """Test cases for TOML run files"""

    def test_defaults(self):
        """Without a file every section takes its defaults"""
        config = load_config()
        assert config.mesh.nx == 64
        assert config.physical.V == 1.0
        assert config.output.dir == "results"

    def test_unknown_key_line(self):
        """Unknown keys are reported with their line number"""
        with pytest.raises(ConfigError) as excinfo:
            parse_config("[physical]\nL = 1.0\nvoltage = 2.0\n")
        assert excinfo.value.line == 3
        assert str(excinfo.value).startswith("line 3:")

    def test_unknown_section(self):
        """Unknown sections are rejected"""
        with pytest.raises(ConfigError) as excinfo:
            parse_config("[mesh]\nnx = 8\n\n[meshes]\nnx = 4\n")
        assert excinfo.value.line == 4

    def test_malformed_toml(self):
        """Syntax errors carry the parser's line"""
        with pytest.raises(ConfigError) as excinfo:
            parse_config("[physical]\nL = \n")
        assert excinfo.value.line == 2

    def test_invalid_value(self):
        """Invalid values point at their key"""
        with pytest.raises(ConfigError) as excinfo:
            parse_config("[deflection]\nshape = \"cosine\"\nsource = \"spline\"\n")
        assert excinfo.value.line == 3

    def test_invalid_physical_value(self):
        """Physical constants are validated"""
        with pytest.raises(ConfigError) as excinfo:
            parse_config("[physical]\nH = -1.0\n")
        assert excinfo.value.line == 1

    def test_integers_become_floats(self):
        """Integer literals are accepted for float options"""
        config = parse_config("[physical]\nV = 2\n[minimize]\ninitial_step = 1\n")
        assert config.physical.V == 2.0
        assert isinstance(config.minimize.initial_step, float)

    def test_environment_overrides(self, monkeypatch, tmp_path):
        """Environment variables override the file"""
        monkeypatch.setenv("MEMS_OUTPUT_DIR", str(tmp_path))
        monkeypatch.setenv("MEMS_SERIAL", "1")
        config = load_config()
        assert config.output.dir == str(tmp_path)
        assert config.run.serial

    def test_hash_ignores_output(self):
        """Output location and logging do not change the provenance hash; the seed does"""
        base = RunConfig()
        assert base.with_overrides(out_dir="elsewhere", log_level="DEBUG").config_hash == base.config_hash
        assert base.with_overrides(seed=3).config_hash != base.config_hash

    def test_missing_file(self, tmp_path):
        """Unreadable files are configuration errors"""
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.toml")


class TestCommands:
    """Test cases for the subcommands"""

    def test_solve_oned(self, write_config, tmp_path):
        """Solve writes the grid, traces and an energy summary with provenance"""
        out = tmp_path / "solve"
        assert _run("solve", write_config(ONED_RUN), out) == 0
        summary = json.loads((out / "energy.json").read_text())
        assert summary["E_e"] == pytest.approx(-2.0 / 3.0, abs=1e-3)
        assert len(summary["config_hash"]) == 64
        assert (out / "traces.csv").read_text().startswith(f"# config_hash: {summary['config_hash']}")
        grid_lines = (out / "potential.grid").read_text().splitlines()
        assert grid_lines[1] == "nx 17 nz 17"
        assert len(grid_lines) == 3 + 17

    def test_force_oned(self, write_config, tmp_path):
        """Force density of the flat device is 2/9"""
        out = tmp_path / "force"
        assert _run("force", write_config(ONED_RUN), out) == 0
        frame = pd.read_csv(out / "force.csv", comment="#")
        np.testing.assert_allclose(frame["g"], 2.0 / 9.0, atol=1e-8)

    def test_energy_report(self, write_config, tmp_path):
        """Energy command writes the comprehensive analysis"""
        out = tmp_path / "energy"
        text = SMALL_RUN.format(V=1.0) + '\n[deflection]\nsource = "catalogue"\nshape = "cosine"\namplitude = -0.1\n'
        assert _run("energy", write_config(text), out) == 0
        analysis = json.loads((out / "energy.json").read_text())
        assert analysis["energy"]["E_e"] < 0.0
        assert analysis["energy"]["E_m"] > 0.0

    def test_minimize_unloaded(self, write_config, tmp_path):
        """Minimization at V = 0 converges immediately and writes its artifacts"""
        out = tmp_path / "minimize"
        assert _run("minimize", write_config(SMALL_RUN.format(V=0.0)), out) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["converged"] is True
        assert (out / "iterations.csv").exists()
        assert (out / "deflection.txt").read_text().startswith("# L=1.0")

    def test_minimize_needs_model_boundary(self, write_config, tmp_path):
        """oneD boundary data cannot drive the minimizer"""
        assert _run("minimize", write_config(ONED_RUN), tmp_path / "bad") == 2

    def test_sweep(self, write_config, tmp_path):
        """Sweep writes one row per voltage with warm starts"""
        out = tmp_path / "sweep"
        text = SMALL_RUN.format(V=0.0) + "\n[sweep]\nvoltages = [0.0, 0.1]\n"
        assert _run("sweep", write_config(text), out) == 0
        frame = pd.read_csv(out / "sweep.csv", comment="#")
        assert list(frame["V"]) == [0.0, 0.1]
        assert frame["min_u"][1] < frame["min_u"][0] == 0.0
        assert json.loads((out / "sweep.json").read_text())["all_converged"] is True

    def test_empty_verify(self, write_config, tmp_path):
        """No selected probes passes trivially"""
        out = tmp_path / "verify"
        assert _run("verify", write_config("[verify]\nprobes = []\n"), out) == 0
        assert json.loads((out / "verify.json").read_text())["passed"] is True

    def test_coarse_derivative_verify(self, write_config, tmp_path):
        """Derivative probe below the minimum resolution fails the run"""
        out = tmp_path / "verify"
        text = '[verify]\nprobes = ["derivative"]\nnx = 8\nnz1 = 4\nnz2 = 4\ndirections = ["quartic"]\n'
        assert _run("verify", write_config(text), out) == 1
        report = json.loads((out / "derivative.json").read_text())
        assert report["passed"] is False
        assert report["summary"]["reasons"] == ["mesh below minimum resolution"]

    def test_malformed_config_exit_code(self, write_config, tmp_path):
        """Configuration errors exit with status 2"""
        assert _run("solve", write_config("[mesh]\nnx = \n"), tmp_path / "bad") == 2
        assert _run("solve", write_config("[mesh]\nnx = 0\n", "zero.toml"), tmp_path / "bad") == 2

    def test_repeat_runs_identical(self, write_config, tmp_path):
        """Same configuration, byte-identical artifacts"""
        path = write_config(ONED_RUN)
        assert _run("solve", path, tmp_path / "first") == 0
        assert _run("solve", path, tmp_path / "second") == 0
        for name in ("energy.json", "traces.csv", "potential.grid"):
            assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()
