import json
import os

import numpy as np
import pytest

from bigdiff import attractors as at
from bigdiff import cli
from bigdiff import rates as rt
from bigdiff.config import ConfigError, DEFAULTS, default_config, load_config


def write(path, text):
    path.write_text(text)
    return str(path)


SMALL = """
[domain]
modes = 16

[sweep]
d_eps = 1,2,4,8
"""


class TestConfig:
    def test_defaults_load_without_file(self):
        cfg = load_config(None)
        assert cfg.data == DEFAULTS
        assert cfg.get("domain", "modes") == 128
        assert cfg.get("run", "seed") == 1234

    def test_partial_override(self, tmp_path):
        cfg = load_config(write(tmp_path / "a.ini", SMALL))
        assert cfg.get("domain", "modes") == 16
        assert cfg.get("domain", "components") == 1  # untouched default
        assert cfg.get("sweep", "d_eps") == (1.0, 2.0, 4.0, 8.0)

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown key 'moodes'"):
            load_config(write(tmp_path / "a.ini", "[domain]\nmoodes = 4\n"))

    def test_unknown_section_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown section"):
            load_config(write(tmp_path / "a.ini", "[domian]\nmodes = 4\n"))

    def test_bad_value_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match=r"\[domain\] modes"):
            load_config(write(tmp_path / "a.ini", "[domain]\nmodes = many\n"))

    def test_bad_scheme_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="scheme"):
            load_config(write(tmp_path / "a.ini", "[dynamics]\nscheme = rk4\n"))

    def test_non_increasing_sweep_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="increasing"):
            load_config(write(tmp_path / "a.ini", "[sweep]\nd_eps = 1,2,2,4\n"))

    def test_empty_value_means_default(self, tmp_path):
        cfg = load_config(write(tmp_path / "a.ini", "[diffusion]\nm0 =\n"))
        assert cfg.get("diffusion", "m0") is None

    def test_bool_parsing(self, tmp_path):
        cfg = load_config(write(tmp_path / "a.ini", "[run]\nquiet = true\n"))
        assert cfg.get("run", "quiet") is True
        with pytest.raises(ConfigError):
            load_config(write(tmp_path / "b.ini", "[run]\nquiet = maybe\n"))

    def test_round_trip(self, tmp_path):
        cfg = load_config(write(tmp_path / "a.ini", SMALL))
        cfg.write(tmp_path / "resolved.ini")
        again = load_config(tmp_path / "resolved.ini")
        assert again.data == cfg.data

    def test_inline_comments(self, tmp_path):
        cfg = load_config(write(tmp_path / "a.ini", "[domain]\nmodes = 32  # coarse\n"))
        assert cfg.get("domain", "modes") == 32

    def test_derived_objects(self):
        cfg = default_config()
        cfg.data["domain"]["components"] = 2
        cfg.data["nonlinearity"]["name"] = "coupled_tanh"
        E = cfg.diffusion_spec()
        assert E.components == 2  # single eps broadcast to n components
        F = cfg.nonlinearity()
        assert F.name == "coupled_tanh"

    def test_missing_file_is_config_error(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/path.ini")


class TestExitCodes:
    def test_pass_is_zero(self, tmp_path):
        cfg = write(tmp_path / "a.ini", SMALL)
        assert cli.main(["resolvent-rate", "-c", cfg, "--quiet",
                         "--out-root", str(tmp_path / "runs")]) == 0

    def test_quantitative_failure_is_one(self, tmp_path):
        strict = SMALL + "\n[tolerances]\nslope = 1e-9\n"
        cfg = write(tmp_path / "a.ini", strict)
        assert cli.main(["resolvent-rate", "-c", cfg, "--quiet",
                         "--out-root", str(tmp_path / "runs")]) == 1

    def test_malformed_config_is_two(self, tmp_path):
        cfg = write(tmp_path / "a.ini", "[domain]\nmodes = nonsense\n")
        assert cli.main(["eigs", "-c", cfg, "--quiet",
                         "--out-root", str(tmp_path / "runs")]) == 2

    def test_usage_error_is_two(self, capsys):
        assert cli.main(["report"]) == 2
        capsys.readouterr()

    def test_runtime_failure_is_three(self, tmp_path):
        blow = """
[domain]
modes = 8

[sweep]
d_eps = 1,2,4,8

[nonlinearity]
name = linear
c = 40.0
"""
        cfg = write(tmp_path / "a.ini", blow)
        assert cli.main(["decay", "-c", cfg, "--quiet",
                         "--out-root", str(tmp_path / "runs")]) == 3

    def test_unknown_command_is_two(self, capsys):
        assert cli.main(["frobnicate"]) == 2
        capsys.readouterr()


class TestVerdicts:
    def test_verdict_line_greppable(self, tmp_path, capsys):
        cfg = write(tmp_path / "a.ini", SMALL)
        code = cli.main(["resolvent-rate", "-c", cfg,
                         "--out-root", str(tmp_path / "runs")])
        out = capsys.readouterr().out
        verdict_lines = [l for l in out.splitlines() if l.startswith("VERDICT: ")]
        assert code == 0 and len(verdict_lines) == 1
        assert verdict_lines[0].endswith("PASS")

    def test_quiet_suppresses_chatter(self, tmp_path, capsys):
        cfg = write(tmp_path / "a.ini", SMALL)
        cli.main(["resolvent-rate", "-c", cfg, "--quiet",
                  "--out-root", str(tmp_path / "runs")])
        out = capsys.readouterr().out
        assert all(l.startswith("VERDICT:") for l in out.splitlines() if l)

    def test_eigs_table(self, tmp_path, capsys):
        code = cli.main(["eigs", "--count", "3", "--quiet",
                         "--out-root", str(tmp_path / "runs")])
        out = capsys.readouterr().out
        assert code == 0
        assert "j,eigenvalue" in out
        rows = [l for l in out.splitlines() if l and l[0].isdigit()]
        assert rows[0] == "1,1"
        assert float(rows[1].split(",")[1]) == pytest.approx(np.pi**2 + 1, rel=1e-15)
        assert float(rows[2].split(",")[1]) == pytest.approx(4 * np.pi**2 + 1, rel=1e-15)

    def test_example_optimal_output(self, tmp_path, capsys):
        code = cli.main(["example-optimal", "--out-root", str(tmp_path / "runs")])
        out = capsys.readouterr().out
        assert code == 0
        assert "0.0126651" in out
        assert "scaling exponent -1.000" in out

    def test_attractor_single_point(self, tmp_path, capsys):
        cfg = write(tmp_path / "a.ini", "[nonlinearity]\nname = tanh\nbeta = 0.5\n")
        code = cli.main(["attractor", "-c", cfg, "--quiet",
                         "--out-root", str(tmp_path / "runs")])
        out = capsys.readouterr().out
        assert code == 0
        assert "VERDICT: attractor equilibria=1" in out


class TestRunDirectories:
    def test_no_writes_outside_run_dir(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cfg = write(tmp_path / "a.ini", SMALL)
        before = set(os.listdir(tmp_path))
        assert cli.main(["resolvent-rate", "-c", cfg, "--quiet",
                         "--out-root", str(tmp_path / "sandbox")]) == 0
        after = set(os.listdir(tmp_path))
        assert after - before == {"sandbox"}

    def test_resolved_config_reproduces_run(self, tmp_path):
        cfg = write(tmp_path / "a.ini", SMALL)
        assert cli.main(["resolvent-rate", "-c", cfg, "--quiet",
                         "--out-root", str(tmp_path / "r1")]) == 0
        run_dir = next((tmp_path / "r1").iterdir())
        resolved = run_dir / "resolved.ini"
        assert resolved.is_file()
        assert cli.main(["resolvent-rate", "-c", str(resolved), "--quiet",
                         "--out-root", str(tmp_path / "r2")]) == 0
        d1 = next((tmp_path / "r1").iterdir())
        d2 = next((tmp_path / "r2").iterdir())
        for name in ("points.csv", "fit.csv", "plot.dat", "plot_loglog.dat"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_seed_flag_overrides(self, tmp_path):
        cfg = write(tmp_path / "a.ini", SMALL)
        cli.main(["resolvent-rate", "-c", cfg, "--quiet", "--seed", "5",
                  "--out-root", str(tmp_path / "r1")])
        cli.main(["resolvent-rate", "-c", cfg, "--quiet", "--seed", "6",
                  "--out-root", str(tmp_path / "r2")])
        d1 = next((tmp_path / "r1").iterdir())
        d2 = next((tmp_path / "r2").iterdir())
        assert (d1 / "details.csv").read_text() != (d2 / "details.csv").read_text()

    def test_env_var_out_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("BIGDIFF_OUT_ROOT", str(tmp_path / "enviro"))
        assert cli.main(["eigs", "--quiet"]) == 0
        assert (tmp_path / "enviro").is_dir()

    def test_interrupt_marks_incomplete(self, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise KeyboardInterrupt

        monkeypatch.setattr(at, "attractor_ode_longtime", boom)
        cfg = write(tmp_path / "a.ini", "[nonlinearity]\nname = tanh\nbeta = 0.5\n")
        code = cli.main(["attractor", "-c", cfg, "--quiet",
                         "--out-root", str(tmp_path / "runs")])
        assert code == 130
        run_dir = next((tmp_path / "runs").iterdir())
        record = json.loads((run_dir / "record.json").read_text())
        assert record["status"] == "incomplete"


class TestReport:
    def _one_run(self, tmp_path, name="r"):
        cfg = write(tmp_path / "a.ini", SMALL)
        cli.main(["resolvent-rate", "-c", cfg, "--quiet",
                  "--out-root", str(tmp_path / name)])
        return str(next((tmp_path / name).iterdir()))

    def test_single_pass_row(self, tmp_path, capsys):
        run = self._one_run(tmp_path)
        code = cli.main(["report", run])
        out = capsys.readouterr().out
        assert code == 0
        assert "resolvent_gap" in out and "PASS" in out

    def test_mixed_runs_exit_one(self, tmp_path, capsys):
        good = self._one_run(tmp_path, "good")
        strict = SMALL + "\n[tolerances]\nslope = 1e-9\n"
        cfg = write(tmp_path / "strict.ini", strict)
        cli.main(["resolvent-rate", "-c", cfg, "--quiet",
                  "--out-root", str(tmp_path / "bad")])
        bad = str(next((tmp_path / "bad").iterdir()))
        assert cli.main(["report", good, bad]) == 1
        out = capsys.readouterr().out
        assert "FAIL" in out

    def test_missing_directory_is_usage_error(self, tmp_path, capsys):
        assert cli.main(["report", str(tmp_path / "nothing")]) == 2
        capsys.readouterr()
