import json
import math
from pathlib import Path

import numpy as np
import pytest

from etrack import cli
from etrack import numerics as nm

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_toml(tmp_path, text):
    p = tmp_path / "s.toml"
    p.write_text(text)
    return p


MINIMAL = """
[[segments]]
duration = 3
speed = 30.0
turn_rate_deg = 5.0

[[estimators]]
name = "M3"
kind = "proposed"
"""


# ---------------------------------------------------------------- config


def test_shipped_configs_load():
    s1 = cli.load_scenario(CONFIGS / "scenario1.toml")
    assert s1.n_steps == 46 and s1.n_runs == 900
    assert [e.name for e in s1.estimators] == ["M1", "M2", "M3"]
    assert s1.segments[1].turn_rate == pytest.approx(math.radians(10.0))
    assert s1.estimators[1].sigma_omega == pytest.approx(math.radians(0.1))
    assert len(s1.estimators[0].modes) == 3
    np.testing.assert_allclose(s1.r, 2.25 * np.eye(2))
    s2 = cli.load_scenario(CONFIGS / "scenario2.toml")
    assert [e.name for e in s2.estimators] == ["M2", "M3"]
    assert {np.sign(s.turn_rate) for s in s2.segments} == {-1.0, 0.0, 1.0}


def test_minimal_config_defaults(tmp_path):
    cfg = cli.load_scenario(write_toml(tmp_path, MINIMAL))
    assert cfg.name == "s"
    assert cfg.estimators[0].v_rule == "volume-preserving"


@pytest.mark.parametrize(
    "patch,path",
    [
        ("bogus = 1\n", "bogus: unknown key"),
        ("poisson_mean = -2.0\n", "poisson_mean:"),
        ("T = \"one\"\n", "T: expected float"),
        ("[init]\nnu = 5.0\n", "init.nu:"),
    ],
)
def test_schema_errors_name_the_key(tmp_path, patch, path):
    with pytest.raises(cli.ConfigError) as err:
        cli.load_scenario(write_toml(tmp_path, patch + MINIMAL))
    assert str(err.value).startswith(path)


def test_schema_errors_inside_arrays(tmp_path):
    text = MINIMAL.replace('kind = "proposed"', 'kind = "proposed"\nmotion = "cv"')
    with pytest.raises(cli.ConfigError, match=r"^estimators\[0\]\.motion"):
        cli.load_scenario(write_toml(tmp_path, text))
    text = MINIMAL.replace("duration = 3", "duration = 0")
    with pytest.raises(cli.ConfigError, match=r"^segments\[0\]\.duration"):
        cli.load_scenario(write_toml(tmp_path, text))
    text = MINIMAL.replace('kind = "proposed"', 'kind = "imm"')
    with pytest.raises(cli.ConfigError, match=r"^estimators\[0\]\.modes"):
        cli.load_scenario(write_toml(tmp_path, text))


def test_cli_reports_config_errors(tmp_path, capsys):
    p = write_toml(tmp_path, "bogus = 1\n" + MINIMAL)
    assert cli.main(["simulate", "--scenario", str(p), "--out", str(tmp_path)]) == 2
    assert "bogus: unknown key" in capsys.readouterr().err


def test_overrides(tmp_path):
    cfg = cli.load_scenario(CONFIGS / "scenario1.toml")
    out = cli.apply_overrides(cfg, runs=3, seed=9, nu_mode="optimal", half_factor=True, no_noise=True)
    assert out.n_runs == 3 and out.master_seed == 9
    assert not np.any(out.r) and not out.init.perturb
    m1, m2, m3 = out.estimators
    assert m3.nu_mode == "optimal" and m3.half_factor and m2.half_factor
    assert m1.nu_mode == "closed" and not m1.half_factor


# ---------------------------------------------------------------- sweep-nu


def test_sweep_default_grid(tmp_path):
    assert cli.main(["sweep-nu", "--out", str(tmp_path)]) == 0
    man, cols, rows = cli.read_csv(tmp_path / "sweep_nu.csv")
    assert tuple(cols) == cli.SWEEP_COLUMNS
    assert man["command"] == "sweep-nu" and "timestamp" not in man
    assert len(rows) == 60 * 41
    assert max(float(r[4]) for r in rows) < 0.10
    side = json.loads((tmp_path / "sweep_nu.manifest.json").read_text())
    assert "timestamp" in side


def test_sweep_zero_variance_point(tmp_path):
    cli.main(["sweep-nu", "--out", str(tmp_path), "--v-min", "12", "--v-max", "12", "--v-num", "1",
              "--std-max", "0", "--std-num", "1"])
    _, _, rows = cli.read_csv(tmp_path / "sweep_nu.csv")
    v, var, nu_opt, nu_closed, err = map(float, rows[0])
    assert nu_opt == pytest.approx(v, rel=1e-10)
    assert nu_closed == pytest.approx(v, rel=1e-12)


def test_sweep_is_byte_identical_on_rerun(tmp_path):
    args = ["sweep-nu", "--v-num", "5", "--std-num", "5"]
    cli.main(args + ["--out", str(tmp_path / "a")])
    cli.main(args + ["--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "sweep_nu.csv").read_bytes()
    assert a == (tmp_path / "b" / "sweep_nu.csv").read_bytes()
    assert b"\r" not in a


# ---------------------------------------------------------------- simulate


def test_simulate_noise_free_single_run(tmp_path):
    rc = cli.main(["simulate", "--scenario", str(CONFIGS / "scenario1.toml"), "--runs", "1",
                   "--no-noise", "--out", str(tmp_path), "--seed", "4"])
    assert rc == 0
    man, cols, rows = cli.read_csv(tmp_path / "scenario1.csv")
    assert tuple(cols) == cli.SIM_COLUMNS
    assert man["seed"] == 4 and man["config"]["n_runs"] == 1
    assert len(rows) == 3 * 46
    gw = np.array([float(r[2]) for r in rows])
    # no sensor noise, truth-initialised: only the spread-sampling scatter is left
    assert gw.mean() < 7.0
    summary = json.loads((tmp_path / "scenario1.json").read_text())
    assert summary["divergence_counts"] == {"M1": 0, "M2": 0, "M3": 0}
    assert set(summary["aggregates"]) == {"M1", "M2", "M3"}
    assert "timestamp" in summary["manifest"]


def test_simulate_csv_reproducible(tmp_path):
    args = ["simulate", "--scenario", str(CONFIGS / "scenario2.toml"), "--runs", "2", "--seed", "3"]
    cli.main(args + ["--out", str(tmp_path / "a")])
    cli.main(args + ["--out", str(tmp_path / "b"), "--threads", "2"])
    assert (tmp_path / "a" / "scenario2.csv").read_bytes() == (tmp_path / "b" / "scenario2.csv").read_bytes()


def test_threads_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("ETRACK_THREADS", "2")
    cli.main(["simulate", "--scenario", str(CONFIGS / "scenario2.toml"), "--runs", "2",
              "--out", str(tmp_path)])
    summary = json.loads((tmp_path / "scenario2.json").read_text())
    assert summary["manifest"]["threads"] == 2


def test_simulate_with_validate_prints_table(tmp_path, capsys):
    rc = cli.main(["simulate", "--scenario", str(CONFIGS / "scenario2.toml"), "--runs", "1",
                   "--out", str(tmp_path), "--validate", "--scale", "0.02", "--taylor-half-factor", "on"])
    out = capsys.readouterr().out
    assert "PASS  trigamma-inequality" in out
    assert "lemma-9" in out and "theorem-1" in out
    report = json.loads((tmp_path / "validate.json").read_text())
    assert rc == (0 if report["passed"] else 1)


# ---------------------------------------------------------------- validate


def test_validate_all_oracles_pass_with_half_weight(tmp_path):
    rc = cli.main(["validate", "--out", str(tmp_path), "--taylor-half-factor", "on"])
    report = json.loads((tmp_path / "validate.json").read_text())
    failed = [c["name"] for c in report["checks"] if not c["passed"]]
    assert rc == 0, failed
    cov = report["coverage"]
    want = {f"lemma-{i}" for i in range(1, 10)} | {"corollary-1", "theorem-1"}
    assert set(cov) == want
    assert all(c["passed"] for c in cov.values())


def test_validate_flags_verbatim_taylor_weight(tmp_path):
    rc = cli.main(["validate", "--out", str(tmp_path), "--only", "taylor"])
    report = json.loads((tmp_path / "validate.json").read_text())
    assert rc == 1
    (check,) = report["checks"]
    assert not check["passed"] and check["error"] > 0.02


def test_validate_detects_tampered_trigamma(tmp_path, monkeypatch):
    real = nm.trigamma
    monkeypatch.setattr(nm, "trigamma", lambda x: real(x) - 1e-3)
    rc = cli.main(["validate", "--out", str(tmp_path), "--only", "trigamma_inequality"])
    report = json.loads((tmp_path / "validate.json").read_text())
    assert rc == 1
    assert report["coverage"]["lemma-6"]["passed"] is False


def test_validate_json_to_stdout(capsys):
    rc = cli.main(["validate", "--only", "vec_identity"])
    captured = capsys.readouterr()
    assert rc == 0
    assert json.loads(captured.out)["passed"] is True
    assert "vec-identity" in captured.err
