import csv
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from coalescence_lab import cli, config, hom_model
from coalescence_lab.config import ConfigError

ROOT = Path(__file__).resolve().parents[1]
SMALL = {"experiment": {"preset": "accelerated", "multiphoton_calibration": "epsilon",
                        "n_trials": 200_000}}


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    return code


# --- config -----------------------------------------------------------------

def test_defaults_resolve():
    c = config.resolve({})
    assert c.model.detector_fwhm == pytest.approx(0.99504, abs=1e-5)
    assert c.model.epsilon == 0.165
    assert c.params.p_qd * 76e6 == pytest.approx(30_000)
    assert c.analysis["bin_width_ps"] == 64
    assert c.background_gating == "relative"


@pytest.mark.parametrize("doc,pointer", [
    ({"nope": 1}, ""),
    ({"model": {"x": 1}}, "/model"),
    ({"experiment": {"p_qd": 2}}, "/experiment/p_qd"),
    ({"analysis": {"gates_ns": [0.29, -1]}}, "/analysis/gates_ns/1"),
    ({"sources": {"pdc_shape": "square"}}, "/sources/pdc_shape"),
    ({"sources": {"T1": 0.5, "T2": 2.0}}, "/sources/T2"),
    ({"model": {"calibrate_target": 0.99}}, "/model/calibrate_target"),
    ({"analysis": {"dn_range": [3, -3]}}, "/analysis/dn_range"),
    ({"experiment": {"p_qd": 0.001, "p_pdc_given_herald": 0.001,
                     "multiphoton_calibration": "epsilon"}, "sources": {"epsilon": 50},
      "model": {"detector_fwhm": 0.5}},
     "/experiment/multiphoton_calibration"),
])
def test_config_errors_carry_json_pointer(doc, pointer):
    with pytest.raises(ConfigError) as e:
        config.resolve(doc)
    assert e.value.pointer == pointer


def test_explicit_detector_fwhm_skips_calibration():
    c = config.resolve({"model": {"detector_fwhm": 0.5}})
    assert c.model.detector_fwhm == 0.5 and c.params.detector_fwhm == 0.5


def test_calibration_modes():
    hbt = config.resolve({"experiment": {"preset": "accelerated"}})
    eps = config.resolve({"experiment": {"preset": "accelerated",
                                         "multiphoton_calibration": "epsilon"}})
    from coalescence_lab import mc_engine
    assert mc_engine.hbt_zero_ratio(0.1, hbt.params.p_qd2) == pytest.approx(0.165)
    assert mc_engine.effective_epsilon(eps.params) == pytest.approx(0.165)


def test_seed_precedence(monkeypatch):
    monkeypatch.setenv(config.SEED_ENV, "77")
    assert config.resolve({"experiment": {"seed": 5}}).params.seed == 77
    assert config.resolve({}, seed=3).params.seed == 3
    monkeypatch.delenv(config.SEED_ENV)
    assert config.resolve({"experiment": {"seed": 5}}).params.seed == 5


def test_published_schema_in_sync():
    doc = json.loads((ROOT / "docs" / "config-schema.json").read_text())
    assert doc == json.loads(json.dumps(config.SCHEMA))


def test_load_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        config.load(p)
    p.write_text("[1]")
    with pytest.raises(ConfigError):
        config.load(p)
    with pytest.raises(ConfigError):
        config.load(tmp_path / "missing.json")


# --- commands ---------------------------------------------------------------

def test_simulate_empty_stream(tmp_path):
    out = tmp_path / "e.tags"
    assert run(["simulate", "--out", out, "--n-trials", 0]) == 0
    assert out.stat().st_size == 64
    out = tmp_path / "e.csv"
    cfg = write_json(tmp_path / "c.json", {"experiment": {"n_trials": 0}})
    assert run(["simulate", "--config", cfg, "--out", out]) == 0
    assert out.read_text().splitlines()[-1] == "trial,channel,time_ps"


def test_pipeline_is_byte_deterministic(tmp_path):
    cfg = write_json(tmp_path / "c.json", SMALL)
    outputs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        d.mkdir()
        assert run(["simulate", "--config", cfg, "--out", d / "perp.tags", "--seed", 1,
                    "--polarization", "perpendicular", "--threads", 1 + 2 * k]) == 0
        assert run(["simulate", "--config", cfg, "--out", d / "par.csv", "--seed", 2,
                    "--polarization", "parallel"]) == 0
        assert run(["analyze", "--in-perp", d / "perp.tags", "--in-par", d / "par.csv",
                    "--out", d / "r.json", "--hist-prefix", d / "h"]) == 0
        assert run(["model", "--config", cfg, "--out", d / "curves.csv"]) == 0
        assert run(["fit", "--in", d / "h_perp.csv", "--shape", "expgauss", "--poisson",
                    "--out", d / "fit.json"]) == 0
        outputs.append({f.name: f.read_bytes() for f in sorted(d.iterdir())})
    assert outputs[0] == outputs[1]
    rep = json.loads(outputs[0]["r.json"])
    assert set(rep) >= {"p_c", "p_c_zero", "gated", "heralded_trials"}
    assert 0 < rep["p_c"]["value"] < 1


def test_env_seed_changes_stream(tmp_path, monkeypatch):
    cfg = write_json(tmp_path / "c.json", SMALL)
    monkeypatch.setenv(config.SEED_ENV, "1")
    run(["simulate", "--config", cfg, "--out", tmp_path / "a.tags"])
    monkeypatch.setenv(config.SEED_ENV, "2")
    run(["simulate", "--config", cfg, "--out", tmp_path / "b.tags"])
    run(["simulate", "--config", cfg, "--out", tmp_path / "c.tags", "--seed", 1])
    a, b, c = ((tmp_path / f"{x}.tags").read_bytes() for x in "abc")
    assert a != b and a == c


def test_model_curves_area_ratio(tmp_path, capsys):
    out = tmp_path / "curves.csv"
    assert run(["model", "--out", out, "--tau-step", 0.002]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["p_c"] == pytest.approx(0.2717, abs=1e-4)
    rows = list(csv.DictReader(out.open()))
    tau = np.array([float(r["tau"]) for r in rows])
    perp = np.array([float(r["C_perp"]) for r in rows])
    par = np.array([float(r["C_par"]) for r in rows])
    ratio = np.trapezoid(par, tau) / np.trapezoid(perp, tau)
    # half a period either side holds all but the far background tails
    assert 1 - ratio == pytest.approx(0.272, abs=1e-3)
    assert len(rows) == round(hom_model.DEFAULT_PERIOD / 0.002) + 1


def test_fit_two_column_csv(tmp_path, capsys):
    from coalescence_lab.fitting import lorentzian
    nu = np.linspace(-4, 4, 41)
    p = tmp_path / "spec.csv"
    p.write_text("nu,y\n" + "".join(f"{a},{b}\n" for a, b in zip(nu, lorentzian(nu, 0, 0.9,
                                                                                  5.0))))
    assert run(["fit", "--in", p, "--shape", "lorentzian"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["params"]["fwhm"]["value"] == pytest.approx(0.9, abs=1e-6)


@pytest.mark.parametrize("argv,code", [
    (["analyze", "--in-perp", "missing.tags", "--in-par", "missing.tags"], 3),
    (["fit", "--in", "missing.csv", "--shape", "lorentzian"], 3),
])
def test_data_errors(argv, code, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(argv) == code


def test_corrupt_stream_and_flat_fit_are_data_errors(tmp_path):
    bad = tmp_path / "bad.tags"
    bad.write_bytes(b"garbage" * 20)
    assert run(["analyze", "--in-perp", bad, "--in-par", bad]) == 3
    flat = tmp_path / "flat.csv"
    flat.write_text("".join(f"{i},1\n" for i in range(20)))
    assert run(["fit", "--in", flat, "--shape", "lorentzian"]) == 3


def test_config_error_exit_code(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"model": {"bogus": True}})
    assert run(["model", "--config", cfg, "--out", tmp_path / "x.csv"]) == 2
    assert run(["simulate", "--out", tmp_path / "x.tags", "--threads", 0]) == 2


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "coalescence_lab", "simulate", "--out",
                        str(tmp_path / "e.tags"), "--n-trials", "0"],
                       capture_output=True, text=True, env={**os.environ})
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "coalescence_lab", "model", "--config",
                        str(tmp_path / "missing.json"), "--out", str(tmp_path / "c.csv")],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "config error" in r.stderr
