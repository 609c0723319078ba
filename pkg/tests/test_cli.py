from __future__ import annotations

import csv
import json

import pytest

from npshape import __version__
from npshape.cli import ConfigError, ExperimentConfig, main, parse_curve_spec


def run(tmp_path, *args):
    out = tmp_path / "out"
    code = main([*args, "--out", str(out)])
    return code, out


def load(out, verb):
    return json.loads((out / f"{verb.replace('-', '_')}.json").read_text(encoding="utf-8"))


def header(out, verb):
    with open(out / f"{verb.replace('-', '_')}.csv", encoding="utf-8") as fh:
        return next(csv.reader(fh))


def test_spectrum_ellipse(tmp_path):
    code, out = run(tmp_path, "spectrum", "--curve", "ellipse:1,0.5", "--N", "256")
    assert code == 0
    vals = [e[0] if isinstance(e, list) else e for e in load(out, "spectrum")["eigenvalues"]]
    for x in (0.5, 1 / 6, -1 / 6, 1 / 18, -1 / 18):
        assert min(abs(v - x) for v in vals) <= 1e-8
    assert header(out, "spectrum") == ["index", "eigenvalue", "imag"]


def test_spectrum_circle(tmp_path):
    code, out = run(tmp_path, "spectrum", "--curve", "circle:1", "--N", "64")
    assert code == 0
    vals = sorted((e[0] if isinstance(e, list) else e for e in load(out, "spectrum")["eigenvalues"]), reverse=True)
    assert abs(vals[0] - 0.5) <= 1e-12
    assert max(abs(v) for v in vals[1:]) <= 1e-12


def test_malformed_curve(capsys):
    assert main(["spectrum", "--curve", "ellipse:1,x"]) == 2
    assert "curve" in capsys.readouterr().err


def test_unknown_verb_and_flag():
    assert main(["frobnicate"]) == 2
    assert main(["spectrum", "--bogus", "1"]) == 2


def test_odd_N_rejected(capsys):
    assert main(["spectrum", "--N", "63"]) == 2
    assert "N" in capsys.readouterr().err


def test_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"curve": "ellipse:1,0.5", "N": 64, "lambda": 1 / 6, "delta": 0.05}))
    code, out = run(tmp_path, "spectrum", "--config", str(cfg))
    assert code == 0
    assert load(out, "spectrum")["config"]["N"] == 64


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"curv": "kite"}))
    assert main(["spectrum", "--config", str(cfg)]) == 2
    assert "curv" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"nonsense": 1})


def test_config_defaults_round_trip():
    cfg = ExperimentConfig()
    cfg.validate()
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert "lambda" in cfg.to_dict()


def test_curve_spec_parsing():
    assert parse_curve_spec("kite")[0] == "kite"
    assert parse_curve_spec("circle:2")[0] == "circle"
    with pytest.raises(ConfigError):
        parse_curve_spec("blob:1")


@pytest.mark.parametrize("theta", ["normal:bump", "generic"])
def test_deriv_check_pass(tmp_path, theta):
    code, out = run(tmp_path, "deriv-check", "--theta", theta)
    assert code == 0
    rep = load(out, "deriv-check")
    assert rep["checks"] and all(c["pass"] for c in rep["checks"])
    assert header(out, "deriv-check") == ["h", "formula", "oracle", "rel_err"]


@pytest.mark.parametrize("theta", ["dilation", "translation:0.3,-0.2", "rotation", "tangential:3"])
def test_deriv_check_null_fields(tmp_path, theta):
    code, out = run(tmp_path, "deriv-check", "--theta", theta)
    assert code == 0
    assert all(c["value"] <= 1e-7 for c in load(out, "deriv-check")["checks"])


def test_deriv_check_star_pair(tmp_path):
    code, out = run(tmp_path, "deriv-check", "--curve", "star:4=0.2", "--lambda", "0.16033085", "--delta", "0.01")
    assert code == 0


def test_tolerance_failure_exit_code(tmp_path, capsys):
    code, _ = run(tmp_path, "identities", "--only", "calderon", "--tol", "1e-30")
    assert code == 1
    assert "FAIL" in capsys.readouterr().err


def test_identities_kite(tmp_path):
    code, out = run(tmp_path, "identities", "--curve", "kite", "--N", "256")
    assert code == 0
    names = [c["name"] for c in load(out, "identities")["checks"]]
    assert {"K1", "calderon", "jump_D", "jump_nuS", "nablaDjump", "kellogg", "mean_zero"} <= set(names)
    assert header(out, "identities") == ["identity", "residual", "tol", "status"]


def test_identities_only(tmp_path):
    code, out = run(tmp_path, "identities", "--only", "calderon")
    assert code == 0
    assert [c["name"] for c in load(out, "identities")["checks"]] == ["calderon"]
    assert main(["identities", "--only", "nope"]) == 2


def test_identities_sphere(tmp_path):
    code, out = run(tmp_path, "identities", "--sphere", "--kmax", "6")
    assert code == 0
    assert all(c["pass"] for c in load(out, "identities")["checks"])


def test_pohozaev(tmp_path):
    code, out = run(tmp_path, "pohozaev")
    assert code == 0
    assert header(out, "pohozaev")[0] == "target"


def test_sphere_crit(tmp_path):
    code, out = run(tmp_path, "sphere-crit", "--samples", "4")
    assert code == 0
    assert header(out, "sphere-crit") == ["k", "rel_trace", "max_offdiag"]


def test_convergence(tmp_path):
    code, out = run(tmp_path, "convergence")
    assert code == 0
    assert header(out, "convergence") == ["N", "quantity", "error"]
    with open(out / "convergence.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    eig = [float(r["error"]) for r in rows if r["quantity"] != "calderon"]
    assert eig and min(eig) <= 1e-10


def test_reports_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["spectrum", "--N", "64", "--out", str(a)]) == 0
    assert main(["spectrum", "--N", "64", "--out", str(b)]) == 0
    assert (a / "spectrum.json").read_bytes() == (b / "spectrum.json").read_bytes()
    assert (a / "spectrum.csv").read_bytes() == (b / "spectrum.csv").read_bytes()


def test_report_metadata(tmp_path):
    _, out = run(tmp_path, "spectrum", "--N", "64")
    text = (out / "spectrum.json").read_text(encoding="utf-8")
    rep = json.loads(text)
    assert rep["version"] == __version__
    assert len(rep["config_sha256"]) == 64
    assert list(rep) == sorted(rep)
    assert text.startswith("{\n  ")


def test_stdout_when_no_out(capsys):
    assert main(["spectrum", "--N", "32"]) == 0
    assert json.loads(capsys.readouterr().out)["command"] == "spectrum"


def test_thread_env(monkeypatch, tmp_path):
    monkeypatch.setenv("NP_SHAPE_THREADS", "1")
    assert run(tmp_path, "spectrum", "--N", "32")[0] == 0
    monkeypatch.setenv("NP_SHAPE_THREADS", "many")
    assert main(["spectrum", "--N", "32"]) == 2
