import csv
import json
import math
from importlib import resources

import numpy as np
import pytest

from ltvcert import cli
from ltvcert.cli import ConfigError, certificate_from_report, dumps, load_config, main


def _write(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _bundled(example):
    return json.loads(resources.files("ltvcert").joinpath("data", f"{example}.json").read_text())


def _ripple_path(tmp_path):
    return _write(tmp_path, "ripple.json", _bundled("paper-sec5"))


MINUS_I = {
    "schema_version": 1,
    "name": "minus-identity",
    "dimension": 2,
    "segments": [{"start": 0, "end": 5, "entries": [["-1", "0"], ["0", "-1"]]}],
    "analysis": {"kappa": 1.0},
}


def _csv_rows(text):
    rows = list(csv.reader(text.splitlines()))
    return rows[0], rows[1:]


@pytest.fixture(scope="module")
def ripple_report(tmp_path_factory):
    d = tmp_path_factory.mktemp("ripple")
    out = d / "cert.json"
    path = _ripple_path(d)
    code = main(["certify", path, "--kappa", "1", "--lambda", "0.238", "--json", str(out)])
    return code, out, path


def test_validate_ripple(tmp_path, capsys):
    assert main(["validate", _ripple_path(tmp_path)]) == 0
    captured = capsys.readouterr()
    report = json.loads(captured.out)
    assert report["regularity"]["alpha_max"] == pytest.approx(0.1, abs=1e-6)
    assert report["regularity"]["jump_count_per_window"] == 1
    assert "alpha_max = 0.1" in captured.err


def test_validate_overlapping_segments(tmp_path, capsys):
    cfg = dict(MINUS_I, segments=[
        {"start": 0, "end": 2, "entries": [["-1", "0"], ["0", "-1"]]},
        {"start": 1, "end": 3, "entries": [["-1", "0"], ["0", "-1"]]},
    ])
    assert main(["validate", _write(tmp_path, "bad.json", cfg)]) == 2
    err = capsys.readouterr().err
    assert "segments[1]" in err and "overlap" in err


@pytest.mark.parametrize("mutate, field", [
    (lambda c: c.pop("dimension"), "dimension"),
    (lambda c: c.update(schema_version=99), "schema_version"),
    (lambda c: c["segments"][0].update(entries=[["-1", "0"]]), "segments[0].entries"),
    (lambda c: c["segments"][0]["entries"][0].__setitem__(0, "-1 +"), "segments[0].entries[0][0]"),
])
def test_malformed_configs_name_the_field(tmp_path, capsys, mutate, field):
    cfg = json.loads(json.dumps(MINUS_I))
    mutate(cfg)
    assert main(["validate", _write(tmp_path, "bad.json", cfg)]) == 2
    assert field in capsys.readouterr().err


def test_validate_oscillating_counterexample(tmp_path, capsys):
    cfg = _bundled("remark-counterexample")
    assert main(["validate", _write(tmp_path, "remark.json", cfg)]) == 0
    captured = capsys.readouterr()
    assert "assumption24_suspect" in captured.err
    assert json.loads(captured.out)["regularity"]["assumption24_suspect"] is True


def test_certify_ripple_report(ripple_report):
    code, out, _ = ripple_report
    assert code == 0
    r = json.loads(out.read_text())
    assert r["feasible"] is True
    for key, want in (("int_phi", 2.2), ("int_gamma", 0.8), ("tv_tilde", 2.2), ("lhs", 1.4738), ("rhs", 1.4954)):
        assert r[key] == pytest.approx(want, abs=1e-3), key
    settings = r["settings"]
    assert settings["kappa"] == 1.0 and settings["beta"] == 0.5
    assert settings["grid_per_period"] == 512
    iss = r["certificate"]["iss"]
    assert {"a", "b", "k1", "k2", "k3"} <= set(iss)


def test_certify_infeasible_lambda(tmp_path):
    assert main(["certify", _ripple_path(tmp_path), "--kappa", "1", "--lambda", "0.2"]) == 1


def test_certify_constant_hurwitz(tmp_path, capsys):
    assert main(["certify", _write(tmp_path, "i.json", MINUS_I)]) == 0
    r = json.loads(capsys.readouterr().out)
    assert r["feasible"] and r["lhs"] == 0.0


def test_certify_requires_kappa(tmp_path, capsys):
    cfg = dict(MINUS_I, analysis={})
    assert main(["certify", _write(tmp_path, "k.json", cfg)]) == 2
    assert "kappa" in capsys.readouterr().err


def test_certificate_round_trip(ripple_report):
    _, out, _ = ripple_report
    r = json.loads(out.read_text())
    cert = certificate_from_report(r)
    assert cert.feasible and cert.lam == 0.238
    assert cert.k3 == r["certificate"]["iss"]["k3"]


def test_simulate_zero_state(tmp_path, capsys):
    assert main(["simulate", _write(tmp_path, "i.json", MINUS_I), "--x0", "0,0", "--tf", "2", "--step", "0.1"]) == 0
    header, rows = _csv_rows(capsys.readouterr().out)
    assert header == ["t", "x1", "x2", "norm_x", "V", "W", "xi", "envelope"]
    assert all(float(r[1]) == 0.0 and float(r[2]) == 0.0 for r in rows)


def test_simulate_decoupled_decay(tmp_path, capsys):
    args = ["simulate", _write(tmp_path, "i.json", MINUS_I), "--x0", "0.6,0.8", "--t0", "0.5", "--tf", "4",
            "--step", "0.01"]
    assert main(args) == 0
    _, rows = _csv_rows(capsys.readouterr().out)
    t = np.array([float(r[0]) for r in rows])
    nx = np.array([float(r[3]) for r in rows])
    np.testing.assert_allclose(nx, np.exp(-(t - 0.5)), atol=1e-6)


def test_simulate_check_iss_with_certificate(ripple_report, tmp_path, capsys):
    _, out, path = ripple_report
    csv_path = tmp_path / "trace.csv"
    code = main(["simulate", path, "--check-iss", str(out), "--csv", str(csv_path)])
    assert code == 0
    assert "iss margin" in capsys.readouterr().err
    header, rows = _csv_rows(csv_path.read_text())
    assert float(rows[-1][0]) == pytest.approx(20 * math.pi)
    env = np.array([float(r[7]) for r in rows])
    nx = np.array([float(r[3]) for r in rows])
    assert np.all(env > nx)


def test_simulate_blow_up_exit_code(tmp_path, capsys):
    cfg = dict(MINUS_I, segments=[{"start": 0, "end": 100, "entries": [["2", "0"], ["0", "2"]]}])
    assert main(["simulate", _write(tmp_path, "u.json", cfg), "--x0", "1,1", "--tf", "100", "--step", "0.1"]) == 3
    assert "exceeds" in capsys.readouterr().err


def test_simulate_missing_x0(tmp_path, capsys):
    assert main(["simulate", _write(tmp_path, "i.json", MINUS_I), "--tf", "1"]) == 2
    assert "simulation.x0" in capsys.readouterr().err


def test_deterministic_output(tmp_path):
    path = _write(tmp_path, "i.json", dict(MINUS_I, perturbation={"gamma": "0.1", "delta": "0.05"}))
    blobs = []
    for k in range(2):
        j, c = tmp_path / f"r{k}.json", tmp_path / f"r{k}.csv"
        assert main(["certify", path, "--json", str(j)]) == 0
        assert main(["simulate", path, "--x0", "1,-1", "--tf", "3", "--step", "0.05", "--check-iss", "",
                     "--csv", str(c)]) == 0
        blobs.append((j.read_bytes(), c.read_bytes()))
    assert blobs[0] == blobs[1]


def test_dumps_format():
    text = dumps({"b": [0.1, math.inf], "a": 1})
    assert json.loads(text) == {"b": [0.1, None], "a": 1}
    assert "0.10000000000000001" in text


def test_pi_constants_in_config():
    cfg = load_config(dict(MINUS_I, segments=[{"start": 0, "end": "2*pi", "entries": [["-1", "0"], ["0", "-1"]]}]))
    assert cfg.traj.horizon == pytest.approx(2 * math.pi)
    with pytest.raises(ConfigError):
        load_config(dict(MINUS_I, segments=[{"start": 0, "end": "t", "entries": [["-1", "0"], ["0", "-1"]]}]))


@pytest.mark.parametrize("example", cli.EXAMPLES)
def test_reproduce(example, capsys):
    assert main(["reproduce", example]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["match"] and all(r["ok"] for r in out["diff"])


def test_reproduce_ripple_values():
    out = cli.reproduce("paper-sec5")
    v = out["values"]
    assert v["c1"] == pytest.approx(0.2381, abs=1e-3)
    assert v["lhs"] < v["rhs"]


def test_thread_override_gives_identical_report(tmp_path, monkeypatch):
    path = _ripple_path(tmp_path)
    outs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("LTVCERT_THREADS", threads)
        j = tmp_path / f"t{threads}.json"
        assert main(["certify", path, "--json", str(j)]) == 0
        outs.append(j.read_bytes())
    assert outs[0] == outs[1]


def test_bad_thread_override(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LTVCERT_THREADS", "zero")
    assert main(["certify", _ripple_path(tmp_path)]) == 2
    assert "LTVCERT_THREADS" in capsys.readouterr().err
