import csv
import json
import math

import numpy as np
import pytest

from morphint.cli import BENCH_COLUMNS, EXIT_ERROR, EXIT_OK, EXIT_WARN, main, normalize_spec
from morphint.errors import MorphIntError


def _write(tmp_path, doc, name="spec.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc), encoding="utf-8")
    return str(p)


def _run(tmp_path, doc, *flags, name="spec.json"):
    spec = _write(tmp_path, doc, name)
    out = str(tmp_path / (name + ".out"))
    code = main(["--spec", spec, "--out", out, *flags])
    return code, out


CONST = {
    "integrand": {"builtin": "Constant", "params": {"k": 0.0, "dim": 3}},
    "domain": {"lower": 0.0, "upper": 1.0},
    "run": {"n_traj": 100, "n_steps": 100, "n_blocks": 10},
}


def test_constant_exact(tmp_path):
    code, out = _run(tmp_path, CONST)
    rep = json.loads(open(out, encoding="utf-8").read())
    assert code == EXIT_OK
    assert rep["estimate"]["value"] == 1.0 and rep["estimate"]["sigma"] == 0.0
    assert rep["value_decimal"] == "1.0"
    assert rep["value_mantissa"] == 1.0 and rep["value_exponent10"] == 0
    assert rep["warnings"] == [] and rep["tuning"] is not None
    assert rep["wall_time_seconds"] > 0
    assert rep["config"]["run"]["n_blocks"] == 10


def test_insufficient_blocks(tmp_path, capsys):
    doc = {**CONST, "run": {"n_traj": 50, "n_steps": 100, "n_blocks": 50}}
    code, _ = _run(tmp_path, doc)
    assert code == EXIT_ERROR
    assert "InsufficientBlocks" in capsys.readouterr().err


@pytest.mark.parametrize(
    "doc",
    [
        {**CONST, "extra": 1},
        {**CONST, "run": {"n_traj": 100, "n_steps": 100, "bogus": 3}},
        {**CONST, "integrand": {"builtin": "Nope"}},
        {**CONST, "run": {"n_traj": 100, "n_steps": 100, "propagator": {"kind": "langevin"}}},
        {**CONST, "run": {"n_traj": 100, "n_steps": 100, "propagator": {"kind": "ismc", "diffusion": 1.0}}},
        {**CONST, "integrand": {"expression": "exp(x1", "dim": 1}, "domain": {"lower": 0, "upper": 1}},
        {**CONST, "domain": {"lower": 1.0, "upper": 1.0}},
    ],
)
def test_bad_specs_exit_1(tmp_path, doc, capsys):
    code, _ = _run(tmp_path, doc)
    assert code == EXIT_ERROR
    assert capsys.readouterr().err.startswith("morphint: error:")


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json", encoding="utf-8")
    assert main(["--spec", str(p)]) == EXIT_ERROR


def test_warnings_give_exit_2(tmp_path):
    doc = {
        "integrand": {"builtin": "PhiA", "terns": 2},
        "domain": {"lower": -3.0, "upper": 3.0},
        "run": {"n_traj": 20, "n_steps": 200, "n_blocks": 10, "propagator": {"kind": "ismc", "delta_max": 5.0}},
    }
    code, out = _run(tmp_path, doc)
    rep = json.loads(open(out, encoding="utf-8").read())
    assert code == EXIT_WARN
    assert "LowAcceptance" in rep["warnings"] or "LargeRelativeSigma" in rep["warnings"]


def test_expression_signed_through_splitting(tmp_path):
    doc = {
        "integrand": {"expression": "x1 - 0.25", "dim": 1, "signedness": "MaySignChange"},
        "domain": {"lower": 0.0, "upper": 1.0},
        "run": {"n_traj": 400, "n_steps": 400, "n_blocks": 20, "propagator": {"kind": "ismc", "delta_max": 0.3}},
        "split": {"K": 2.0, "epsilon": 1e-4},
    }
    code, out = _run(tmp_path, doc)
    rep = json.loads(open(out, encoding="utf-8").read())
    est = rep["estimate"]
    assert code in (EXIT_OK, EXIT_WARN)
    assert "plus" in est and "minus" in est
    assert abs(est["value"] - 0.25) < 4 * est["sigma"] + 1e-3


def test_seed_flag_overrides(tmp_path):
    doc = {**CONST, "integrand": {"expression": "exp(-x1^2)", "dim": 1}, "domain": {"lower": 0, "upper": 2}}
    doc["run"] = {"n_traj": 40, "n_steps": 200, "n_blocks": 4, "propagator": {"kind": "ismc", "delta_max": 0.5}}
    _, a = _run(tmp_path, doc, "--no-timing", "--seed", "7", name="a.json")
    _, b = _run(tmp_path, doc, "--no-timing", "--seed", "8", name="b.json")
    ra, rb = (json.loads(open(p, encoding="utf-8").read()) for p in (a, b))
    assert ra["config"]["run"]["master_seed"] == 7
    assert ra["estimate"]["value"] != rb["estimate"]["value"]


def test_echo_round_trip_and_worker_independence(tmp_path):
    doc = {
        "integrand": {"builtin": "PhiA", "terns": 1},
        "domain": {"lower": -3.0, "upper": 3.0},
        "run": {"n_traj": 60, "n_steps": 500, "n_blocks": 6, "master_seed": 12},
    }
    _, first = _run(tmp_path, doc, "--no-timing", name="first.json")
    text1 = open(first, "rb").read()
    echo = json.loads(text1)["config"]
    _, second = _run(tmp_path, echo, "--no-timing", "--workers", "2", name="second.json")
    assert open(second, "rb").read() == text1
    assert b"\r" not in text1


def test_tune_mode(tmp_path):
    doc = {**CONST, "run": {"n_traj": 10, "n_steps": 100, "n_blocks": 5}}
    code, out = _run(tmp_path, doc, "--mode", "tune", "--no-timing")
    rep = json.loads(open(out, encoding="utf-8").read())
    assert code == EXIT_OK
    assert rep["tuning"]["acceptance_pct"] == 100.0


def test_normalize_defaults():
    spec = normalize_spec({"integrand": {"builtin": "PhiA"}, "domain": {"lower": -3, "upper": 3}, "run": {"n_steps": 10}})
    assert spec["run"]["n_blocks"] == 50
    assert spec["run"]["propagator"] == {"kind": "ismc", "delta_max": "auto"}
    assert spec["split"] == {"K": 2.0, "epsilon": 1e-5}
    assert spec["run"]["e_trial"] is None
    assert normalize_spec(spec) == spec
    with pytest.raises(MorphIntError):
        normalize_spec({"integrand": {"builtin": "PhiA"}})


# ------------------------------------------------------------------ bench


def test_bench_columns_and_partial_failure(tmp_path):
    suite = {
        "rows": [
            {"function": "Constant", "N": 2, "method": "morph-ismc", "params": {"k": 1.0}, "n_traj": 20, "n_steps": 50,
             "n_blocks": 5},
            {"function": "PhiA", "N": 4, "method": "morph-ismc"},
            {"function": "GenzGaussian", "N": 2, "method": "baseline-mean", "params": {"a": [2.0, 3.0], "w": [0.4, 0.5]},
             "n_points": 20000, "seed": 3},
            {"function": "Constant", "N": 3, "method": "baseline-ismc", "params": {"k": 0.0}, "n_traj": 2, "n_steps": 100,
             "delta_max": 0.2},
        ],
        "oracle_rel_tol": 1e-6,
    }
    spec = _write(tmp_path, suite)
    out = str(tmp_path / "bench.csv")
    assert main(["--spec", spec, "--out", out, "--mode", "bench"]) == EXIT_ERROR
    with open(out, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == BENCH_COLUMNS
    assert len(rows) == 4
    assert float(rows[0]["value"]) == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert float(rows[0]["pct_error_vs_oracle"]) == pytest.approx(0.0, abs=1e-9)
    assert rows[1]["value"] == "" and "error" in json.loads(rows[1]["params"])
    assert abs(float(rows[2]["pct_error_vs_oracle"])) < 5.0
    assert rows[2]["acceptance_pct"] == ""
    assert float(rows[3]["value"]) == pytest.approx(1.0, rel=1e-12)
    assert float(rows[3]["acceptance_pct"]) == 100.0


# ------------------------------------------------------------------ trace


def _trace(tmp_path, doc, name):
    code, out = _run(tmp_path, doc, "--mode", "trace", name=name)
    assert code == EXIT_OK
    with open(out, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "delta_L"]
    return np.array(rows[1:], dtype=float)


def _early_fraction(tmp_path, D, seeds):
    """Mean over probe seeds of (distance at 10% of steps) / (mean distance over the second half)."""
    fr = []
    for s in seeds:
        doc = {
            "integrand": {"builtin": "PhiA", "terns": 10},
            "domain": {"lower": -3.0, "upper": 3.0},
            "run": {"n_steps": 20000, "propagator": {"kind": "langevin", "diffusion": D}},
            "probe_seed": s,
        }
        t = _trace(tmp_path, doc, f"tr_{D}_{s}.json")
        n = len(t)
        fr.append(t[n // 10 - 1, 1] / t[n // 2 :, 1].mean())
    return float(np.mean(fr))


def test_trace_plateau_vs_slow_growth(tmp_path):
    seeds = range(1, 6)
    fast = _early_fraction(tmp_path, 30.0, seeds)
    slow = _early_fraction(tmp_path, 0.3, seeds)
    assert fast > 0.6
    assert slow < 0.5


def test_trace_flat_diffusive(tmp_path):
    doc = {
        "integrand": {"builtin": "Constant", "params": {"k": 0.0, "dim": 20}},
        "domain": {"lower": -1000.0, "upper": 1000.0},
        "run": {"n_steps": 40000, "propagator": {"kind": "ismc", "delta_max": 1.0}},
        "probe_seed": 4,
    }
    t = _trace(tmp_path, doc, "flat.json")
    # uniform box moves: E|dx|^2 = N d^2 / 3 per step
    expect = np.sqrt(t[:, 0] * 20 / 3.0)
    late = slice(len(t) // 4, None)
    assert np.mean(t[late, 1] / expect[late]) == pytest.approx(1.0, abs=0.15)
