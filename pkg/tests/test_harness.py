import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rfimlab.errors import ValidationError
from rfimlab.harness import classify, load_plan, replay, run_plan, trend_report, validate_plan, var_fn_scaling
from rfimlab.harness import runner
from rfimlab.harness.cli import main
from rfimlab.harness.plan import PlanError, bundled_plan_text, normalize


def plan_doc(**over):
    doc = {
        "name": "t",
        "grid": {"d": [1], "n": [4], "beta": [1.0], "h": [1.0]},
        "disorder": {"profile": {"kind": "constant", "c": 1.0}, "dists": ["gaussian"],
                     "seeds": {"start": 0, "count": 5}},
        "engine": {"kind": "exact"},
        "observables": ["constant"],
    }
    doc.update(over)
    return doc


def plan_of(**over):
    return load_plan(json.dumps(plan_doc(**over)))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- validation


def test_capacity_diagnostic_names_cell():
    doc = plan_doc(grid={"d": [1], "n": [30], "beta": [1.0], "h": [1.0]})
    plan, diags = validate_plan(json.dumps(doc))
    assert plan is None and len(diags) == 1
    assert diags[0].key == "grid[d=1 n=30 beta=1 h=1 dist=gaussian]"
    assert "30 spins exceeds the enumeration cap of 24" in diags[0].message


def test_student_t_nu_diagnostic():
    doc = plan_doc()
    doc["disorder"]["dists"] = [{"kind": "student-t", "nu": 4}]
    plan, diags = validate_plan(json.dumps(doc))
    assert plan is None
    assert diags[0].key == "disorder.dists[0]"
    assert "finite fifth moment requires ν > 5" in diags[0].message


def test_json_syntax_diagnostic():
    plan, diags = validate_plan('{\n  "grid": [1,\n}')
    assert plan is None and "line 3 column 1" in diags[0].message


@pytest.mark.parametrize("doc", [[], {"grid": 3}, plan_doc(engine={"kind": "gpu"}), plan_doc(observables=["nope"]),
                                 plan_doc(bogus=1), plan_doc(seed_base=-1),
                                 plan_doc(disorder={"seeds": {"start": 0, "count": 0}})])
def test_bad_documents_give_diagnostics(doc):
    plan, diags = validate_plan(json.dumps(doc))
    assert plan is None and diags and all(d.key and d.message for d in diags)


@given(st.text(max_size=60))
def test_validate_never_raises(text):
    plan, diags = validate_plan(text)
    assert (plan is None) == bool(diags)


@pytest.mark.parametrize("text", [json.dumps(plan_doc()), bundled_plan_text("paper-suite"), bundled_plan_text("smoke")])
def test_normalization_idempotent(text):
    once = normalize(text)
    assert normalize(once) == once


def test_transfer_matrix_needs_chain():
    doc = plan_doc(grid={"d": [2], "n": [3], "beta": [1.0], "h": [1.0]}, engine={"kind": "transfer-matrix"})
    _, diags = validate_plan(json.dumps(doc))
    assert any("d = 1" in d.message for d in diags)


def test_auto_engine_resolution():
    plan = plan_of(grid={"d": [1], "n": [4, 30], "beta": [1.0], "h": [1.0]}, engine={"kind": "auto"})
    assert [c.engine for c in plan.cells] == ["exact", "mcmc"]


def test_seed_ranges_disjoint_unless_shared():
    plan = plan_of(grid={"d": [1], "n": [4, 6], "beta": [1.0], "h": [1.0]})
    a, b = (set(c.seeds) for c in plan.cells)
    assert not a & b and len(a) == 5
    doc = plan_doc(grid={"d": [1], "n": [4, 6], "beta": [1.0], "h": [1.0]})
    doc["disorder"]["seeds"]["shared"] = True
    a, b = (c.seeds for c in load_plan(json.dumps(doc)).cells)
    assert a == b
    assert plan.with_seed_base(1000).cells[0].seeds[0] == 1000 + plan.cells[0].seeds[0]


# ---------------------------------------------------------------- trends


def test_classify_rule():
    assert classify([(4, 1.0, 0.1), (8, 0.5, 0.1), (16, 0.1, 0.05)]) == "decreasing-outside-2SE"
    assert classify([(4, 1.0, 0.1), (8, 0.8, 0.1)]) == "flat"  # 0.2 < 2 * hypot(0.1, 0.1)
    assert classify([(4, 0.1, 0.01), (8, 0.5, 0.01)]) == "increasing"
    assert classify([(4, 1.0, 0.01), (8, 0.5, 0.01), (16, 0.9, 0.01)]) == "inconclusive"
    assert classify([(4, 1.0, 0.01)]) == "inconclusive"
    assert classify([(4, 1.0, float("nan")), (8, 0.5, 0.01)]) == "inconclusive"


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(0, 1)), min_size=2, max_size=5), st.permutations(range(5)))
def test_classify_pure_function_of_triples(vals, perm):
    pts = [(2 ** (k + 2), e, s) for k, (e, s) in enumerate(vals)]
    shuffled = [pts[i] for i in perm if i < len(pts)]
    assert classify(pts) == classify(shuffled)


def test_exponent_recovers_power_law():
    n = np.array([4, 8, 16, 32])
    rep = trend_report("x", [(k, 3.0 * k**-1.5, 1e-3 * k**-1.5) for k in n])
    assert rep.exponent == pytest.approx(1.5, abs=1e-10)
    assert rep.exponent_ci[0] < 1.5 < rep.exponent_ci[1]
    assert rep.verdict == "decreasing-outside-2SE"


def test_var_fn_scaling_rules():
    assert var_fn_scaling([(8, 1.0, 0.1), (16, 1.2, 0.1), (32, 3.9, 0.1)]).verdict == "bounded"
    assert var_fn_scaling([(8, 1.0, 0.1), (16, 1.2, 0.1), (32, 4.1, 0.1)]).verdict == "unbounded"
    assert var_fn_scaling([(8, 1.0, 0.1), (16, 1.2, 0.1), (32, 4.1, 0.1)], factor=5).verdict == "bounded"
    with pytest.raises(ValidationError):
        var_fn_scaling([(8, 1.0, 0.1), (16, 1.2, 0.1)])


# ---------------------------------------------------------------- runs


def test_single_constant_cell(tmp_path):
    res = run_plan(plan_of(), tmp_path)
    rows = read_csv(tmp_path / "constant.csv")
    assert len(rows) == 1
    assert float(rows[0]["variance"]) == 0.0 and float(rows[0]["mean"]) == 1.0
    assert list(rows[0]) == ["observable", "n", "d", "beta", "h", "profile", "dist", "mean", "variance", "SE",
                             "seeds"]
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["cells"][0]["seeds"] == list(range(5)) and res.ok


def test_zero_disorder_var_fn(tmp_path):
    doc = plan_doc(grid={"d": [1], "n": [4, 6, 8], "beta": [1.0], "h": [1.0]}, observables=["var-Fn-scaling"])
    doc["disorder"]["profile"] = {"kind": "constant", "c": 0.0}
    res = run_plan(load_plan(json.dumps(doc)), tmp_path)
    vals = [r["mean"] for r in res.rows["var-Fn-scaling"] if r["observable"] == "var-Fn-scaling"]
    assert vals == [0.0, 0.0, 0.0]
    (t,) = [t for t in res.trends if t.observable == "var-Fn-scaling"]
    assert t.verdict == "bounded" and t.ratio == 1.0


def test_var_fn_transfer_matrix_matches_enumeration(tmp_path):
    out = {}
    for eng in ("transfer-matrix", "exact"):
        doc = plan_doc(grid={"d": [1], "n": [10], "beta": [1.0], "h": [1.0]}, engine={"kind": eng},
                       observables=["var-Fn-scaling"])
        doc["disorder"]["seeds"]["count"] = 500
        (row,) = [r for r in run_plan(load_plan(json.dumps(doc)), tmp_path / eng).rows["var-Fn-scaling"]
                  if r["observable"] == "var-Fn-scaling"]
        out[eng] = row
    a, b = out["transfer-matrix"], out["exact"]
    assert abs(a["mean"] - b["mean"]) < 3 * max(a["SE"], b["SE"])
    assert a["mean"] == pytest.approx(b["mean"], rel=1e-9)


def test_graceful_failure(tmp_path, monkeypatch):
    real = runner.pressure_derivative

    def flaky(ens, seed, step=1e-4):
        if ens.spec.n == 6:
            raise ArithmeticError("quadrature budget exhausted")
        return real(ens, seed, step)

    monkeypatch.setattr(runner, "pressure_derivative", flaky)
    plan = load_plan(bundled_plan_text("smoke"))
    res = run_plan(plan, tmp_path)
    assert len(res.failures) == 1
    f = res.failures[0]
    assert f["cell"] == "d=1 n=6 beta=1 h=1 dist=gaussian" and f["observable"] == "q-consistency"
    assert "quadrature budget" in f["error"] and f["seeds_failed"] == 5
    assert json.loads((tmp_path / "manifest.json").read_text())["failures"] == res.failures
    assert {r["n"] for r in res.rows["overlap-variance"]} == {4, 6}
    assert {r["n"] for r in res.rows["q-consistency"]} == {4}


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(runner.ExecutionError, match="not writable"):
        run_plan(plan_of(), blocker / "sub")


def test_replay_identical_any_workers(tmp_path):
    plan = load_plan(bundled_plan_text("smoke"))
    first = run_plan(plan, tmp_path / "a", workers=1)
    for k in (1, 2):
        rep = replay(tmp_path / "a" / "manifest.json", tmp_path / f"r{k}", workers=k)
        assert rep.identical and not rep.mismatched
        for name in first.outputs:
            if name.endswith(".csv"):
                assert (tmp_path / "a" / name).read_bytes() == (tmp_path / f"r{k}" / name).read_bytes()


def test_mcmc_cell_and_tm_fallback(tmp_path):
    doc = plan_doc(grid={"d": [1], "n": [6], "beta": [0.5], "h": [1.0]}, engine={"kind": "mcmc",
                   "sampler": {"burn_in": 50, "sweeps": 2050}}, observables=["overlap-variance", "q-consistency"])
    doc["disorder"]["seeds"]["count"] = 3
    plan = load_plan(json.dumps(doc))
    assert runner.observable_engine(plan.cells[0], "q-consistency") == "transfer-matrix"
    res = run_plan(plan, tmp_path)
    assert res.ok and res.rows["overlap-variance"][0]["seeds"] == 3


# ---------------------------------------------------------------- CLI


def test_cli_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.json"
    good.write_text(json.dumps(plan_doc()))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(plan_doc(grid={"d": [1], "n": [30], "beta": [1.0], "h": [1.0]})))
    assert main(["validate", "--plan", str(good)]) == 0
    assert json.loads(capsys.readouterr().out)["name"] == "t"
    assert main(["validate", "--plan", str(bad)]) == 1
    assert "enumeration cap" in capsys.readouterr().err
    assert main(["exact", "--plan", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["exact", "--plan", str(good), "--out", str(tmp_path / "o")]) == 0
    assert main(["run", "--plan", str(tmp_path / "missing.json")]) == 2
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["exact", "--plan", str(good), "--out", str(blocker / "x")]) == 2
    assert main(["validate"]) == 1
    assert main(["--workers", "0", "validate", "--plan", str(good)]) == 1


def test_cli_run_trend_replay(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["exact", "--plan", "smoke", "--out", str(out), "--workers", "1"]) == 0
    assert (out / "manifest.json").exists() and (out / "overlap-variance.csv").exists()
    assert main(["trend", str(out)]) == 0
    trends = json.loads((out / "trends.json").read_text())
    assert any(t["observable"] == "overlap-variance" for t in trends)
    assert main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "again"), "--workers", "2"]) == 0
    assert "replay identical" in capsys.readouterr().out
    man = json.loads((out / "manifest.json").read_text())
    man["outputs"]["constant.csv"] = "0" * 64
    (out / "manifest.json").write_text(json.dumps(man))
    assert main(["replay", str(out), "--out", str(tmp_path / "third")]) == 2


def test_cli_gg_and_seed_base(tmp_path):
    out = tmp_path / "gg"
    assert main(["gg", "--plan", "smoke", "--out", str(out), "--m", "2", "--f", "R12", "--seed-base", "100"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["plan"]["observables"] == [{"name": "gg-residual", "m": 2, "f": "R12"}]
    assert man["cells"][0]["seeds"][0] == 100
    assert (out / "gg-residual_m_2_f_R12.csv").exists() or any(out.glob("gg-residual*.csv"))


def test_cli_mcmc_subcommand(tmp_path):
    doc = plan_doc(engine={"kind": "exact", "sampler": {"burn_in": 20, "sweeps": 520}},
                   observables=["overlap-variance"])
    p = tmp_path / "p.json"
    p.write_text(json.dumps(doc))
    assert main(["mcmc", "--plan", str(p), "--out", str(tmp_path / "m")]) == 0
    man = json.loads((tmp_path / "m" / "manifest.json").read_text())
    assert man["cells"][0]["engine"] == "mcmc"
