import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from maskot import cli

FIX = Path(__file__).parent / "fixtures"


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def report(argv, capsys):
    code, out, err = run(argv, capsys)
    assert code == 0, err
    return json.loads(out)


def test_triangular_fixture_with_oracle(capsys):
    r = report(["mwd", "--cost", FIX / "tri_cost.csv", "--mask", "file", "--mask-file", FIX / "tri_mask.csv",
                "--epsilon", "0.001", "--oracle"], capsys)
    assert r["distance"] == pytest.approx(1.0, abs=1e-3)
    assert r["oracle_value"] == pytest.approx(1.0, abs=1e-12)
    assert r["oracle_gap"] <= 0.02


def test_antidiagonal_fixture(capsys):
    r = report(["mwd", "--cost", FIX / "antidiag_cost.csv", "--mask", "ones", "--epsilon", "0.001"], capsys)
    assert r["distance"] <= 0.02


def test_report_fields_and_plan(capsys):
    r = report(["mwd", "--cost", FIX / "antidiag_cost.csv", "--emit-plan"], capsys)
    for key in ("distance", "iterations", "converged", "marginal_residual", "plan", "config"):
        assert key in r
    assert np.asarray(r["plan"]).shape == (2, 2)
    assert r["config"]["epsilon"] == 0.05 and r["config"]["tau"] == 1e-6 and r["config"]["max_iter"] == 10000
    assert r["config"]["normalize"] is False


def test_malformed_cell(capsys):
    code, _, err = run(["mwd", "--cost", FIX / "malformed.csv"], capsys)
    assert code == 1
    assert "row 2, column 1" in err and "abc" in err
    assert len(err.strip().splitlines()) == 1


def test_ragged_csv(capsys):
    code, _, err = run(["mwd", "--cost", FIX / "bad.csv", "--mask", "identity"], capsys)
    assert code == 1 and "square" in err


def test_header_flag(tmp_path, capsys):
    p = tmp_path / "c.csv"
    p.write_text("a,b\n0,1\n1,0\n")
    code, _, err = run(["mwd", "--cost", p], capsys)
    assert code == 1 and "row 1, column 1" in err
    assert report(["mwd", "--cost", p, "--header"], capsys)["distance"] < 0.1


def test_infeasible_exit_code(capsys):
    code, _, err = run(["mwd", "--cost", FIX / "tri_cost.csv", "--mask", "identity",
                        "--row-marginal", "1,0", "--col-marginal", "0,1"], capsys)
    assert code == 2 and "infeasible" in err


def test_missing_file(capsys):
    code, _, err = run(["mwd", "--cost", FIX / "nope.csv"], capsys)
    assert code == 1 and "nope.csv" in err


def test_usage_error_is_input_error(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["mwd", "--bogus"])
    assert e.value.code == 1
    assert run(["mwd", "--source", FIX / "emb_a.csv"], capsys)[0] == 1


def test_graph_mask_and_cosine(capsys):
    r = report(["mwd", "--source", FIX / "emb_a.csv", "--target", FIX / "emb_b.csv", "--cosine",
                "--mask", "graph", "--graph", FIX / "path4.json", "--emit-plan"], capsys)
    plan = np.asarray(r["plan"])
    assert plan[0, 2] == 0 and plan[0, 3] == 0 and plan[1, 3] == 0


def _rebuild_args(cfg):
    args = ["mwd", "--epsilon", repr(cfg["epsilon"]), "--tau", repr(cfg["tau"]), "--max-iter", str(cfg["max_iter"]),
            "--mask", cfg["mask"], "--normalize" if cfg["normalize"] else "--no-normalize",
            "--row-marginal", ",".join(repr(x) for x in cfg["row_marginal"]),
            "--col-marginal", ",".join(repr(x) for x in cfg["col_marginal"])]
    for key, flag in (("cost", "--cost"), ("source", "--source"), ("target", "--target"),
                      ("graph", "--graph"), ("mask_file", "--mask-file")):
        if cfg[key] is not None:
            args += [flag, cfg[key]]
    for key in ("cosine", "header"):
        if cfg[key]:
            args.append("--" + key)
    return args


@pytest.mark.parametrize("argv", [
    ["--cost", FIX / "tri_cost.csv", "--mask", "file", "--mask-file", FIX / "tri_mask.csv", "--epsilon", "0.1"],
    ["--source", FIX / "emb_a.csv", "--target", FIX / "emb_b.csv", "--cosine", "--mask", "graph",
     "--graph", FIX / "path4.json", "--normalize"],
    ["--source", FIX / "emb_a.csv", "--target", FIX / "emb_b.csv", "--row-marginal", "0.1,0.2,0.3,0.4"],
])
def test_config_echo_round_trip(argv, capsys):
    first = report(["mwd", *argv], capsys)
    second = report(_rebuild_args(first["config"]), capsys)
    assert second == first


def test_gtot_identical_embeddings(capsys):
    r = report(["gtot", "--graph", FIX / "path4.json", "--source", FIX / "emb_a.csv",
                "--target", FIX / "emb_a.csv", "--epsilon", "0.01"], capsys)
    assert r["mwd"] <= 0.05
    assert r["config"]["normalize"] is True


def test_gtot_combined_penalty(capsys):
    r = report(["gtot", "--graph", FIX / "path4.json", "--source", FIX / "emb_a.csv",
                "--target", FIX / "emb_b.csv", "--mgwd", "--lambda", "1", "--beta", "1"], capsys)
    assert abs(r["combined_penalty"] - (r["mwd"] + r["mgwd"])) <= 1e-12


def test_gtot_bad_edge(capsys):
    code, _, err = run(["gtot", "--graph", FIX / "bad_edge.json", "--source", FIX / "emb_a.csv",
                        "--target", FIX / "emb_a.csv"], capsys)
    assert code == 1 and "out of range" in err


def test_gtot_bad_json(tmp_path, capsys):
    p = tmp_path / "g.json"
    p.write_text("{n: 3")
    assert run(["gtot", "--graph", p, "--source", FIX / "emb_a.csv", "--target", FIX / "emb_a.csv"], capsys)[0] == 1


def test_out_file(tmp_path, capsys):
    out = tmp_path / "r.json"
    code, stdout, _ = run(["mwd", "--cost", FIX / "antidiag_cost.csv", "--out", out], capsys)
    assert code == 0 and stdout == ""
    assert json.loads(out.read_text())["distance"] < 0.1


@pytest.mark.parametrize("sub", ["mwd", "gtot", "demo"])
def test_version_and_help(sub, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main([sub, "--version"])
    assert e.value.code == 0 and "0.1.0" in capsys.readouterr().out
    with pytest.raises(SystemExit) as e:
        cli.main([sub, "--help"])
    assert e.value.code == 0 and "usage" in capsys.readouterr().out


def test_demo_deterministic_history(tmp_path, capsys):
    paths = [tmp_path / "h1.csv", tmp_path / "h2.csv"]
    for p in paths:
        code, out, _ = run(["demo", "--seed", "7", "--epochs", "5", "--out-history", p], capsys)
        assert code == 0
        summary = json.loads(out)
        assert {"final_objective", "weight_distance"} <= set(summary)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_demo_plain_training(tmp_path, capsys):
    p = tmp_path / "h.csv"
    assert run(["demo", "--lambda", "0", "--epochs", "50", "--out-history", p], capsys)[0] == 0
    rows = list(csv.DictReader(p.open()))
    assert len(rows) == 51
    assert float(rows[-1]["task_loss"]) < float(rows[0]["task_loss"])


def test_demo_gradcheck_passes(capsys):
    code, out, _ = run(["demo", "--epochs", "1", "--gradcheck"], capsys)
    assert code == 0 and json.loads(out)["gradcheck_error"] <= 1e-3


def test_demo_gradcheck_failure_exit_code(monkeypatch, capsys):
    import maskot.demo

    monkeypatch.setattr(maskot.demo, "gradient_check", lambda *a, **k: 0.5)
    code, _, err = run(["demo", "--epochs", "1", "--gradcheck"], capsys)
    assert code == 3 and "gradient check failed" in err


def test_demo_gradcheck_fails_before_training(monkeypatch):
    import maskot.demo

    checked = []
    real_finetune = maskot.demo.gtot_finetune

    def finetune(*a, **k):
        # pretraining runs through the same loop before the check
        assert not checked, "fine-tuning ran after a failed gradient check"
        return real_finetune(*a, **k)

    monkeypatch.setattr(maskot.demo, "gradient_check", lambda *a, **k: checked.append(1) or 0.5)
    monkeypatch.setattr(maskot.demo, "gtot_finetune", finetune)
    assert maskot.demo.run_demo(epochs=1, gradcheck=True, gradcheck_tol=1e-3).history == []


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "maskot", "mwd", "--cost", str(FIX / "antidiag_cost.csv")],
                       capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["distance"] < 0.1
