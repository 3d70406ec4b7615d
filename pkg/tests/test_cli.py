import json

import numpy as np
import pytest

from driftless.cli import main
from driftless.market import read_weights_csv
from driftless.var_model import (
    VarParams,
    desk_grid,
    desk_params,
    synthetic_history,
    write_history_csv,
)


@pytest.fixture(scope="module")
def params_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("params")
    p = d / "params.json"
    desk_params(desk_grid()).to_json(p)
    return p


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory, params_file):
    d = tmp_path_factory.mktemp("bundle") / "b"
    rc = main([
        "simulate", "--params", str(params_file),
        "--paths", "200", "--steps", "4", "--out", str(d),
    ])
    assert rc == 0
    return d


def write_cost(d, gamma=0.001):
    f = d / "cost.json"
    f.write_text(json.dumps({"gamma": gamma, "mode": "marginal"}))
    return f


def write_utility(d):
    f = d / "utility.json"
    f.write_text(json.dumps({"family": "exponential", "lam": 1.0}))
    return f


def write_train(d, epochs=15):
    f = d / "train.json"
    f.write_text(json.dumps({"epochs": epochs, "lr": 0.01, "seed": 0}))
    return f


def test_fit_var_round_trip(tmp_path):
    params = desk_params(desk_grid())
    hist = synthetic_history(params, 4000, seed=1)
    hfile = tmp_path / "history.csv"
    write_history_csv(hfile, hist, desk_grid())
    out = tmp_path / "fitted.json"
    assert main(["fit-var", "--history", str(hfile), "--out", str(out)]) == 0
    fitted = VarParams.from_json(out)
    assert fitted.a1.shape == params.a1.shape
    manifest = json.loads((tmp_path / "run.json").read_text())
    assert manifest["stage"] == "fit-var"
    assert str(hfile) in manifest["inputs"]


def test_simulate_deterministic(tmp_path, params_file):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        rc = main([
            "--seed", "3", "simulate", "--params", str(params_file),
            "--paths", "50", "--steps", "3", "--out", str(out),
        ])
        assert rc == 0
    assert (a / "paths.csv").read_bytes() == (b / "paths.csv").read_bytes()
    manifest = json.loads((a / "run.json").read_text())
    assert manifest["seed"] == 3
    assert manifest["stage"] == "simulate"


def test_make_q_verify_pipeline(tmp_path, bundle_dir):
    cost = write_cost(tmp_path)
    util = write_utility(tmp_path)
    train_cfg = write_train(tmp_path)
    weights = tmp_path / "weights.csv"
    rc = main([
        "make-q", "--bundle", str(bundle_dir), "--cost", str(cost),
        "--utility", str(util), "--train", str(train_cfg),
        "--out", str(weights),
    ])
    assert rc == 0
    w = read_weights_csv(weights)
    assert w.shape == (200,)
    assert np.all(w > 0)
    assert w.mean() == pytest.approx(1.0, abs=1e-12)
    assert (tmp_path / "weights.csv.solution.json").exists()

    report = tmp_path / "report"
    rc = main([
        "verify", "--bundle", str(bundle_dir), "--weights", str(weights),
        "--cost", str(cost), "--report", str(report),
    ])
    assert rc == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert len(doc["rows"]) > 0
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "t,instrument,mean_dh,se,band_lo,band_hi,pass"


def test_verify_missing_weights_is_validation_error(tmp_path, bundle_dir, capsys):
    cost = write_cost(tmp_path)
    missing = tmp_path / "nope.csv"
    rc = main([
        "verify", "--bundle", str(bundle_dir), "--weights", str(missing),
        "--cost", str(cost), "--report", str(tmp_path / "r"),
    ])
    assert rc == 1
    assert str(missing) in capsys.readouterr().err


def test_hedge_and_robustness(tmp_path, bundle_dir):
    cost = write_cost(tmp_path)
    util = write_utility(tmp_path)
    train_cfg = write_train(tmp_path)
    pay = tmp_path / "payoff.json"
    pay.write_text(json.dumps({
        "kind": "vanilla_call", "rel_strike": 1.0,
        "maturity_steps": 4, "side": -1,
    }))
    out = tmp_path / "hedge.json"
    rc = main([
        "hedge", "--bundle", str(bundle_dir), "--payoff", str(pay),
        "--cost", str(cost), "--utility", str(util),
        "--train", str(train_cfg), "--out", str(out),
    ])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert "certainty_equivalent" in doc
    hist = (tmp_path / "hedge.json.pnl_hist.csv").read_text().splitlines()
    assert hist[0] == "bin_lo,bin_hi,count"
    assert sum(int(r.split(",")[2]) for r in hist[1:]) == 200

    weights = tmp_path / "w.csv"
    w = np.ones(200)
    from driftless.market import write_weights_csv

    write_weights_csv(weights, w)
    rob = tmp_path / "rob.json"
    rc = main([
        "robustness", "--bundle", str(bundle_dir), "--weights", str(weights),
        "--payoff", str(pay), "--cost", str(cost), "--utility", str(util),
        "--train", str(train_cfg), "--entropies", "0.0,0.1",
        "--out", str(rob),
    ])
    assert rc == 0
    doc = json.loads(rob.read_text())
    assert [e["c"] for e in doc["entries"]] == [0.0, 0.1]
    assert doc["entries"][0]["delta_p"] == pytest.approx(0.0, abs=1e-12)


def test_missing_params_file(tmp_path, capsys):
    rc = main([
        "simulate", "--params", str(tmp_path / "absent.json"),
        "--paths", "5", "--steps", "2", "--out", str(tmp_path / "o"),
    ])
    assert rc == 1
    assert "absent.json" in capsys.readouterr().err


def test_demo_small(tmp_path):
    rc = main([
        "--seed", "1", "demo", "--paths", "300", "--steps", "4",
        "--epochs", "20", "--out", str(tmp_path / "demo"),
    ])
    assert rc == 0
    for name in ("params.json", "weights.csv", "drift_uniform.csv",
                 "drift_q.csv", "run.json"):
        assert (tmp_path / "demo" / name).exists()
