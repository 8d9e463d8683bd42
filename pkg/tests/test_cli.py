import json
import subprocess
import sys

import numpy as np
import pytest

from robustprop.cli import main
from robustprop.data import gen_two_moons, save_csv
from robustprop.experiment import ExperimentConfig
from robustprop.metrics import MetricReport
from robustprop.nn import Layer, Network, save_model

from conftest import random_net


@pytest.fixture
def config_file(tmp_path):
    cfg = ExperimentConfig(
        name="cli", seeds=[0], out_dir=str(tmp_path / "run"),
        dataset={"kind": "two_moons", "n": 60, "noise": 0.1}, eval_limit=8, hidden=[8],
        modes=["baseline", "constraint_sr"], epochs=4, batch_size=16, lr=1e-2, epsilon=0.05,
        constraint={"SR": {"delta": 1.0}}, attack={"steps": 4},
        properties=[{"kind": "SR", "delta": 1.0}, {"kind": "CR"}], epsilons=[0.0, 0.05],
        metrics=["security", "accuracy"], n_samples=10, max_nodes=2000,
    )
    path = tmp_path / "cfg.toml"
    path.write_text(cfg.to_toml())
    return path


def test_train_evaluate_report(tmp_path, config_file, capsys):
    assert main(["train", "--config", str(config_file)]) == 0
    out = capsys.readouterr().out
    assert "baseline seed=0" in out and "constraint_sr seed=0" in out
    assert (tmp_path / "run" / "models" / "baseline_seed0.json").exists()
    assert main(["evaluate", "--config", str(config_file), "--per-point"]) == 0
    ev = tmp_path / "run" / "evaluation.csv"
    first = ev.read_bytes()
    assert first.decode().splitlines()[0].startswith("config_hash,seed,net,property,epsilon,metric")
    assert len(list((tmp_path / "run" / "reports").glob("*.csv"))) == 2 * 2 * 2 * 2
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["command"] == "evaluate" and manifest["config_hash"]
    # rerun is byte-identical
    assert main(["evaluate", "--config", str(config_file)]) == 0
    assert ev.read_bytes() == first
    capsys.readouterr()
    assert main(["report", "--input", str(ev), "--out-dir", str(tmp_path / "rep")]) == 0
    text = capsys.readouterr().out
    assert text.startswith("net,property,epsilon,metric,n_seeds,mean,min,max")
    assert (tmp_path / "rep" / "summary.csv").read_text() == text


def test_flags_override_config(tmp_path, config_file):
    out = tmp_path / "other"
    assert main(["train", "--config", str(config_file), "--seed", "3", "--out-dir", str(out),
                 "--mode", "baseline"]) == 0
    assert [p.name for p in (out / "models").glob("*.json") if "log" not in p.name] == ["baseline_seed3.json"]


def test_sweep_with_verify_table(tmp_path, config_file):
    assert main(["sweep", "--config", str(config_file), "--verify-table",
                 "--budget-seconds", "5"]) == 0
    run = tmp_path / "run"
    assert (run / "evaluation.csv").exists()
    header = (run / "satisfaction.csv").read_text().splitlines()[0]
    for k in ("CR_satisfaction", "SR_satisfaction", "LR_satisfaction", "clean_accuracy"):
        assert k in header


def test_attack_command(tmp_path, capsys):
    net = random_net([2, 8, 2], 0)
    save_model(net, tmp_path / "m.json")
    save_csv(gen_two_moons(20, 0.1, seed=0), tmp_path / "d.csv")
    assert main(["attack", "--model", str(tmp_path / "m.json"), "--data", str(tmp_path / "d.csv"),
                 "--property", '{"kind": "CR", "epsilon": 0.2}', "--out-dir",
                 str(tmp_path / "att"), "--steps", "5"]) == 0
    assert "security=" in capsys.readouterr().out
    rep = MetricReport.from_csv(tmp_path / "att" / "security.csv")
    rows = (tmp_path / "att" / "adversarial.csv").read_text().splitlines()
    assert rows[0] == "x0,x1,label,margin,violated" and len(rows) == 21
    violated = sum(int(r.split(",")[-1]) for r in rows[1:])
    assert rep.value == pytest.approx(1 - violated / 20)


def test_verify_command(tmp_path, capsys):
    net = Network([Layer(np.eye(2), np.zeros(2), "identity")])
    (tmp_path / "models").mkdir()
    save_model(net, tmp_path / "models" / "id.json")
    query = {"model_path": "models/id.json", "property": {"kind": "SR", "epsilon": 0.1, "delta": 0.05},
             "center": [0.5, 0.5], "label": 0, "budget": {"max_nodes": 100, "max_seconds": 5}}
    q = tmp_path / "q.json"
    q.write_text(json.dumps(query))
    assert main(["verify", "--query", str(q), "--out-dir", str(tmp_path / "v")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["status"] == "VIOLATED" and doc["margin"] >= 1e-6
    assert json.loads((tmp_path / "v" / "verdict.json").read_text()) == doc
    query["property"] = {"kind": "LR", "epsilon": 0.1, "L": 1.0}
    q.write_text(json.dumps(query))
    assert main(["verify", "--query", str(q)]) == 0
    assert json.loads(capsys.readouterr().out)["status"] == "HOLDS"


@pytest.mark.parametrize("args,message", [
    (["train", "--config", "missing.toml"], "missing.toml"),
    (["verify", "--query", "QUERY"], "missing 'label'"),
    (["verify", "--query", "BADJSON"], "invalid JSON"),
])
def test_errors_exit_2(tmp_path, capsys, args, message):
    (tmp_path / "q.json").write_text('{"model_path": "m.json", "property": {}, "center": [0]}')
    (tmp_path / "bad.json").write_text("{not json")
    args = [a.replace("QUERY", str(tmp_path / "q.json")).replace("BADJSON", str(tmp_path / "bad.json"))
            for a in args]
    assert main(args) == 2
    assert message in capsys.readouterr().err


def test_refuses_constraint_cr(tmp_path, config_file, capsys):
    assert main(["train", "--config", str(config_file), "--mode", "constraint_cr"]) == 2
    assert "argmax is not differentiable" in capsys.readouterr().err


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "robustprop", "--version"], capture_output=True,
                         text=True, check=True)
    assert res.stdout.startswith("robustprop ")
    res = subprocess.run([sys.executable, "-m", "robustprop", "verify"], capture_output=True, text=True)
    assert res.returncode == 2 and "--query" in res.stderr
