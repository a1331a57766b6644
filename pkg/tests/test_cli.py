import json
import subprocess
import sys

import numpy as np
import pytest

from profilebench.cli import main


@pytest.fixture
def metrics(tmp_path):
    p = tmp_path / "metrics.csv"
    p.write_text(
        "dataset,model,metric,value\n"
        "mnist,InceptionV3,accuracy,0.95\nmnist,VGG16,accuracy,0.9\nmnist,EfficientNet,accuracy,0.85\n"
        "mnist,ResNet50,accuracy,0.8\nleaf,InceptionV3,accuracy,0.85\nleaf,VGG16,accuracy,0.8\n"
        "leaf,EfficientNet,accuracy,0.95\nleaf,ResNet50,accuracy,0.9\n"
    )
    return p


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["rank", "--metrics", "x.csv"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--network", "N1", "--theta", "a,b", "--population", "p.json", "--out", "o.json"])
    assert info.value.code == 1


def test_rank(metrics, tmp_path, capsys):
    assert main(["rank", "--metrics", str(metrics), "--base", "mnist", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "distances.csv").read_text().splitlines()
    assert text[0] == "base_dataset,dataset,metric,euclidean,kendall_raw,kendall_norm"
    assert "mnist,leaf,accuracy,4.0,4,0.6666666666666666" in text


def test_missing_file_is_data_error(tmp_path):
    assert main(["rank", "--metrics", str(tmp_path / "none.csv"), "--base", "x", "--out", str(tmp_path)]) == 2


def test_bad_data_is_data_error(metrics, tmp_path):
    assert main(["rank", "--metrics", str(metrics), "--base", "cifar", "--out", str(tmp_path)]) == 2


def test_simulate(tmp_path):
    pop = tmp_path / "pop.json"
    pop.write_text(json.dumps({"log_mean": [0, 0, 0], "log_cov": np.zeros((3, 3)).tolist(), "n_cells": 3,
                               "times": [0, 1]}))
    out = tmp_path / "m.json"
    assert main(["simulate", "--network", "N2", "--theta", "1,0.5", "--population", str(pop), "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["species"] == ["A", "B", "C"]
    assert data["means"][0] == [1.0, 1.0, 1.0]
    assert data["means"][1][0] == pytest.approx(np.exp(-1.0), rel=1e-6)


def test_simulate_numerical_failure(tmp_path):
    pop = tmp_path / "pop.json"
    pop.write_text(json.dumps({"log_mean": [5, 5], "log_cov": [[0, 0], [0, 0]], "n_cells": 1, "times": [0, 10]}))
    net = tmp_path / "net.json"
    # autocatalysis A + A -> 3A explodes in finite time
    net.write_text(json.dumps({"species": ["A", "B"], "n_params": 1,
                               "reactions": [{"reactants": {"A": 2}, "products": {"A": 3}, "theta_index": 0}]}))
    code = main(["simulate", "--network", str(net), "--theta", "10", "--population", str(pop),
                 "--out", str(tmp_path / "o.json"), "--step", "0.5"])
    assert code == 3


def test_gbm_train_eval_and_sweep(tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"optimizers": ["adam", "sgd"], "learning_rates": [0.01], "activations": ["softmax"]}))
    ds = tmp_path / "ds.json"
    ds.write_text(json.dumps({"n_samples": 120, "n_features": 3, "n_classes": 2}))
    zoo = tmp_path / "zoo"
    assert main(["synth", "--grid", str(grid), "--dataset", str(ds), "--epochs", "4", "--out", str(zoo)]) == 0
    table = tmp_path / "t.csv"
    assert main(["extract", "--manifest", str(zoo / "manifest.json"), "--cap", "0.5", "--out", str(table)]) == 0
    assert len(table.read_text().splitlines()) == 1 + 2 * 2
    params = tmp_path / "p.json"
    params.write_text(json.dumps({"n_trees": 3}))
    model = tmp_path / "model.json"
    assert main(["gbm", "train", "--table", str(table), "--params", str(params), "--model", str(model)]) == 0
    assert main(["gbm", "eval", "--model", str(model), "--table", str(table), "--out", str(tmp_path / "e.json")]) == 0
    assert json.loads((tmp_path / "e.json").read_text())["n_rows"] == 4
    sweep = tmp_path / "sweep"
    assert main(["sweep", "--manifest", str(zoo / "manifest.json"), "--params", str(params), "--out", str(sweep)]) == 0
    assert len((sweep / "sweep_report.csv").read_text().splitlines()) == 7
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"depth": 3}))
    assert main(["gbm", "train", "--table", str(table), "--params", str(bad), "--model", str(model)]) == 2


def test_pso(tmp_path):
    nets = tmp_path / "nets"
    nets.mkdir()
    pop = {"log_mean": [0, 0, 0], "log_cov": (0.05 * np.eye(3)).tolist(), "n_cells": 10, "times": [0, 1.5]}
    for name, net in (("n1", "N1"), ("n2", "N2")):
        (nets / f"{name}.json").write_text(json.dumps({"name": name, "network": net, "population": pop,
                                                      "theta_true": [1.0, 0.5]}))
    out = tmp_path / "out"
    out.mkdir()
    args = ["pso", "--networks", str(nets), "--runs", "2", "--particles", "5", "--epochs", "2", "--out", str(out)]
    assert main(args) == 0
    assert len((out / "pso_report.csv").read_text().splitlines()) == 1 + 2 * 5
    assert len((out / "pso_distances.csv").read_text().splitlines()) == 1 + 2 * 4


def test_pipeline_missing_config(tmp_path):
    assert main(["pipeline", "--out", str(tmp_path)]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "profilebench", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "pipeline" in proc.stdout
