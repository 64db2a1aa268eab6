import json

import numpy as np
import pytest

from dynrecip.cli import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, main
from dynrecip.evaluation import forecast_auc
from dynrecip.model import Hyperparams, ModelParams
from dynrecip.temporal_graph import preprocess, read_edgelist

FIT = ["--K", "2", "--restarts", "2", "--max-iter", "300", "--seed", "7"]


@pytest.fixture(scope="module")
def network(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["generate", "--nodes", "60", "--K", "2", "--avg-degree", "4", "--T", "3",
                 "--seed", "3", "--out", str(out)]) == EXIT_OK
    return out / "network.txt"


def read_all(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_generate_outputs(network):
    d = network.parent
    assert {"network.txt", "params.json", "config.json"} <= set(read_all(d))
    params = ModelParams.from_json((d / "params.json").read_text())
    assert params.n_nodes == 60 and params.eta == 0.5
    assert json.loads((d / "config.json").read_text())["generator"]["seed"] == 3


def test_generate_is_byte_reproducible(tmp_path, network):
    args = ["generate", "--nodes", "60", "--K", "2", "--avg-degree", "4", "--T", "3", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path)]) == EXIT_OK
    assert read_all(tmp_path) == read_all(network.parent)


def test_generate_rejects_bad_beta(tmp_path, capsys):
    assert main(["generate", "--beta", "1.5", "--out", str(tmp_path)]) == EXIT_ERROR
    assert "beta" in capsys.readouterr().err


def test_fit_happy_path_and_reproducible(tmp_path, network):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["fit", "--input", str(network), *FIT, "--out", str(a)]) == EXIT_OK
    assert main(["fit", "--input", str(network), *FIT, "--out", str(b), "--threads", "0"]) == EXIT_OK
    files = read_all(a)
    assert set(files) == {"params.json", "trace.csv", "preprocess_report.json", "config.json"}
    assert files == read_all(b)
    assert files["trace.csv"].startswith(b"iteration,objective\n")


def test_fit_invalid_K_is_usage_error(capsys):
    assert main(["fit", "--K", "0"]) == EXIT_ERROR
    assert "usage error" in capsys.readouterr().err


def test_fit_unknown_flag_and_missing_input(tmp_path):
    assert main(["fit", "--input", str(tmp_path / "none.txt")]) == EXIT_ERROR
    assert main(["fit", "--bogus"]) == EXIT_ERROR
    assert main([]) == EXIT_ERROR


def test_fit_not_converged_exit_code(tmp_path, network):
    args = ["fit", "--input", str(network), "--K", "2", "--restarts", "1", "--max-iter", "3"]
    assert main(args + ["--out", str(tmp_path)]) == EXIT_NOT_CONVERGED


def test_fit_eta_zero(tmp_path, network):
    assert main(["fit", "--input", str(network), *FIT, "--eta-zero", "--out", str(tmp_path)]) == EXIT_OK
    assert json.loads((tmp_path / "params.json").read_text())["eta"] == 0.0


def test_config_overrides_flags(tmp_path, network):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"K": 1, "variant": "w-static", "max-iter": 200}))
    out = tmp_path / "o"
    assert main(["fit", "--input", str(network), *FIT, "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    doc = json.loads((out / "params.json").read_text())
    assert doc["K"] == 1 and doc["variant"] == "w-static"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nope": 1}))
    assert main(["fit", "--input", str(network), "--config", str(bad)]) == EXIT_ERROR


def test_threads_env_default(tmp_path, network, monkeypatch):
    monkeypatch.setenv("DYNRECIP_THREADS", "x")
    assert main(["fit", "--input", str(network), *FIT, "--out", str(tmp_path)]) == EXIT_ERROR
    monkeypatch.setenv("DYNRECIP_THREADS", "2")
    assert main(["fit", "--input", str(network), *FIT, "--out", str(tmp_path)]) == EXIT_OK


def test_predict_matches_module(tmp_path, network):
    assert main(["predict", "--input", str(network), "--t", "2", *FIT, "--out", str(tmp_path)]) == EXIT_OK
    got = json.loads((tmp_path / "predict.json").read_text())["auc"]
    net, _ = preprocess(read_edgelist(network))
    h = Hyperparams(K=2, n_restarts=2, max_iter=300, seed=7)
    assert got == forecast_auc(net, h, "w-dyn", 2)


def test_predict_rejects_first_step(tmp_path, network, capsys):
    assert main(["predict", "--input", str(network), "--t", "0", "--out", str(tmp_path)]) == EXIT_ERROR
    assert "first step" in capsys.readouterr().err


def test_predict_with_params_file(tmp_path, network):
    fit_dir = tmp_path / "fit"
    main(["fit", "--input", str(network), *FIT, "--out", str(fit_dir)])
    out = tmp_path / "p"
    assert main(["predict", "--input", str(network), "--t", "3", "--params",
                 str(fit_dir / "params.json"), "--out", str(out)]) == EXIT_OK
    assert main(["predict", "--input", str(network), "--t", "3", "--params",
                 str(tmp_path / "missing.json"), "--out", str(out)]) == EXIT_ERROR


def test_cv_reports_partition(tmp_path, network):
    assert main(["cv", "--input", str(network), "--K", "1", "2", "--folds", "5",
                 "--restarts", "1", "--max-iter", "100", "--out", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "cv.json").read_text())
    sizes = doc["K"]["2"]["fold_sizes"]
    assert len(sizes) == 5 and max(sizes) - min(sizes) <= 1
    assert doc["best_K"] in (1, 2)
    assert (tmp_path / "cv.csv").read_text().startswith("experiment,t,sample,metric,value\n")


def test_reciprocity_command(tmp_path, network):
    assert main(["reciprocity", "--input", str(network), *FIT, "--samples", "3",
                 "--out", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "reciprocity.json").read_text())
    assert set(doc["steps"]) == {"0", "1", "2", "3"}


def test_empty_input_is_an_error(tmp_path):
    f = tmp_path / "empty.txt"
    f.write_text("# nothing\n")
    assert main(["fit", "--input", str(f)]) == EXIT_ERROR
