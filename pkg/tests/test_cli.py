import json

import numpy as np
import pytest

from nasfas.cli import main
from nasfas.genotype import load_genotype
from nasfas.search_spaces import fas_space, validate_genotype


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen", "--out", str(root), "--n-per-class", "6", "--domains", "indoor,warm,cool",
                 "--resolution", "64", "--seed", "1"]) == 0
    return root


def test_gen_layout(dataset):
    index = json.loads((dataset / "index.json").read_text())
    assert index["domains"] == ["indoor", "warm", "cool"]
    assert len(index["samples"]) == 36
    assert (dataset / "clips" / "00000" / "frame_06.png").exists()


def test_help_and_usage_errors(tmp_path, capsys):
    assert main(["--help"]) == 0
    assert main(["train"]) == 1  # missing required options
    assert main(["search", "--data", str(tmp_path), "--out", str(tmp_path / "o"), "--space", "hex"]) == 1


def test_config_errors(tmp_path, dataset):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"fly": {"epochs": 1}}))
    assert main(["--config", str(bad), "train", "--data", str(dataset), "--out", str(tmp_path / "o")]) == 1
    bad.write_text("{not json")
    assert main(["--config", str(bad), "gen", "--out", str(tmp_path / "g")]) == 1
    # leave-one-out without a holdout
    assert main(["train", "--data", str(dataset), "--split", "leave-one-domain-out", "--out",
                 str(tmp_path / "o")]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(tmp_path, dataset):
    code = main(["train", "--data", str(dataset), "--out", str(tmp_path / "o"), "--epochs", "3", "--lr", "1e12",
                 "--width", "0.0625"])
    assert code == 2


def test_dynimg(tmp_path, dataset):
    out = tmp_path / "dyn"
    assert main(["dynimg", "--frames", str(dataset / "clips" / "00000"), "--out", str(out), "--k", "5"]) == 0
    for name in ("dynamic.png", "dynamic.cdnt", "fused.png", "fused.cdnt"):
        assert (out / name).exists()


def test_train_and_eval(tmp_path, dataset):
    out = tmp_path / "train"
    assert main(["train", "--data", str(dataset), "--out", str(out), "--epochs", "12", "--lr", "2e-3",
                 "--batch-size", "4", "--variant", "depthnet"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["acer"] < 0.5
    assert (out / "report.csv").exists()
    log = [json.loads(line) for line in (out / "train_log.jsonl").read_text().splitlines()]
    assert len(log) == 12 and all(np.isfinite(r["loss"]) for r in log)
    ev = tmp_path / "eval"
    assert main(["eval", "--data", str(dataset), "--checkpoint", str(out / "checkpoint.zip"), "--out", str(ev)]) == 0
    again = json.loads((ev / "metrics.json").read_text())
    assert again["acer"] == pytest.approx(report["acer"])


def test_search_retrain_compare(tmp_path, dataset):
    s = tmp_path / "search"
    assert main(["search", "--data", str(dataset), "--split", "leave-one-domain-out", "--holdout", "cool",
                 "--out", str(s), "--epochs", "1", "--iterations", "2", "--channels", "2",
                 "--batch-size", "2"]) == 0
    g = load_genotype(s / "genotype.json")
    validate_genotype(g, fas_space())
    assert len((s / "search_log.jsonl").read_text().splitlines()) == 2

    r = tmp_path / "retrain"
    assert main(["retrain", "--data", str(dataset), "--split", "leave-one-domain-out", "--holdout", "cool",
                 "--genotype", str(s / "genotype.json"), "--epochs", "1", "--out", str(r)]) == 0
    assert (r / "checkpoint.zip").exists()
    assert main(["eval", "--data", str(dataset), "--split", "leave-one-domain-out", "--holdout", "cool",
                 "--checkpoint", str(r / "checkpoint.zip"), "--out", str(tmp_path / "ev")]) == 0

    # the searched genotype against itself: identical training, so RI is exactly zero
    c = tmp_path / "compare"
    assert main(["compare", "--data", str(dataset), "--split", "leave-one-domain-out", "--holdout", "cool",
                 "--genotype", str(s / "genotype.json"), "--random-genotype", str(s / "genotype.json"),
                 "--epochs", "1", "--out", str(c)]) == 0
    summary = json.loads((c / "summary.json").read_text())
    assert summary["ri"] == 0.0
    assert summary["acer_searched"] == summary["acer_random"]
