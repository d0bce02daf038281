import hashlib
import json
import subprocess
import sys

import pytest

from momentalign.cli import main

SMALL = ["--plain", "4", "--ordinal", "2", "--relational", "2", "--dim", "8"]


def _digest(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, run = root / "data", root / "run"
    assert main(["generate", "--seed", "7", "--out", str(data), *SMALL]) == 0
    common = ["--features", str(data / "features"), "--annotations", str(data / "annotations.jsonl")]
    assert main(["train", *common, "--vocab", str(data / "vocab.txt"), "--epochs", "2",
                 "--dim", "8", "--cells", "1", "--lr", "1e-3", "--out", str(run)]) == 0
    ckpt = str(run / "checkpoint.json")
    assert main(["predict", *common, "--checkpoint", ckpt, "--out", str(root / "p.jsonl")]) == 0
    assert main(["eval", "--predictions", str(root / "p.jsonl"),
                 "--annotations", str(data / "annotations.jsonl"), "--out", str(root / "r.json")]) == 0
    assert main(["export-graph", *common, "--checkpoint", ckpt, "--sample", "3",
                 "--out", str(root / "g.json")]) == 0
    return root


def test_generate_layout(pipeline):
    data = pipeline / "data"
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["run_config"]["seed"] == 7
    assert (data / "vocab.txt").read_text().splitlines()[0] == "<unk>"
    assert len((data / "annotations.jsonl").read_text().splitlines()) == 8


def test_train_outputs(pipeline):
    log = (pipeline / "run" / "train_log.csv").read_text().splitlines()
    assert log[0].startswith("# run_config: ")
    assert json.loads(log[0][len("# run_config: "):])["hyperparams"]["epochs"] == 2
    assert log[1] == "epoch,loss,rank1" and len(log) == 4
    assert (pipeline / "run" / "checkpoint.bin").exists()


def test_eval_report(pipeline):
    rep = json.loads((pipeline / "r.json").read_text())
    assert rep["protocol"] == "didemo" and rep["num_queries"] == 8
    assert set(rep["metrics"]) == {"Rank@1", "Rank@5", "mIoU"}
    assert rep["extra"]["run_config"]["subcommand"] == "eval"


def test_graph_export(pipeline):
    g = json.loads((pipeline / "g.json").read_text())
    assert g["query_id"] == "q00003" and len(g["moments"]) == 21 and len(g["scores"]) == 21


def test_generate_is_byte_identical(tmp_path, monkeypatch):
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        monkeypatch.chdir(tmp_path / name)
        assert main(["generate", "--seed", "7", "--out", "data", *SMALL]) == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_export_graph_by_query_id(pipeline):
    data = pipeline / "data"
    out = pipeline / "g2.json"
    assert main(["export-graph", "--features", str(data / "features"),
                 "--annotations", str(data / "annotations.jsonl"),
                 "--checkpoint", str(pipeline / "run" / "checkpoint.json"),
                 "--sample", "q00003", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["moments"] == json.loads((pipeline / "g.json").read_text())["moments"]


def test_resume_matches_straight_run(pipeline, tmp_path):
    data = pipeline / "data"
    common = ["--features", str(data / "features"), "--annotations", str(data / "annotations.jsonl"),
              "--vocab", str(data / "vocab.txt"), "--dim", "8", "--cells", "1", "--lr", "1e-3"]
    assert main(["train", *common, "--epochs", "1", "--out", str(tmp_path / "half")]) == 0
    assert main(["train", *common, "--epochs", "2", "--out", str(tmp_path / "half"),
                 "--checkpoint", str(tmp_path / "half" / "checkpoint.json")]) == 0
    straight = pipeline / "run" / "checkpoint.bin"
    assert (tmp_path / "half" / "checkpoint.bin").read_bytes() == straight.read_bytes()


@pytest.mark.parametrize("argv, needle", [
    (["train", "--features", "nowhere", "--annotations", "x.jsonl"], "--features"),
    (["eval", "--predictions", "missing.jsonl", "--annotations", "a.jsonl", "--out", "r.json"],
     "missing.jsonl"),
    (["gradcheck", "--only", "bogus"], "bogus"),
    (["generate", "--events", "40"], "events"),
])
def test_user_errors_are_one_line(argv, needle, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    err = capsys.readouterr().err
    assert needle in err and "Traceback" not in err and len(err.strip().splitlines()) == 1


def test_bad_flag_exits_two(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train", "--nonsense"])
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_gradcheck_subset(tmp_path, capsys):
    assert main(["gradcheck", "--only", "tanh", "lstm", "--out", str(tmp_path / "g.json")]) == 0
    out = capsys.readouterr().out
    assert "tanh" in out and "lstm" in out and "max relative error" in out
    assert set(json.loads((tmp_path / "g.json").read_text())["errors"]) == {"tanh", "lstm"}


def test_console_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "momentalign.cli", "--version"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 0 and "momentalign" in proc.stdout
