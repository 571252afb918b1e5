import json

import pytest

from transtagger.cli import main
from transtagger.data import load_posts


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert main(["train", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_version():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_missing_checkpoint_is_runtime_error(tmp_path, capsys):
    (tmp_path / "posts.jsonl").write_text("")
    assert main(["eval", "--checkpoint", str(tmp_path / "nope"), "--data", str(tmp_path / "posts.jsonl")]) == 2
    assert "manifest" in capsys.readouterr().err


def test_bad_config_is_runtime_error(tmp_path):
    (tmp_path / "run.json").write_text(json.dumps({"learning_rate": 1}))
    assert main(["train", "--config", str(tmp_path / "run.json")]) == 2


def test_pipeline(tmp_path, capsys):
    synth = {"n_pois": 5, "n_themes": 2, "n_subthemes": 3, "posts_per_poi": 10, "vocab_size": 30}
    (tmp_path / "synth.json").write_text(json.dumps(synth))
    run = {
        "encoder": {"layers": 1, "heads": 2, "hidden": 8, "ff": 8, "max_len": 20},
        "fusion": {"layers": 1, "heads": 2, "width": 8, "ff": 8},
        "epochs": 1,
        "batch_size": 16,
        "data": "d/labelled.jsonl",
        "pois": "d/pois.json",
        "out": "ckpt",
    }
    (tmp_path / "run.json").write_text(json.dumps(run))
    d = tmp_path / "d"
    assert main(["gen-synth", "--config", str(tmp_path / "synth.json"), "--out", str(d), "--seed", "3"]) == 0
    assert all(p.label is None for p in load_posts(d / "posts.jsonl"))
    assert main(["prepare", "--posts", str(d / "posts.jsonl"), "--pois", str(d / "pois.json"), "--out", str(d / "labelled.jsonl")]) == 0
    assert len(load_posts(d / "labelled.jsonl")) == 50
    assert main(["train", "--config", str(tmp_path / "run.json")]) == 0
    ckpt = tmp_path / "ckpt"
    assert (ckpt / "history.csv").read_text().startswith("epoch,batch_loss,train_loss,val_acc1\n")
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(ckpt / "test.jsonl"), "--out", str(tmp_path / "m.json")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report == json.loads((tmp_path / "m.json").read_text())
    assert report["n_examples"] == 5 and 0.0 <= report["acc1"] <= report["acc5"] <= 1.0
