import csv
import json

import pytest

from collective_intent.cli import main

from test_sweep import TINY


@pytest.fixture()
def spec_file(tmp_path):
    p = tmp_path / "spec.json"
    p.write_text(json.dumps({**TINY, "schema_version": 1}))
    return p


def test_missing_config_exits_1(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["sweep", "--config", str(missing), "--out", str(tmp_path / "o")]) == 1
    assert str(missing) in capsys.readouterr().err


def test_unknown_flag_and_subcommand_exit_1(capsys):
    assert main(["sweep", "--bogus"]) == 1
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_config_without_schema_version(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"scenario": 3}))
    assert main(["sweep", "--config", str(p), "--out", str(tmp_path)]) == 1


def test_eval_without_checkpoints_is_a_config_error(spec_file, tmp_path):
    assert main(["eval", "--config", str(spec_file), "--out", str(tmp_path)]) == 1


def test_sweep_then_replay(spec_file, tmp_path, capsys):
    out = tmp_path / "results"
    assert main(["sweep", "--config", str(spec_file), "--seed", "1", "--out", str(out), "--deterministic"]) == 0
    for name in ("results.csv", "results.json", "frames.csv", "manifest.json", "spec.json"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "sweep" and manifest["seed"] == 1 and len(manifest["config_hash"]) == 64
    assert manifest["config"]["seeds"] == [1]
    capsys.readouterr()
    with open(out / "frames.csv") as fh:
        episode = next(csv.DictReader(fh))["episode"]
    assert main(["replay", "--log", str(out), "--episode", episode, "--dump-messages", "--out", str(tmp_path / "rp")]) == 0
    text = capsys.readouterr().out
    assert "0 mismatches" in text and "msg {" in text


def test_gen_train_eval_chain(spec_file, tmp_path):
    d = tmp_path / "d"
    assert main(["gen-data", "--config", str(spec_file), "--out", str(d)]) == 0
    data = d / "dataset_seed0.npz"
    assert data.exists()
    m = tmp_path / "m"
    assert main(["train", "--config", str(spec_file), "--data", str(data), "--out", str(m)]) == 0
    e = tmp_path / "e"
    assert main(["eval", "--config", str(spec_file), "--data", str(data), "--checkpoints",
                 str(m / "checkpoints"), "--out", str(e)]) == 0
    assert (e / "results.csv").read_text().count("\n") == 1 + 2 * 5
