import csv
import json
import re

import pytest

from editgrpo.cli import ConfigError, apply_override, build_run_config, main

SMALL = {
    "seed": 0,
    "n_cases": 40,
    "trainer": {"variant": "editgrpo", "steps": 3, "batch_cases": 4, "sft_epochs": 1, "checkpoint_every": 0},
}

EX1_X = "No pleural effusion."
EX1_Y = "Small left pleural effusion."


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == 2
    assert "not found" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"trainer": {"stepz": 3}}))
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "stepz" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        build_run_config({"colour": 1})


def test_overrides():
    doc = {}
    apply_override(doc, "steps=0")
    apply_override(doc, "world.normal_fraction=0.5")
    apply_override(doc, "variant=grpo")
    apply_override(doc, "seed=4")
    rc = build_run_config(doc)
    assert rc.trainer.steps == 0 and rc.trainer.variant == "grpo" and rc.world.normal_fraction == 0.5
    assert rc.seed == rc.trainer.seed == rc.world.seed == 4
    with pytest.raises(ConfigError):
        apply_override({}, "trainer.nope=1")
    with pytest.raises(ConfigError):
        apply_override({}, "steps")
    with pytest.raises(ConfigError):
        build_run_config({"trainer": {"group_size": 3}})


def test_env_seed(monkeypatch):
    monkeypatch.setenv("EDITGRPO_SEED", "11")
    assert build_run_config({}).seed == 11
    assert build_run_config({"seed": 2}).seed == 2
    monkeypatch.setenv("EDITGRPO_SEED", "x")
    with pytest.raises(ConfigError):
        build_run_config({})


def test_train_self_reproducing(cfg_path, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", str(cfg_path), "--out", str(a)]) == 0
    header = capsys.readouterr().out.splitlines()[0]
    assert header.startswith("# editgrpo ") and '"tau": 0.6' in header
    assert main(["train", "--config", str(a / "resolved_config.json"), "--out", str(b), "--threads", "2"]) == 0
    for f in ("metrics.csv", "traces.jsonl", "eval.jsonl", "ckpt_step3.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_steps_zero_is_checkpoint_copy(cfg_path, tmp_path):
    a = tmp_path / "a"
    assert main(["train", "--config", str(cfg_path), "--out", str(a), "--set", "steps=0", "--set", "sft_epochs=0", "--no-eval"]) == 0
    first = a / "ckpt_step0.json"
    b = tmp_path / "b"
    assert main(["train", "--config", str(cfg_path), "--out", str(b), "--set", "steps=0", "--checkpoint", str(first), "--set", "sft_epochs=0", "--no-eval"]) == 0
    assert (b / "ckpt_step0.json").read_bytes() == first.read_bytes()


def test_gen_world_and_eval(tmp_path, capsys):
    corpus = tmp_path / "c.jsonl"
    assert main(["gen-world", "--set", "seed=3", "--n", "20", "--out", str(corpus)]) == 0
    assert len(corpus.read_text().splitlines()) == 20
    run = tmp_path / "run"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"trainer": {"variant": "sft", "sft_epochs": 1}, "n_cases": 40}))
    assert main(["train", "--config", str(cfg), "--out", str(run), "--no-eval"]) == 0
    capsys.readouterr()
    rc = main(["eval", "--checkpoint", str(run / "ckpt_step0.json"), "--corpus", str(corpus), "--split", "all",
               "--ontology", str(run / "ontology.json"), "--out", str(tmp_path / "ev")])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out.strip())
    assert 0 <= summary["macro_f1_14"] <= 1
    assert len((tmp_path / "ev" / "eval.jsonl").read_text().splitlines()) == 20
    assert main(["eval", "--checkpoint", str(tmp_path / "none.json"), "--corpus", str(corpus)]) != 0


def test_edit_example(capsys):
    assert main(["edit", "--x", EX1_X, "--y", EX1_Y, "--tau", "0.6", "--seed", "0"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == EX1_Y
    steps = [json.loads(l) for l in lines[1:]]
    assert len(steps) == 1 and steps[0]["rule"] == "A_MislabelReplace"


def test_edit_from_files(tmp_path, capsys):
    x, y = tmp_path / "x.txt", tmp_path / "y.txt"
    x.write_text(EX1_X + "\n")
    y.write_text(EX1_Y + "\n")
    assert main(["edit", "--x", str(x), "--y", str(y)]) == 0
    assert capsys.readouterr().out.splitlines()[0] == EX1_Y


def test_compare_self(cfg_path, tmp_path, capsys):
    a = tmp_path / "a"
    main(["train", "--config", str(cfg_path), "--out", str(a)])
    capsys.readouterr()
    assert main(["compare", "--a", str(a / "traces.jsonl"), "--b", str(a / "traces.jsonl")]) == 0
    out = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert float(out[0]["p_two_sided"]) == 1.0
    assert main(["compare", "--a", str(a / "eval.jsonl"), "--b", str(a / "eval.jsonl"), "--metric", "rate_like"]) == 0
    assert main(["compare", "--a", str(tmp_path / "x.jsonl"), "--b", str(a / "eval.jsonl")]) == 2


def test_plot_two_rows(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("step,variant,mean_reward\n0,grpo,1.0\n1,grpo,1.5\n")
    out = tmp_path / "m.svg"
    assert main(["plot", "--csv", str(p), "--out", str(out)]) == 0
    svg = out.read_text()
    groups = re.findall(r'<g class="series".*?</g>', svg, re.S)
    assert len(groups) == 1 and groups[0].count("<circle") == 2
    assert main(["plot", "--csv", str(p), "--metric", "nope", "--out", str(out)]) == 1


@pytest.mark.parametrize("taus", ["0.6", "1.0"])
def test_sweep_degenerate(cfg_path, tmp_path, taus):
    out = tmp_path / "sw"
    assert main(["sweep-tau", "--config", str(cfg_path), "--taus", taus, "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert len(rows) == 1 and float(rows[0]["tau"]) == float(taus)
    hist = json.loads((out / f"tau{float(taus):g}" / "edit_histogram.json").read_text())
    assert set(hist) == set("abcde")


def test_sweep_rejects_bad_tau(cfg_path, tmp_path):
    assert main(["sweep-tau", "--config", str(cfg_path), "--taus", "1.5", "--out", str(tmp_path)]) == 2
