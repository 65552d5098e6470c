import json

import numpy as np
import pytest

from entailnet.cli import main, read_config_file, CliError

SMALL = ["--k", "4", "--embed-dim", "4", "--precision", "check"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    for name, seed, n in (("train", 1, 40), ("dev", 2, 12)):
        main(["synth", "--out", str(root), "--n", str(n), "--seed", str(seed), "--vocab-size", "12",
              "--premise-len", "3,4", "--hypothesis-len", "1,2"])
        (root / f"synth-{seed}.jsonl").rename(root / f"{name}.jsonl")
    return root


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--train", str(corpus / "train.jsonl"), "--dev", str(corpus / "dev.jsonl"),
                 "--out", str(out), "--epochs", "2", "--lr", "1e-2", *SMALL])
    assert code == 0
    return out


def last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_train_outputs(trained):
    assert {p.name for p in trained.iterdir()} >= {"model.npz", "history.jsonl", "resolved_config.txt", "metrics.json"}
    lines = (trained / "history.jsonl").read_text().splitlines()
    assert len(lines) == 2 and json.loads(lines[0])["epoch"] == 1
    resolved = read_config_file(trained / "resolved_config.txt")
    assert resolved["k"] == 4 and resolved["lr"] == 1e-2 and resolved["dropout"] == 0.0


def test_resolved_config_reproduces_run(trained, tmp_path):
    code = main(["train", "--config", str(trained / "resolved_config.txt"), "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "history.jsonl").read_bytes() == (trained / "history.jsonl").read_bytes()
    assert (tmp_path / "metrics.json").read_bytes() == (trained / "metrics.json").read_bytes()


def test_flags_override_config_file(corpus, tmp_path):
    cfg = tmp_path / "c.conf"
    cfg.write_text(f"# settings\ntrain = {corpus / 'train.jsonl'}\nk = 3\nembed-dim = 4\nepochs = 1\nprecision = check\n")
    code = main(["train", "--config", str(cfg), "--k", "5", "--out", str(tmp_path / "o")])
    assert code == 0
    assert read_config_file(tmp_path / "o" / "resolved_config.txt")["k"] == 5


def test_bad_config_line(tmp_path):
    cfg = tmp_path / "c.conf"
    cfg.write_text("k 3\n")
    with pytest.raises(CliError):
        read_config_file(cfg)
    assert main(["params", "--config", str(cfg)]) == 2


def test_eval_and_predict(trained, corpus, capsys):
    ckpt = str(trained / "model.npz")
    assert main(["eval", "--checkpoint", ckpt, "--data", str(corpus / "dev.jsonl"), "--precision", "check"]) == 0
    metrics = last_json(capsys)
    assert metrics["n"] == 12 and np.array(metrics["confusion"]).sum() == 12
    assert main(["predict", "--checkpoint", ckpt, "--premise", "w03 w04", "--hypothesis", "w05"]) == 0
    row = last_json(capsys)
    assert row["label"] in ("entailment", "neutral", "contradiction")
    assert abs(sum(row["probabilities"].values()) - 1.0) < 1e-5


def test_eval_is_byte_deterministic(trained, corpus, tmp_path):
    outs = []
    for i in range(2):
        main(["eval", "--checkpoint", str(trained / "model.npz"), "--data", str(corpus / "dev.jsonl"),
              "--precision", "check", "--out", str(tmp_path / str(i))])
        outs.append((tmp_path / str(i) / "metrics.json").read_bytes())
    assert outs[0] == outs[1]


def test_attend_writes_heatmaps(trained, corpus, tmp_path, capsys):
    code = main(["attend", "--checkpoint", str(trained / "model.npz"), "--data", str(corpus / "dev.jsonl"),
                 "--limit", "3", "--out", str(tmp_path)])
    assert code == 0
    assert len(list(tmp_path.glob("*.svg"))) == 3 and len(list(tmp_path.glob("*.json"))) == 3
    for path in tmp_path.glob("*.json"):
        for row in json.loads(path.read_text())["weights"]:
            assert abs(sum(row) - 1.0) < 1e-6


def test_params_report(capsys):
    assert main(["params", "--model", "conditional-shared", "--k", "100"]) == 0
    report = last_json_block(capsys)
    assert report["theta_M"] == 110_803 and report["within_5_percent"]
    assert main(["params", "--model", "wordbyword", "--k", "100"]) == 0
    report = last_json_block(capsys)
    assert report["reference"] == 252_000 and "deviation" in report


def last_json_block(capsys):
    return json.loads(capsys.readouterr().out)


def test_params_with_vocabulary(corpus, capsys):
    assert main(["params", "--model", "conditional", "--k", "4", "--embed-dim", "3",
                 "--train", str(corpus / "train.jsonl")]) == 0
    report = last_json_block(capsys)
    assert report["theta_W+M"] == report["theta_M"] + 3 * report["tunable_words"]


def test_exit_codes(trained, corpus, tmp_path):
    assert main(["train"]) == 2  # missing --train
    assert main(["train", "--train", str(tmp_path / "missing.jsonl")]) == 2
    assert main(["train", "--train", str(corpus / "train.jsonl"), "--model", "conditional", "--two-way"]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"gold_label": "neutral", "sentence1": "a", "sentence2": "b"}\n{broken\n')
    assert main(["eval", "--checkpoint", str(trained / "model.npz"), "--data", str(bad)]) == 3
    junk = tmp_path / "junk.npz"
    junk.write_bytes(b"nope")
    assert main(["eval", "--checkpoint", str(junk), "--data", str(corpus / "dev.jsonl")]) == 4


def test_divergence_exit_code(corpus, tmp_path, monkeypatch):
    import entailnet.cli as cli
    from entailnet.training import DivergenceError

    def blow_up(*args, **kwargs):
        raise DivergenceError("loss became nan in epoch 1", 1)

    monkeypatch.setattr(cli, "train", blow_up)
    assert main(["train", "--train", str(corpus / "train.jsonl"), "--out", str(tmp_path), *SMALL]) == 5


def test_grid_writes_csv(corpus, tmp_path, monkeypatch):
    import entailnet.cli as cli

    monkeypatch.setattr(cli, "PAPER_GRID", {"lr": (0.0, 1e-2), "dropout": (0.0,), "l2": (0.0,)})
    code = main(["grid", "--train", str(corpus / "train.jsonl"), "--dev", str(corpus / "dev.jsonl"),
                 "--epochs", "1", "--jobs", "2", "--out", str(tmp_path), *SMALL])
    assert code == 0
    rows = (tmp_path / "grid.csv").read_text().splitlines()
    assert rows[0] == "lr,dropout,l2,best_dev_acc" and len(rows) == 3
    assert (tmp_path / "model.npz").exists()
