import json

import numpy as np
import pytest

from beexformer.checkpoint import load_checkpoint
from beexformer.cli import main, resolve_seed
from beexformer.errors import ConfigError

SMALL = """
[model]
num_blocks = 2
model_dim = 8
num_heads = 2
slfn_dim = 6
max_len = 8
dropout = 0.1

[train]
epochs = 2
batch_size = 16

[data]
synthetic = "keyword-sentiment"
num_train = 48
num_dev = 16
"""


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "c.toml").write_text(SMALL)
    assert main(["train", "--config", str(root / "c.toml"), "--seed", "7", "--out", str(root / "run")]) == 0
    return root


def run_json(capsys, argv):
    capsys.readouterr()
    code = main(argv)
    return code, capsys.readouterr().out


def test_train_writes_its_artifacts(small):
    names = {p.name for p in (small / "run").iterdir()}
    assert {"vocab.tsv", "train_log.jsonl", "latent.ckpt", "frozen.ckpt", "summary.json", "training.png"} <= names


def test_training_twice_gives_identical_checkpoints(small):
    out = small / "again"
    assert main(["train", "--config", str(small / "c.toml"), "--seed", "7", "--out", str(out)]) == 0
    for name in ("latent.ckpt", "frozen.ckpt"):
        assert (small / "run" / name).read_bytes() == (out / name).read_bytes()


def test_eval_with_and_without_early_exit(small, capsys):
    ckpt = str(small / "run" / "latent.ckpt")
    code, out = run_json(capsys, ["eval", "--checkpoint", ckpt, "--delta", "0.5", "--out", str(small / "ee")])
    assert code == 0
    ee = json.loads(out)
    code, out = run_json(capsys, ["eval", "--checkpoint", ckpt, "--no-ee", "--out", str(small / "wee")])
    wee = json.loads(out)
    assert code == 0 and wee["delta"] is None and wee["reduction"] == 0.0
    assert ee["wee_gflops"] == wee["wee_gflops"] and ee["ee_gflops"] <= wee["ee_gflops"]
    assert (small / "ee" / "report.json").exists() and (small / "ee" / "histogram.csv").exists()


def test_packed_eval_of_a_frozen_checkpoint(small, capsys):
    frozen = small / "sign.ckpt"
    assert main(["freeze", "--checkpoint", str(small / "run" / "latent.ckpt"), "--activations", "sign",
                 "--out", str(frozen)]) == 0
    reports = []
    for extra in ([], ["--packed"]):
        code, out = run_json(capsys, ["eval", "--checkpoint", str(frozen), "--out", str(small / "fe"), *extra])
        assert code == 0
        reports.append(json.loads(out))
    assert reports[0]["metric"] == reports[1]["metric"]
    assert reports[0]["histogram"] == reports[1]["histogram"]


def test_packed_flag_on_latent_checkpoint_is_a_config_error(small):
    assert main(["eval", "--checkpoint", str(small / "run" / "latent.ckpt"), "--packed",
                 "--out", str(small / "x")]) == 2


def test_sweep(small, capsys):
    code, out = run_json(capsys, ["sweep", "--checkpoint", str(small / "run" / "frozen.ckpt"),
                                  "--deltas", "1e-4,0.5", "--out", str(small / "sweep")])
    rows = json.loads(out)
    assert code == 0 and [r["delta"] for r in rows] == [1e-4, 0.5]
    assert rows[0]["mean_exit"] >= rows[1]["mean_exit"]
    assert (small / "sweep" / "sweep.csv").exists() and (small / "sweep" / "sweep.png").exists()


def test_inspect(small, capsys):
    code, out = run_json(capsys, ["inspect", "--checkpoint", str(small / "run" / "frozen.ckpt")])
    info = json.loads(out)
    assert code == 0 and info["kind"] == "frozen" and info["ratio"] > 1
    assert info["meta"]["best_epoch"] >= 1


def test_build_vocab(small, capsys):
    code, out = run_json(capsys, ["build-vocab", "--config", str(small / "c.toml"), "--out", str(small / "v.tsv")])
    assert code == 0
    assert (small / "v.tsv").read_text() == (small / "run" / "vocab.tsv").read_text()


def test_ablate_binarizer_runs_both(small, capsys):
    code, out = run_json(capsys, ["ablate", "--config", str(small / "c.toml"), "--binarizer", "clip",
                                  "--out", str(small / "abl")])
    rows = json.loads(out)
    assert code == 0 and [r["variant"] for r in rows] == ["proposed", "clip"]
    assert (small / "abl" / "ablation.csv").exists() and (small / "abl" / "ablation.png").exists()


def test_freezing_a_frozen_checkpoint_is_refused(small):
    assert main(["freeze", "--checkpoint", str(small / "run" / "frozen.ckpt"), "--out", str(small / "y")]) == 2


@pytest.mark.parametrize("argv", [
    ["train", "--bogus"],
    ["nope"],
    [],
    ["eval"],
    ["train", "--binarizer", "sign"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == 2


def test_config_errors(tmp_path):
    (tmp_path / "bad.toml").write_text("[model]\nmodel_dim = 7\n")
    assert main(["train", "--config", str(tmp_path / "bad.toml"), "--out", str(tmp_path / "o")]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.toml")]) == 2


def test_data_errors(tmp_path):
    (tmp_path / "c.toml").write_text(f'[data]\ntrain_path = "{tmp_path / "missing.tsv"}"\n')
    assert main(["train", "--config", str(tmp_path / "c.toml"), "--out", str(tmp_path / "o")]) == 3
    (tmp_path / "junk.ckpt").write_bytes(b"junk")
    assert main(["inspect", "--checkpoint", str(tmp_path / "junk.ckpt")]) == 3


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == 0


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv("BEEX_SEED", raising=False)
    assert resolve_seed(None, 1) == 1
    monkeypatch.setenv("BEEX_SEED", "5")
    assert resolve_seed(None, 1) == 5
    assert resolve_seed(9, 1) == 9
    monkeypatch.setenv("BEEX_SEED", "five")
    with pytest.raises(ConfigError):
        resolve_seed(None, 1)


def test_env_seed_reaches_training(small, monkeypatch):
    monkeypatch.setenv("BEEX_SEED", "7")
    out = small / "env"
    assert main(["train", "--config", str(small / "c.toml"), "--out", str(out)]) == 0
    a = load_checkpoint(small / "run" / "latent.ckpt").state_dict()
    b = load_checkpoint(out / "latent.ckpt").state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
