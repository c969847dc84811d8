import numpy as np
import pandas as pd
import pytest

from apps.cli.config import ConfigError, echo_config, read_config_file, resolve_run_config
from apps.cli.main import main
from data import Dataset, load_dataset, save_dataset
from runners.trainer import AVModel, TrainConfig, save_checkpoint
from tests.conftest import one_hot

DATA_FILES = ("audio.avf", "visual.avf", "labels.avl", "split.csv")
SMALL = ["--classes", "3", "--per-class", "10", "--audio-dim", "6", "--visual-dim", "8", "--seed", "1"]
TINY = ["--epochs", "2", "--hidden", "8", "--batch-size", "12", "--eval-every", "1"]


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--out", str(out)] + SMALL) == 0
    return out


def test_synth_writes_the_dataset(tmp_path):
    out = tmp_path / "syn3"
    assert main(["synth", "--out", str(out), "--classes", "3", "--per-class", "50", "--seed", "1"]) == 0
    for name in DATA_FILES:
        assert (out / name).is_file()
    train, test = load_dataset(out)
    assert len(train) + len(test) == 150
    assert sorted(p.name for p in out.iterdir()) == sorted(DATA_FILES + ("config.env",))
    assert "classes = 3" in (out / "config.env").read_text()


def test_synth_is_byte_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / name)] + SMALL) == 0
    for name in DATA_FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_single_class_synth_warns(tmp_path, caplog):
    with caplog.at_level("WARNING"):
        assert main(["synth", "--out", str(tmp_path), "--classes", "1", "--per-class", "4",
                     "--audio-dim", "2", "--visual-dim", "2"]) == 0
    assert "inert" in caplog.text


def test_train_writes_trace_and_echo(tmp_path, data_dir, capsys):
    out = tmp_path / "runs"
    code = main(["train", "--data", str(data_dir), "--out", str(out), "--run", "r1",
                 "--loss", "hard_triplet", "--aa-mode", "literal"] + TINY)
    assert code == 0
    run = out / "r1"
    trace = pd.read_csv(run / "trace.csv")
    assert len(trace) == 2
    echo = (run / "config.env").read_text()
    assert "loss = hard_triplet" in echo
    assert "aa_mode = literal" in echo
    assert (run / "checkpoint.aadm").is_file()
    assert (run / "report.csv").is_file()
    assert "A->V" in capsys.readouterr().out


def test_invalid_k_is_rejected_before_training(tmp_path, data_dir, capsys):
    out = tmp_path / "runs"
    assert main(["train", "--data", str(data_dir), "--out", str(out), "--k", "0"] + TINY) == 2
    assert "k" in capsys.readouterr().err
    assert not (out / "run").exists()


def test_usage_errors_exit_with_two(tmp_path, data_dir):
    assert main(["train"]) == 2
    assert main(["bogus"]) == 2
    assert main(["train", "--data", str(tmp_path / "missing")]) == 2
    assert main(["eval", "--data", str(data_dir), "--checkpoint", str(tmp_path / "nope.aadm")]) == 2


def test_eval_reuses_the_run_config(tmp_path, data_dir, capsys):
    out = tmp_path / "runs"
    assert main(["train", "--data", str(data_dir), "--out", str(out), "--run", "r"] + TINY) == 0
    capsys.readouterr()
    ckpt = out / "r" / "checkpoint.aadm"
    (out / "r" / "report.csv").unlink()
    assert main(["eval", "--data", str(data_dir), "--checkpoint", str(ckpt)]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert printed[0].split() == ["A->V", "V->A", "Avg"]
    report = pd.read_csv(out / "r" / "report.csv")
    assert set(report.direction) == {"A->V", "V->A", "avg"}


def test_eval_with_another_architecture_fails(tmp_path, data_dir):
    out = tmp_path / "runs"
    assert main(["train", "--data", str(data_dir), "--out", str(out), "--run", "r"] + TINY) == 0
    ckpt = out / "r" / "checkpoint.aadm"
    assert main(["eval", "--data", str(data_dir), "--checkpoint", str(ckpt), "--hidden", "4"]) == 2


def test_training_abort_exits_with_one(tmp_path, data_dir):
    with np.errstate(all="ignore"):
        code = main(["train", "--data", str(data_dir), "--out", str(tmp_path), "--lr", "1e300"] + TINY)
    assert code == 1


def test_sweep_k_rows(tmp_path, data_dir):
    out = tmp_path / "runs"
    assert main(["sweep-k", "--data", str(data_dir), "--out", str(out), "--run", "s", "--k-max", "3",
                 "--epochs", "1", "--hidden", "8", "--batch-size", "12"]) == 0
    rows = pd.read_csv(out / "s" / "sweep_k.csv")
    assert list(rows.columns) == ["strategy", "k", "map_av", "map_va", "map_avg"]
    assert len(rows) == 9
    assert rows[["map_av", "map_va", "map_avg"]].stack().between(0, 1).all()
    assert rows.pivot(index="k", columns="strategy", values="map_avg").shape == (3, 3)


# ---------- eval on pass-through checkpoints ----------
def pass_through_model(d, c):
    """Both branches reproduce their d input features in the first d of c outputs."""
    cfg = TrainConfig(hidden=2 * d)
    model = AVModel.initialize(d, d, c, cfg)
    eye = np.eye(d)
    for net in (model.nets.audio, model.nets.visual):
        net.weights[0].data[...] = np.hstack([eye, -eye])
        for w in net.weights[1:-1]:
            w.data[...] = np.eye(2 * d)
        last = np.zeros((2 * d, c))
        last[:d, :d], last[d:, :d] = eye, -eye
        net.weights[-1].data[...] = last
        for b in net.biases:
            b.data[...] = 0.0
    return model


def write_fixture(root, audio, visual, labels, d, c):
    """Train and test splits hold the same rows; returns (data dir, checkpoint)."""
    ds = Dataset(np.vstack([audio, audio]), np.vstack([visual, visual]), np.vstack([labels, labels]))
    n = len(labels)
    data = save_dataset(root / "data", ds, np.arange(n), np.arange(n, 2 * n), dtype="float64")
    ckpt = save_checkpoint(root / "run" / "checkpoint.aadm", pass_through_model(d, c), None, 0, 0)
    return data, ckpt


def hand_aps(queries, gallery, labels):
    same = (labels @ labels.T) > 0
    aps = []
    for i, q in enumerate(queries):
        cos = [q @ g / (np.linalg.norm(q) * np.linalg.norm(g)) for g in gallery]
        order = sorted(range(len(gallery)), key=lambda j: (-cos[j], j))
        hits, total = 0, 0.0
        for r, j in enumerate(order, start=1):
            if same[i, j]:
                hits += 1
                total += hits / r
        aps.append(total / hits)
    return aps


def test_eval_perfect_projection_prints_ones(tmp_path, capsys):
    labels = one_hot([0, 0, 1, 1, 2, 2], 3)
    feats = labels.astype(np.float64)
    data, ckpt = write_fixture(tmp_path, feats, feats, labels, d=3, c=3)
    assert main(["eval", "--data", str(data), "--checkpoint", str(ckpt), "--hidden", "6"]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert printed[0].split() == ["A->V", "V->A", "Avg"]
    assert printed[1].split() == ["1.000", "1.000", "1.000"]


def test_eval_six_sample_report_matches_hand_computed_aps(tmp_path):
    labels = one_hot([0, 0, 1, 1, 2, 2], 3)
    audio = np.array([[1.0, 0.0], [0.9, 0.3], [0.0, 1.0], [0.5, 0.5], [-1.0, 0.1], [-1.0, -0.2]])
    visual = np.array([[1.0, 0.1], [0.1, 1.0], [0.3, 0.9], [1.0, -0.2], [-1.0, 0.0], [-0.9, 0.4]])
    data, ckpt = write_fixture(tmp_path, audio, visual, labels, d=2, c=3)
    assert main(["eval", "--data", str(data), "--checkpoint", str(ckpt), "--hidden", "4"]) == 0
    report = pd.read_csv(ckpt.parent / "report.csv")
    expected = {"A->V": hand_aps(audio, visual, labels), "V->A": hand_aps(visual, audio, labels)}
    for direction, aps in expected.items():
        rows = report[report.direction == direction]
        got = rows[rows.metric.str.startswith("ap[")].value.tolist()
        assert got == pytest.approx(aps, abs=1e-12)
        assert rows[rows.metric == "map"].value.item() == pytest.approx(np.mean(aps), abs=1e-12)
    avg = report[report.direction == "avg"].value.item()
    assert avg == pytest.approx((np.mean(expected["A->V"]) + np.mean(expected["V->A"])) / 2, abs=1e-12)


@pytest.mark.slow
def test_sweep_k_defaults_give_21_rows(tmp_path, data_dir):
    out = tmp_path / "runs"
    assert main(["sweep-k", "--data", str(data_dir), "--out", str(out), "--run", "s",
                 "--epochs", "1", "--hidden", "8", "--batch-size", "12"]) == 0
    rows = pd.read_csv(out / "s" / "sweep_k.csv")
    assert len(rows) == 21
    assert sorted(set(rows.strategy)) == ["hard_triplet", "triplet", "triplet_dagger"]
    assert sorted(set(rows.k)) == list(range(1, 8))
    assert rows[["map_av", "map_va", "map_avg"]].stack().between(0, 1).all()


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("# baseline\nepochs = 7\nloss = contrastive\nmargin = 1.5\nseed = 3\n")
    cfg = resolve_run_config(read_config_file(path), {"epochs": 9})
    assert cfg.train.epochs == 9
    assert cfg.train.loss.kind.value == "contrastive"
    assert cfg.train.loss.margin == 1.5
    assert cfg.train.seed == cfg.synth.seed == 3


def test_unknown_keys_are_errors(tmp_path):
    with pytest.raises(ConfigError, match="learning_rate"):
        resolve_run_config({"learning_rate": "0.1"}, {})
    path = tmp_path / "bad.env"
    path.write_text("learning_rate = 0.1\n")
    assert main(["train", "--config", str(path)]) == 2


def test_echo_round_trips(tmp_path):
    cfg = resolve_run_config({}, {"k": 5, "aa_mode": "literal", "use_aa": True, "clip_norm": 10.0})
    path = tmp_path / "config.env"
    path.write_text(echo_config(cfg, ["run", "train"]))
    again = resolve_run_config(read_config_file(path), {})
    assert again.train == cfg.train
    assert again.run_dir == cfg.run_dir
