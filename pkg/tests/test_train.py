import numpy as np
import pytest

from edgepop import checkpoint
from edgepop.config import default_blobs_config
from edgepop.errors import ConfigError, NonFiniteError
from edgepop.layers import subnet_size
from edgepop.train import evaluate, load_datasets, restore_model, train


def small(**overrides):
    base = {
        "run.epochs": 3,
        "model.fc_widths": "32,32",
        "data.classes": 4,
        "data.dim": 8,
        "data.per_class": 40,
        "data.spread": 1.0,
        "optim.batch_size": 32,
    }
    base.update(overrides)
    return default_blobs_config(**base)


def test_training_is_deterministic(tmp_path):
    a = train(small(), tmp_path / "a")
    train(small(), tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_text() == (tmp_path / "b" / "metrics.csv").read_text()
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()
    c = train(small(**{"run.seed": 1}))
    assert c.metrics.rows != a.metrics.rows


@pytest.mark.parametrize("algorithm", ["edge_popup", "zhou"])
def test_frozen_weights_stay_fixed_while_scores_move(algorithm):
    cfg = small(**{"run.algorithm": algorithm, "optim.lr": 0.1 if algorithm == "edge_popup" else 50.0})
    result = train(cfg)
    assert result.final_digest == result.initial_digest
    fresh = train(cfg.replace(**{"run.epochs": 1}))
    moved = [not np.array_equal(a.scores.data, b.scores.data) for a, b in zip(result.model.weight_layers, fresh.model.weight_layers)]
    assert any(moved)


def test_dense_training_changes_weights_and_reduces_loss():
    result = train(small(**{"run.algorithm": "dense_sgd", "model.k": 1.0, "run.epochs": 5}))
    assert result.final_digest != result.initial_digest
    losses = [r["train_loss"] for r in result.metrics.rows]
    decreases = sum(b <= a for a, b in zip(losses, losses[1:]))
    assert decreases == 4  # the first epoch counts as nonincreasing by convention
    assert losses[-1] < losses[0]


def test_metrics_rows_and_columns(tmp_path):
    result = train(small(), tmp_path)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert len(lines) == 1 + 3
    header = lines[0].split(",")
    assert header[:6] == ["epoch", "train_loss", "train_acc", "test_loss", "test_acc", "lr"]
    assert all(h.startswith("swaps_") for h in header[6:])
    assert [r["epoch"] for r in result.metrics.rows] == [1, 2, 3]
    assert (tmp_path / "config.ini").exists()


def test_checkpoint_restores_last_epoch_evaluation(tmp_path):
    cfg = small()
    result = train(cfg, tmp_path)
    arrays, meta = checkpoint.load(tmp_path / "final.ckpt")
    _, test = load_datasets(cfg)
    _, model = restore_model(arrays, meta, test.input_shape)
    loss, acc = evaluate(model, test)
    assert acc == result.last["test_acc"]
    assert loss == pytest.approx(result.last["test_loss"], rel=1e-12)
    assert subnet_size(model) == subnet_size(result.model)
    assert meta["epoch"] == 3 and meta["config_hash"] == cfg.digest()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_epoch_step_and_lr():
    cfg = small(**{"run.algorithm": "dense_sgd", "model.k": 1.0, "optim.lr": 1e30, "optim.schedule": "constant"})
    with pytest.raises(NonFiniteError, match=r"epoch \d+ step \d+ lr"):
        train(cfg)


def test_zhou_survives_large_learning_rate():
    result = train(small(**{"run.algorithm": "zhou", "optim.lr": 200.0}))
    assert all(np.isfinite(r["train_loss"]) for r in result.metrics.rows)


def test_augment_is_rejected_for_vector_data():
    with pytest.raises(ConfigError):
        small(**{"data.augment": True})


def test_edge_popup_learns_blobs():
    result = train(small(**{"run.epochs": 10}))
    assert result.last["test_acc"] > 0.7


def test_augmented_conv_training_on_images(rng):
    from edgepop.config import TrainConfig
    from edgepop.data import Dataset

    images = rng.normal((24, 3, 32, 32)).astype(np.float32)
    labels = np.arange(24) % 10
    ds = Dataset(images, labels, "train", 10)
    cfg = TrainConfig().replace(**{"run.epochs": 1, "model.width_multiplier": "1/16", "data.augment": True, "optim.batch_size": 8})
    result = train(cfg, datasets=(ds, ds))
    assert result.final_digest == result.initial_digest
    assert result.last["epoch"] == 1


def test_dense_adam_uses_adam():
    from edgepop.optim import Adam
    from edgepop.train import build_from_config, make_optimizer

    cfg = small(**{"run.algorithm": "dense_adam", "model.k": 1.0, "optim.lr": 0.01})
    model = build_from_config(cfg, (8,))
    assert isinstance(make_optimizer(cfg, model), Adam)
    result = train(cfg)
    assert result.final_digest != result.initial_digest
