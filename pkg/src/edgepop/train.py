"""Training loop shared by every algorithm, plus evaluation and checkpoints."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from edgepop import checkpoint
from edgepop.config import TrainConfig
from edgepop.data import BatchPlan, Dataset, augment_batch, batches, load_cifar10, synth_blobs
from edgepop.errors import FormatError, NonFiniteError
from edgepop.layers import Model, build_model, weight_digest
from edgepop.optim import SGD, Adam, cosine_lr
from edgepop.popup import detect_swaps
from edgepop.rng import RngStream
from edgepop.tensor import Tensor, backward, cross_entropy, log_softmax

log = logging.getLogger(__name__)


class FrozenWeightsChanged(AssertionError):
    """A tensor that must stay at its initialization was modified."""


def load_datasets(cfg: TrainConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.dataset == "cifar10":
        return load_cifar10(d.data_dir)
    return synth_blobs(d.classes, d.dim, d.per_class, d.spread, RngStream(d.data_seed, ("blobs",)), d.separation)


def dtype_of(cfg: TrainConfig):
    return np.float64 if cfg.run.dtype == "float64" else np.float32


def build_from_config(cfg: TrainConfig, input_shape) -> Model:
    return build_model(
        cfg.arch_spec(),
        cfg.model.k,
        cfg.init_spec(),
        RngStream(cfg.run.seed, ("model",)),
        cfg.run.algorithm,
        tuple(input_shape),
        cfg.model.abs_mode,
        cfg.model.score_init,
        dtype_of(cfg),
    )


def make_optimizer(cfg: TrainConfig, model: Model):
    """SGD or Adam per ``optim.optimizer``; ``dense_adam`` always uses Adam."""
    o = cfg.optim
    if o.optimizer == "adam" or cfg.run.algorithm == "dense_adam":
        return Adam(model.trainable(), o.lr, (o.beta1, o.beta2), o.eps, o.weight_decay)
    return SGD(model.trainable(), o.lr, o.momentum, o.weight_decay)


def evaluate(model: Model, dataset: Dataset, batch_size: int = 1000) -> tuple[float, float]:
    """Mean cross-entropy and accuracy with deterministic masks."""
    dtype = model.weight_layers[0].weight.dtype
    total_loss = 0.0
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.images[start : start + batch_size].astype(dtype, copy=False)
        y = dataset.labels[start : start + batch_size]
        logits = model.forward(Tensor(x), training=False).data
        logp = log_softmax(logits.astype(np.float64))
        total_loss -= logp[np.arange(len(y)), y].sum()
        correct += int((logits.argmax(axis=1) == y).sum())
    return total_loss / len(dataset), correct / len(dataset)


@dataclass
class RunMetrics:
    layer_names: list[str]
    rows: list[dict] = field(default_factory=list)

    @property
    def header(self) -> list[str]:
        return ["epoch", "train_loss", "train_acc", "test_loss", "test_acc", "lr"] + [f"swaps_{n}" for n in self.layer_names]

    def append(self, row: dict) -> None:
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header)
        for row in self.rows:
            writer.writerow([_fmt(row[h]) for h in self.header])
        return buf.getvalue()


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


@dataclass
class TrainResult:
    config: TrainConfig
    model: Model
    optimizer: object
    metrics: RunMetrics
    initial_digest: str
    final_digest: str

    @property
    def last(self) -> dict:
        return self.metrics.rows[-1]


def model_arrays(model: Model, optimizer=None) -> dict[str, np.ndarray]:
    arrays = {}
    for layer in model.weight_layers:
        arrays[f"{layer.name}/weight"] = layer.weight.data
        if layer.scores is not None:
            arrays[f"{layer.name}/scores"] = layer.scores.data
        arrays[f"{layer.name}/mask"] = layer.mask().astype(np.uint8)
    if optimizer is not None:
        for key, buf in optimizer.state_arrays().items():
            arrays[f"optim/{key}"] = buf
    return arrays


def save_checkpoint(path, cfg: TrainConfig, model: Model, optimizer, epoch: int) -> None:
    metadata = {
        "format_version": checkpoint.VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "epoch": epoch,
        "seed": cfg.run.seed,
        "k": cfg.model.k,
        "algorithm": cfg.run.algorithm,
    }
    checkpoint.save(path, model_arrays(model, optimizer), metadata)


def restore_model(arrays: dict[str, np.ndarray], metadata: dict, input_shape) -> tuple[TrainConfig, Model]:
    from edgepop.config import from_mapping

    try:
        cfg = from_mapping(metadata["config"])
    except KeyError as exc:
        raise FormatError("checkpoint metadata lacks a config block") from exc
    model = build_from_config(cfg, input_shape)
    for layer in model.weight_layers:
        try:
            weight = arrays[f"{layer.name}/weight"]
            if weight.shape != layer.weight.shape:
                raise FormatError(f"{layer.name}: checkpoint shape {weight.shape} != model shape {layer.weight.shape}")
            layer.weight.data = weight.astype(layer.weight.dtype)
            if layer.scores is not None:
                layer.scores.data = arrays[f"{layer.name}/scores"].astype(layer.weight.dtype)
        except KeyError as exc:
            raise FormatError(f"checkpoint missing entry {exc}") from exc
    return cfg, model


def train(cfg: TrainConfig, out_dir: str | Path | None = None, datasets: tuple[Dataset, Dataset] | None = None) -> TrainResult:
    """Run one configuration to completion.

    Writes ``metrics.csv`` (one row per epoch), ``config.ini`` and
    ``final.ckpt`` into ``out_dir`` when given. For algorithms with frozen
    weights the weight digest is checked after every epoch.
    """
    train_ds, test_ds = datasets if datasets is not None else load_datasets(cfg)
    dtype = dtype_of(cfg)
    model = build_from_config(cfg, train_ds.input_shape)
    optimizer = make_optimizer(cfg, model)
    frozen = cfg.run.algorithm in ("edge_popup", "zhou")
    initial = weight_digest(model)
    plan = BatchPlan(min(cfg.optim.batch_size, len(train_ds)), RngStream(cfg.run.seed, ("batches",)))
    names = [layer.name for layer in model.weight_layers]
    metrics = RunMetrics(names)
    clamp = [layer for layer in model.weight_layers if layer.mode == "popup" and layer.abs_mode == "clamp"]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(cfg.to_ini())

    epochs = cfg.run.epochs
    for epoch in range(epochs):
        lr = cosine_lr(epoch, epochs, cfg.optim.lr) if cfg.optim.schedule == "cosine" else cfg.optim.lr
        optimizer.lr = lr
        masks_start = model.masks()
        loss_sum, correct, seen = 0.0, 0, 0
        for step, idx in enumerate(batches(train_ds, plan, epoch)):
            x = train_ds.images[idx].astype(dtype, copy=False)
            if cfg.data.augment:
                x = augment_batch(x, RngStream(cfg.run.seed, ("augment", str(epoch), str(step))))
            y = train_ds.labels[idx]
            step_rng = RngStream(cfg.run.seed, ("masks", str(epoch), str(step)))
            try:
                logits = model.forward(Tensor(x), training=True, rng=step_rng)
                loss = cross_entropy(logits, y)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch} step {step} lr {lr:g}: {exc}") from exc
            grads = backward(loss)
            for layer in model.weight_layers:
                for t in layer.trainable():
                    g = grads.get(t)
                    if g is not None and not np.all(np.isfinite(g)):
                        raise NonFiniteError(f"epoch {epoch} step {step} lr {lr:g}: non-finite gradient in {layer.name}")
            optimizer.step(grads)
            for layer in clamp:
                np.abs(layer.scores.data, out=layer.scores.data)
            loss_sum += loss.item() * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            seen += len(y)
        if frozen and weight_digest(model) != initial:
            raise FrozenWeightsChanged(f"frozen weights changed during epoch {epoch}")
        test_loss, test_acc = evaluate(model, test_ds)
        row = {
            "epoch": epoch + 1,
            "train_loss": loss_sum / seen,
            "train_acc": correct / seen,
            "test_loss": test_loss,
            "test_acc": test_acc,
            "lr": lr,
        }
        for name, before, after in zip(names, masks_start, model.masks()):
            event = detect_swaps(before, after, name)
            row[f"swaps_{name}"] = 0 if event is None else event.size
        metrics.append(row)
        log.info("epoch %d/%d loss %.4f test acc %.4f", epoch + 1, epochs, row["train_loss"], test_acc)
        if out is not None:
            (out / "metrics.csv").write_text(metrics.to_csv())

    if out is not None:
        save_checkpoint(out / "final.ckpt", cfg, model, optimizer, epochs)
    return TrainResult(cfg, model, optimizer, metrics, initial, weight_digest(model))
