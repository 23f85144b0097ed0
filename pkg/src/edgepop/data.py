"""Datasets: CIFAR-10 binary release, synthetic Gaussian blobs, batching."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from edgepop.errors import DataError, FormatError, ParameterError
from edgepop.rng import RngStream

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_PER_FILE = 10000
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    classes: int = 10
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise DataError(f"labels must lie in [0, {self.classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])


def parse_cifar_file(path: str | os.PathLike, expected_records: int | None = CIFAR_PER_FILE) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``(labels uint8 [N], pixels uint8 [N,3,32,32])`` from one binary batch file."""
    raw = Path(path).read_bytes()
    if expected_records is not None and len(raw) != expected_records * CIFAR_RECORD:
        raise FormatError(f"{path}: expected {expected_records * CIFAR_RECORD} bytes, found {len(raw)}")
    if len(raw) % CIFAR_RECORD:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of the {CIFAR_RECORD}-byte record")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].copy()
    if labels.size and labels.max() > 9:
        raise FormatError(f"{path}: label byte {labels.max()} outside [0, 9]")
    pixels = records[:, 1:].reshape(-1, 3, 32, 32).copy()
    return labels, pixels


def serialize_cifar(labels: np.ndarray, pixels: np.ndarray) -> bytes:
    """Inverse of :func:`parse_cifar_file`."""
    rec = np.empty((len(labels), CIFAR_RECORD), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = pixels.reshape(len(labels), -1)
    return rec.tobytes()


def load_cifar10(directory: str | os.PathLike | None = None, expected_records: int | None = CIFAR_PER_FILE) -> tuple[Dataset, Dataset]:
    """Load and channel-normalize the CIFAR-10 binary release.

    Normalization statistics come from the training split and are applied to
    both splits. ``directory`` defaults to ``$EDGEPOP_DATA_DIR``; the
    ``cifar-10-batches-bin`` subfolder of the release is also accepted.
    """
    if directory is None:
        directory = os.environ.get("EDGEPOP_DATA_DIR")
        if directory is None:
            raise FormatError("no CIFAR-10 directory given and EDGEPOP_DATA_DIR is unset")
    root = Path(directory)
    if not (root / CIFAR_TEST_FILE).exists() and (root / "cifar-10-batches-bin" / CIFAR_TEST_FILE).exists():
        root = root / "cifar-10-batches-bin"
    missing = [f for f in (*CIFAR_TRAIN_FILES, CIFAR_TEST_FILE) if not (root / f).exists()]
    if missing:
        raise FormatError(f"{root}: missing CIFAR-10 files {missing}")

    parts = [parse_cifar_file(root / f, expected_records) for f in CIFAR_TRAIN_FILES]
    train_labels = np.concatenate([p[0] for p in parts])
    train_px = np.concatenate([p[1] for p in parts]).astype(np.float32) / 255.0
    test_labels, test_px = parse_cifar_file(root / CIFAR_TEST_FILE, expected_records)
    test_px = test_px.astype(np.float32) / 255.0

    mean = train_px.mean(axis=(0, 2, 3), dtype=np.float64)
    std = train_px.std(axis=(0, 2, 3), dtype=np.float64)
    norm = lambda px: ((px - mean.reshape(1, 3, 1, 1)) / std.reshape(1, 3, 1, 1)).astype(np.float32)
    train = Dataset(norm(train_px), train_labels, "train", 10, mean, std, "cifar10")
    test = Dataset(norm(test_px), test_labels, "test", 10, mean, std, "cifar10")
    return train, test


def synth_blobs(
    classes: int = 10,
    dim: int = 64,
    per_class: int = 200,
    spread: float = 1.0,
    rng: RngStream | None = None,
    separation: float = 1.0,
) -> tuple[Dataset, Dataset]:
    """Gaussian clusters around random class means, split 80/20 per class.

    Class means are drawn N(0, separation^2 / dim * I) scaled so the expected
    distance between two means is about ``separation * sqrt(2)``; samples add
    isotropic noise with per-coordinate std ``spread / sqrt(dim)``.
    """
    if classes < 2:
        raise ParameterError(f"need at least 2 classes, got {classes}")
    if per_class < 5:
        raise ParameterError(f"need at least 5 samples per class, got {per_class}")
    rng = rng or RngStream(0)
    means = rng.fork("means").normal((classes, dim)) * (separation / np.sqrt(dim))
    noise = rng.fork("noise").normal((classes, per_class, dim)) * (spread / np.sqrt(dim))
    x = means[:, None, :] + noise
    y = np.repeat(np.arange(classes), per_class).reshape(classes, per_class)
    n_test = per_class // 5
    order = np.stack([rng.fork(f"split/{c}").permutation(per_class) for c in range(classes)])
    xs = np.take_along_axis(x, order[..., None], axis=1)
    train_x, test_x = xs[:, n_test:].reshape(-1, dim), xs[:, :n_test].reshape(-1, dim)
    train_y, test_y = y[:, n_test:].ravel(), y[:, :n_test].ravel()
    mean = train_x.mean(axis=0)
    std = train_x.std(axis=0)
    norm = lambda a: ((a - mean) / std).astype(np.float32)
    train = Dataset(norm(train_x), train_y, "train", classes, mean, std, "blobs")
    test = Dataset(norm(test_x), test_y, "test", classes, mean, std, "blobs")
    return train, test


@dataclass
class BatchPlan:
    batch_size: int = 128
    rng: RngStream = field(default_factory=lambda: RngStream(0, ("batches",)))
    drop_last: bool = False
    shuffle: bool = True


def batches(dataset: Dataset, plan: BatchPlan, epoch: int) -> list[np.ndarray]:
    """Index arrays for one epoch; the order depends only on (seed, path, epoch)."""
    n = len(dataset)
    if not 1 <= plan.batch_size <= n:
        raise ParameterError(f"batch size {plan.batch_size} must lie in [1, {n}]")
    order = plan.rng.fork(f"epoch{epoch}").permutation(n) if plan.shuffle else np.arange(n)
    stop = n - n % plan.batch_size if plan.drop_last else n
    return [order[i : i + plan.batch_size] for i in range(0, stop, plan.batch_size)]


def augment(image: np.ndarray, rng: RngStream, enabled: bool = True, pad: int = 4) -> np.ndarray:
    """Random horizontal flip and random crop from a zero-padded CHW image."""
    if not enabled:
        return image
    out = flip(image) if rng.random() < 0.5 else image
    dy, dx = (int(v) for v in rng.integers(0, 2 * pad + 1, size=2))
    return crop(out, dy, dx, pad)


def augment_batch(images: np.ndarray, rng: RngStream, pad: int = 4) -> np.ndarray:
    """Vectorized :func:`augment` over an NCHW batch."""
    n, _, h, w = images.shape
    flips = rng.random(n) < 0.5
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    src = np.where(flips[:, None, None, None], images[..., ::-1], images)
    padded = np.pad(src, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(images)
    for i, (dy, dx) in enumerate(offsets):
        out[i] = padded[i, :, dy : dy + h, dx : dx + w]
    return out


def flip(image: np.ndarray) -> np.ndarray:
    return image[..., ::-1].copy()


def crop(image: np.ndarray, dy: int, dx: int, pad: int = 4) -> np.ndarray:
    h, w = image.shape[-2:]
    padded = np.pad(image, [(0, 0)] * (image.ndim - 2) + [(pad, pad), (pad, pad)])
    return padded[..., dy : dy + h, dx : dx + w]
