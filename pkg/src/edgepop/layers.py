"""Masked layers, frozen batch norm and the Conv2/4/6/8 and MLP models.

A weight layer runs in one of three modes:

* ``popup``: frozen weights, trainable popup scores, top-k% mask;
* ``zhou``: frozen weights, trainable mask logits, Bernoulli mask;
* ``dense``: trainable weights, no mask (the learned-weights baselines).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from edgepop import zhou as _zhou
from edgepop.errors import DimensionError, NonFiniteError, ParameterError
from edgepop.init import InitSpec, fan_in_of
from edgepop.init import SAMPLERS
from edgepop.popup import check_k, get_subnet, keep_count, subnet_weight
from edgepop.rng import RngStream
from edgepop.tensor import (
    Tensor,
    conv2d,
    cross_entropy,
    flatten,
    matmul,
    maxpool2,
    relu,
    transpose,
)

MODES = ("popup", "zhou", "dense")
ALGORITHM_MODES = {"edge_popup": "popup", "zhou": "zhou", "dense_sgd": "dense", "dense_adam": "dense"}


class WeightLayer:
    """Common state of masked linear and conv layers."""

    kind = "weight"

    def __init__(
        self,
        weight: np.ndarray,
        k: float = 1.0,
        mode: str = "popup",
        scores: np.ndarray | None = None,
        name: str = "layer",
        abs_mode: str = "rank",
    ):
        if mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
        self.mode = mode
        self.name = name
        self.k = check_k(k)
        self.abs_mode = abs_mode
        self.weight = Tensor(weight, requires_grad=(mode == "dense"), name=f"{name}/weight")
        self.scores: Tensor | None = None
        if mode != "dense":
            if scores is None:
                raise ParameterError(f"{mode} layer {name} needs initial scores")
            if scores.shape != weight.shape:
                raise DimensionError(f"scores {scores.shape} must match weights {weight.shape}")
            self.scores = Tensor(scores.astype(weight.dtype), requires_grad=True, name=f"{name}/scores")
        self.mask_override: np.ndarray | None = None
        # replaces effective_weight entirely; used by the gradient oracles
        self.weight_hook = None
        self.sampled_eval = False

    @property
    def numel(self) -> int:
        return self.weight.size

    def trainable(self) -> list[Tensor]:
        return [self.weight] if self.mode == "dense" else [self.scores]

    def mask(self) -> np.ndarray:
        """Deterministic mask currently in effect (eval mask for zhou)."""
        if self.mask_override is not None:
            return self.mask_override
        if self.mode == "popup":
            return get_subnet(self.scores.data, self.k)
        if self.mode == "zhou":
            return _zhou.StochasticMask(self.scores.data).threshold()
        return np.ones_like(self.weight.data)

    def effective_weight(self, training: bool = False, rng: RngStream | None = None) -> Tensor:
        if self.weight_hook is not None:
            return self.weight_hook(self)
        if self.mask_override is not None:
            return Tensor(self.weight.data * self.mask_override.astype(self.weight.dtype))
        if self.mode == "popup":
            return subnet_weight(self.weight, self.scores, self.k, self.abs_mode)
        if self.mode == "zhou":
            stream = rng.fork(self.name) if rng is not None else None
            return _zhou.zhou_weight(self.weight, self.scores, stream, training, self.sampled_eval)
        return self.weight


class MaskedLinear(WeightLayer):
    kind = "linear"

    def forward(self, x: Tensor, training: bool = False, rng: RngStream | None = None) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.weight.shape[1]:
            raise DimensionError(f"{self.name}: expected [N, {self.weight.shape[1]}] input, got {x.shape}")
        return matmul(x, transpose(self.effective_weight(training, rng)))


class MaskedConv(WeightLayer):
    kind = "conv"

    def __init__(self, weight, k=1.0, mode="popup", scores=None, name="conv", abs_mode="rank", stride=1, padding=1):
        super().__init__(weight, k, mode, scores, name, abs_mode)
        if weight.ndim != 4 or weight.shape[2] != weight.shape[3] or weight.shape[2] % 2 == 0:
            raise DimensionError(f"{name}: conv weight must be [O,C,k,k] with odd k, got {weight.shape}")
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor, training: bool = False, rng: RngStream | None = None) -> Tensor:
        return conv2d(x, self.effective_weight(training, rng), self.stride, self.padding)


def masked_linear_forward(x: Tensor, layer: MaskedLinear) -> Tensor:
    return layer.forward(x)


def masked_conv_forward(x: Tensor, layer: MaskedConv) -> Tensor:
    return layer.forward(x)


class ReLU:
    kind = "relu"

    def forward(self, x, training=False, rng=None):
        return relu(x)


class MaxPool2:
    kind = "pool"

    def forward(self, x, training=False, rng=None):
        return maxpool2(x)


class Flatten:
    kind = "flatten"

    def forward(self, x, training=False, rng=None):
        return flatten(x)


class FrozenBatchNorm:
    """Batch norm whose affine scale and shift stay at 1 and 0.

    Training mode normalizes with batch statistics and updates the running
    buffers (biased variance for normalization, unbiased for the buffer).
    """

    kind = "batchnorm"

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.weight = np.ones(channels, dtype=dtype)
        self.bias = np.zeros(channels, dtype=dtype)

    def forward(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        return frozen_batchnorm_forward(x, self, training)


def frozen_batchnorm_forward(x: Tensor, bn: FrozenBatchNorm, training: bool) -> Tensor:
    if x.ndim not in (2, 4) or x.shape[1] != bn.channels:
        raise DimensionError(f"batch norm over {bn.channels} channels got input {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    X = x.data
    if training:
        mean = X.mean(axis=axes)
        var = X.var(axis=axes)
        count = X.size // bn.channels
        unbiased = var * count / max(count - 1, 1)
        bn.running_mean *= 1 - bn.momentum
        bn.running_mean += bn.momentum * mean.astype(bn.running_mean.dtype)
        bn.running_var *= 1 - bn.momentum
        bn.running_var += bn.momentum * unbiased.astype(bn.running_var.dtype)
    else:
        mean, var = bn.running_mean, bn.running_var
    inv = 1.0 / np.sqrt(var + bn.eps)
    xhat = (X - mean.reshape(bshape)) * inv.reshape(bshape)
    out = (xhat * bn.weight.reshape(bshape) + bn.bias.reshape(bshape)).astype(X.dtype)

    def backward(g):
        if not training:
            return (g * inv.reshape(bshape),)
        m = X.size // bn.channels
        gsum = g.sum(axis=axes).reshape(bshape)
        gxsum = (g * xhat).sum(axis=axes).reshape(bshape)
        return ((inv.reshape(bshape) / m) * (m * g - gsum - xhat * gxsum),)

    return Tensor.from_op(out, (x,), backward, "batchnorm")


class Model:
    """A feed-forward stack of layers."""

    def __init__(self, layers: list, arch: "ArchSpec | None" = None, k: float = 1.0):
        self.layers = layers
        self.arch = arch
        self.k = k

    @property
    def weight_layers(self) -> list[WeightLayer]:
        return [layer for layer in self.layers if isinstance(layer, WeightLayer)]

    def forward(self, x, training: bool = False, rng: RngStream | None = None, start: int = 0, stop: int | None = None) -> Tensor:
        """Run layers ``start:stop`` on ``x``."""
        out = x if isinstance(x, Tensor) else Tensor(x)
        for layer in self.layers[start:stop]:
            try:
                out = layer.forward(out, training, rng)
            except NonFiniteError as exc:
                raise NonFiniteError(f"{getattr(layer, 'name', layer.kind)}: {exc}") from exc
        return out

    __call__ = forward

    def loss(self, x, labels, training: bool = False, rng: RngStream | None = None) -> Tensor:
        return cross_entropy(self.forward(x, training, rng), labels)

    def trainable(self) -> list[Tensor]:
        return [t for layer in self.weight_layers for t in layer.trainable()]

    def frozen(self) -> list[Tensor]:
        return [layer.weight for layer in self.weight_layers if not layer.weight.requires_grad]

    def masks(self) -> list[np.ndarray]:
        return [layer.mask() for layer in self.weight_layers]

    @property
    def num_weights(self) -> int:
        return sum(layer.numel for layer in self.weight_layers)

    def layer_index(self, layer: WeightLayer) -> int:
        return next(i for i, candidate in enumerate(self.layers) if candidate is layer)


def weight_digest(model: Model) -> str:
    """SHA-256 over every weight tensor, in layer order."""
    h = hashlib.sha256()
    for layer in model.weight_layers:
        h.update(layer.name.encode())
        h.update(np.ascontiguousarray(layer.weight.data).tobytes())
    return h.hexdigest()


ARCH_NAMES = ("conv2", "conv4", "conv6", "conv8", "mlp")
_CONV_BLOCKS = (64, 128, 256, 512)
_FC_WIDTHS = (256, 256)


@dataclass(frozen=True)
class ArchSpec:
    name: str = "conv2"
    width_multiplier: Fraction = Fraction(1)
    classes: int = 10
    fc_widths: tuple[int, ...] | None = None

    def __post_init__(self):
        name = self.name.lower()
        if name not in ARCH_NAMES:
            raise ParameterError(f"unknown architecture {self.name!r}; expected one of {ARCH_NAMES}")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "width_multiplier", Fraction(self.width_multiplier))
        if self.width_multiplier <= 0:
            raise ParameterError(f"width multiplier must be positive, got {self.width_multiplier}")
        if self.classes < 2:
            raise ParameterError(f"need at least 2 classes, got {self.classes}")

    def _scale(self, width: int) -> int:
        scaled = width * self.width_multiplier
        if scaled.denominator != 1 or scaled < 1:
            raise ParameterError(f"width {width} x {self.width_multiplier} is not a positive integer")
        return int(scaled)

    @property
    def conv_widths(self) -> list[int]:
        if self.name == "mlp":
            return []
        blocks = int(self.name[4:]) // 2
        return [self._scale(w) for w in _CONV_BLOCKS[:blocks] for _ in range(2)]

    @property
    def fc_hidden(self) -> list[int]:
        return [self._scale(w) for w in (self.fc_widths if self.fc_widths is not None else _FC_WIDTHS)]

    @property
    def fc_widths_full(self) -> list[int]:
        return self.fc_hidden + [self.classes]


def build_model(
    arch: ArchSpec,
    k: float,
    init: InitSpec,
    rng: RngStream,
    algorithm: str = "edge_popup",
    input_shape: tuple[int, ...] = (3, 32, 32),
    abs_mode: str = "rank",
    score_init: str = "kaiming_uniform",
    dtype=np.float32,
) -> Model:
    """Construct a masked network with frozen random weights and fresh scores.

    ``input_shape`` is (C, H, W) for conv models and (features,) for ``mlp``.
    No biases and no normalization layers are inserted.
    """
    if algorithm not in ALGORITHM_MODES:
        raise ParameterError(f"unknown algorithm {algorithm!r}; expected one of {tuple(ALGORITHM_MODES)}")
    mode = ALGORITHM_MODES[algorithm]
    k = 1.0 if mode == "dense" else check_k(k)
    score_sampler = SAMPLERS[score_init]
    layers: list = []

    def make(shape, name, cls, **kw):
        fan_in = fan_in_of(shape)
        w = init.sample(shape, fan_in, rng.fork(f"{name}/weights"), dtype)
        s = None if mode == "dense" else score_sampler(shape, fan_in, rng.fork(f"{name}/scores")).astype(dtype)
        return cls(w, k=k, mode=mode, scores=s, name=name, abs_mode=abs_mode, **kw)

    if arch.name == "mlp":
        if len(input_shape) != 1:
            raise DimensionError(f"mlp expects a flat input shape, got {input_shape}")
        features = int(input_shape[0])
    else:
        if len(input_shape) != 3:
            raise DimensionError(f"{arch.name} expects (C, H, W) input, got {input_shape}")
        channels, h, w = input_shape
        for i, width in enumerate(arch.conv_widths):
            layers.append(make((width, channels, 3, 3), f"conv{i + 1}", MaskedConv, stride=1, padding=1))
            layers.append(ReLU())
            channels = width
            if i % 2 == 1:
                if h % 2 or w % 2:
                    raise DimensionError(f"cannot pool odd spatial extent {h}x{w}")
                layers.append(MaxPool2())
                h, w = h // 2, w // 2
        layers.append(Flatten())
        features = channels * h * w

    widths = arch.fc_widths_full
    for i, width in enumerate(widths):
        layers.append(make((width, features), f"fc{i + 1}", MaskedLinear))
        if i < len(widths) - 1:
            layers.append(ReLU())
        features = width
    return Model(layers, arch, k)


def subnet_size(model: Model) -> int:
    """|E|: total number of edges in the selected subnetwork."""
    total = 0
    for layer in model.weight_layers:
        if layer.mode == "popup":
            total += keep_count(layer.numel, layer.k)
        else:
            total += int(layer.mask().sum())
    return total


def layer_sizes(arch: ArchSpec, input_shape) -> list[int]:
    """Weight count of every masked layer, computed from shapes alone."""
    sizes = []
    if arch.name == "mlp":
        features = int(input_shape[0])
    else:
        channels, h, w = input_shape
        for i, width in enumerate(arch.conv_widths):
            sizes.append(width * channels * 9)
            channels = width
            if i % 2 == 1:
                h, w = h // 2, w // 2
        features = channels * h * w
    for width in arch.fc_widths_full:
        sizes.append(width * features)
        features = width
    return sizes


def parameter_count(arch: ArchSpec, input_shape) -> int:
    """Total weight count computed from shapes alone, without building."""
    return sum(layer_sizes(arch, input_shape))
