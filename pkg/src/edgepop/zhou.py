"""Stochastic supermask baseline.

Each frozen weight is kept with probability p = sigmoid(m). Training draws a
fresh Bernoulli mask per forward; evaluation thresholds at p >= 0.5. The
logit gradient treats the sample as the identity and keeps the sigmoid
derivative: dL/dm = dL/dw_eff * w * p * (1 - p).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from edgepop.errors import DimensionError
from edgepop.rng import RngStream
from edgepop.tensor import Tensor, matmul, transpose


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(np.result_type(x, np.float32))


@dataclass
class StochasticMask:
    logits: np.ndarray

    @property
    def p(self) -> np.ndarray:
        return sigmoid(self.logits)

    def sample(self, rng: RngStream) -> np.ndarray:
        return (rng.random(self.logits.shape) < self.p).astype(self.logits.dtype)

    def threshold(self) -> np.ndarray:
        return (self.p >= 0.5).astype(self.logits.dtype)


def draw_mask(logits: np.ndarray, rng: RngStream | None, training: bool, sampled_eval: bool = False) -> np.ndarray:
    mask = StochasticMask(logits)
    if training or sampled_eval:
        if rng is None:
            raise ValueError("sampling a stochastic mask needs an rng stream")
        return mask.sample(rng)
    return mask.threshold()


def zhou_weight(weight: Tensor, logits: Tensor, rng: RngStream | None, training: bool, sampled_eval: bool = False) -> Tensor:
    """Effective weight ``weight * X`` with X ~ Bernoulli(sigmoid(logits))."""
    if weight.shape != logits.shape:
        raise DimensionError(f"logits {logits.shape} must match weights {weight.shape}")
    x = draw_mask(logits.data, rng, training, sampled_eval)
    W = weight.data
    p = sigmoid(logits.data)

    def backward(g):
        gw = g * x if weight._needs_grad else None
        gm = g * W * p * (1 - p) if logits._needs_grad else None
        return gw, gm

    return Tensor.from_op(W * x, (weight, logits), backward, "zhou_weight")


def zhou_forward(x: Tensor, weight: Tensor, logits: Tensor, rng: RngStream | None, training: bool) -> Tensor:
    """Linear layer [N, in] -> [N, out] under a stochastic mask."""
    return matmul(x, transpose(zhou_weight(weight, logits, rng, training)))


def zhou_backward(upstream: np.ndarray, weight: np.ndarray, activations: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Closed-form logit gradient for a linear layer.

    ``upstream`` is dL/dI of shape [N, out], ``activations`` the layer input
    [N, in]; returns [out, in].
    """
    upstream = np.asarray(upstream)
    activations = np.asarray(activations)
    if upstream.ndim == 0:
        return upstream * weight * activations * p * (1 - p)
    return (upstream.T @ activations) * weight * p * (1 - p)
