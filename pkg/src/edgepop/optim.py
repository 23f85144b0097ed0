"""SGD with momentum / weight decay, Adam, and the cosine schedule.

Parameters are updated in place. Both optimizers refuse frozen tensors.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from edgepop.errors import DimensionError, ParameterError
from edgepop.tensor import Tensor


class _Optimizer:
    def __init__(self, params: Iterable[Tensor], lr: float):
        self.params = list(params)
        for p in self.params:
            if not p.requires_grad:
                raise ParameterError(f"refusing to optimize frozen tensor {p!r}")
        self.lr = float(lr)
        self.state: dict[int, dict[str, np.ndarray]] = {}

    def step(self, grads: dict[Tensor, np.ndarray] | None = None) -> None:
        """Update every registered parameter from ``grads`` (or ``p.grad``)."""
        for p in self.params:
            if not p.requires_grad:
                raise ParameterError(f"frozen tensor {p!r} reached the optimizer")
            g = grads.get(p) if grads is not None else p.grad
            if g is None:
                continue
            self.update(id(p), p.data, g, self.lr)

    def update(self, key, param: np.ndarray, grad: np.ndarray, lr: float | None = None) -> None:
        raise NotImplementedError

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Buffers keyed by parameter position, for checkpoints."""
        out = {}
        for i, p in enumerate(self.params):
            for name, buf in self.state.get(id(p), {}).items():
                out[f"{i}.{name}"] = buf
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for key, buf in arrays.items():
            idx, name = key.split(".", 1)
            self.state.setdefault(id(self.params[int(idx)]), {})[name] = np.array(buf)


class SGD(_Optimizer):
    """v <- momentum * v + (g + wd * p);  p <- p - lr * v."""

    def __init__(self, params=(), lr: float = 0.1, momentum: float = 0.0, weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)

    def update(self, key, param, grad, lr=None):
        if grad.shape != param.shape:
            raise DimensionError(f"gradient shape {grad.shape} != parameter shape {param.shape}")
        lr = self.lr if lr is None else lr
        d = grad + self.weight_decay * param if self.weight_decay else grad
        if self.momentum:
            buf = self.state.setdefault(key, {}).get("velocity")
            if buf is None:
                buf = np.zeros_like(param)
                self.state[key]["velocity"] = buf
            buf *= self.momentum
            buf += d
            d = buf
        param -= (lr * d).astype(param.dtype, copy=False)


class Adam(_Optimizer):
    """Adam with bias correction and a constant learning rate."""

    def __init__(self, params=(), lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)

    def update(self, key, param, grad, lr=None):
        if grad.shape != param.shape:
            raise DimensionError(f"gradient shape {grad.shape} != parameter shape {param.shape}")
        lr = self.lr if lr is None else lr
        if self.weight_decay:
            grad = grad + self.weight_decay * param
        st = self.state.setdefault(key, {})
        if "m" not in st:
            st["m"] = np.zeros_like(param)
            st["v"] = np.zeros_like(param)
            st["t"] = np.zeros((), dtype=np.int64)
        st["t"] += 1
        t = int(st["t"])
        st["m"] *= self.beta1
        st["m"] += (1 - self.beta1) * grad
        st["v"] *= self.beta2
        st["v"] += (1 - self.beta2) * grad * grad
        m_hat = st["m"] / (1 - self.beta1**t)
        v_hat = st["v"] / (1 - self.beta2**t)
        param -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(param.dtype, copy=False)


def sgd_step(state: SGD, params, grads) -> None:
    for p, g in zip(params, grads):
        state.update(id(p), p.data if isinstance(p, Tensor) else p, np.asarray(g))


def adam_step(state: Adam, params, grads) -> None:
    for p, g in zip(params, grads):
        state.update(id(p), p.data if isinstance(p, Tensor) else p, np.asarray(g))


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    if not 0 <= epoch <= total_epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {total_epochs}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))
