"""Weight and score initializers, all parameterized by fan-in.

Names used in config files: ``kaiming_normal``, ``signed_constant``,
``kaiming_uniform``, ``xavier_normal``; any of them may carry ``scaled``,
which multiplies the draws by sqrt(1/k).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from edgepop.errors import ParameterError
from edgepop.rng import RngStream

KINDS = ("kaiming_normal", "signed_constant", "kaiming_uniform", "xavier_normal")


@dataclass(frozen=True)
class InitSpec:
    kind: str = "signed_constant"
    scaled: bool = False
    k: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown init kind {self.kind!r}; expected one of {KINDS}")
        if self.scaled:
            _check_k(self.k)

    def sample(self, shape, fan_in: int, rng: RngStream, dtype=np.float32) -> np.ndarray:
        out = SAMPLERS[self.kind](shape, fan_in, rng)
        if self.scaled:
            out = apply_scale(self, out)
        return out.astype(dtype)


def _check_fan_in(fan_in: int) -> None:
    if fan_in <= 0:
        raise ParameterError(f"fan_in must be positive, got {fan_in}")


def _check_k(k: float) -> None:
    if not 0.0 < k <= 1.0:
        raise ParameterError(f"k must lie in (0, 1], got {k}")


def kaiming_std(fan_in: int) -> float:
    _check_fan_in(fan_in)
    return math.sqrt(2.0 / fan_in)


def kaiming_normal(shape, fan_in: int, rng: RngStream) -> np.ndarray:
    return rng.normal(shape, scale=kaiming_std(fan_in))


def signed_kaiming_constant(shape, fan_in: int, rng: RngStream) -> np.ndarray:
    """Each entry is +sigma or -sigma with equal probability, sigma the Kaiming std."""
    sigma = kaiming_std(fan_in)
    signs = rng.integers(0, 2, size=shape) * 2 - 1
    return signs.astype(np.float64) * sigma


def xavier_normal(shape, fan_in: int, rng: RngStream) -> np.ndarray:
    _check_fan_in(fan_in)
    return rng.normal(shape, scale=math.sqrt(1.0 / fan_in))


def kaiming_uniform_bound(fan_in: int) -> float:
    _check_fan_in(fan_in)
    return math.sqrt(6.0 / fan_in)


def kaiming_uniform(shape, fan_in: int, rng: RngStream) -> np.ndarray:
    bound = kaiming_uniform_bound(fan_in)
    return rng.uniform(shape, -bound, bound)


def apply_scale(spec: InitSpec, tensor: np.ndarray) -> np.ndarray:
    """Multiply by sqrt(1/k) so a k-sparse layer keeps the dense forward variance."""
    if not spec.scaled:
        raise ParameterError("apply_scale requires spec.scaled=True")
    _check_k(spec.k)
    return tensor * math.sqrt(1.0 / spec.k)


def score_init(shape, fan_in: int, rng: RngStream) -> np.ndarray:
    """Popup scores: kaiming-uniform draws, symmetric about zero."""
    return kaiming_uniform(shape, fan_in, rng)


def fan_in_of(shape) -> int:
    """Inputs per output unit: ``in`` for [out, in], C*k*k for [O, C, k, k]."""
    shape = tuple(shape)
    if len(shape) < 2:
        raise ParameterError(f"fan_in undefined for shape {shape}")
    return int(np.prod(shape[1:]))


SAMPLERS = {
    "kaiming_normal": kaiming_normal,
    "signed_constant": signed_kaiming_constant,
    "kaiming_uniform": kaiming_uniform,
    "xavier_normal": xavier_normal,
}
