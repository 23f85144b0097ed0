"""Top-k% subnetwork selection over popup scores.

Scores are stored signed; their magnitude is the ranking key. In the
default ``"rank"`` mode the absolute value is taken only when ranking, and
the straight-through gradient therefore carries a sign(score) factor. The
``"clamp"`` mode instead stores |score| after every update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from edgepop.errors import DimensionError, ParameterError
from edgepop.tensor import Tensor

ABS_MODES = ("rank", "clamp")


def check_k(k: float) -> float:
    k = float(k)
    if not 0.0 < k <= 1.0:
        raise ParameterError(f"k must lie in (0, 1], got {k}")
    return k


def drop_count(n: int, k: float) -> int:
    """floor((1 - k) * n); rounded to 9 decimals first so k=0.9, n=10 drops 1, not 0."""
    check_k(k)
    return int(math.floor(round((1.0 - k) * n, 9)))


def keep_count(n: int, k: float) -> int:
    return n - drop_count(n, k)


def get_subnet(scores, k: float) -> np.ndarray:
    """Binary mask keeping the ``keep_count`` largest |scores|.

    Ties are resolved by a stable ascending sort on (|score|, flat index), so
    the lowest flat indices among equal magnitudes are dropped first.
    """
    values = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    if values.size == 0:
        raise DimensionError("get_subnet needs a non-empty score tensor")
    j = drop_count(values.size, k)
    dtype = values.dtype if values.dtype.kind == "f" else np.float64
    if j == 0:
        return np.ones(values.shape, dtype=dtype)
    key = np.abs(values).ravel()
    # O(n) equivalent of the stable sort: everything below the j-th smallest
    # magnitude is dropped, then the lowest-index ties fill the remainder.
    cut = np.partition(key, j - 1)[j - 1]
    below = key < cut
    ties = np.flatnonzero(key == cut)[: j - int(below.sum())]
    keep = ~below
    keep[ties] = False
    return keep.astype(dtype).reshape(values.shape)


def ste_score_grad(upstream, weight, activation):
    """Straight-through estimate of dL/ds for one edge: dL/dI_v * w_uv * Z_u.

    Applies whether or not the edge is currently selected.
    """
    return upstream * weight * activation


def subnet_weight(weight: Tensor, scores: Tensor, k: float, abs_mode: str = "rank") -> Tensor:
    """Effective weight ``weight * get_subnet(|scores|, k)``.

    Backward passes the output gradient straight through the selection, so
    ``scores`` receive ``g * weight`` (times sign(scores) in rank mode).
    """
    if weight.shape != scores.shape:
        raise DimensionError(f"scores {scores.shape} must match weights {weight.shape}")
    if abs_mode not in ABS_MODES:
        raise ParameterError(f"abs_mode must be one of {ABS_MODES}, got {abs_mode!r}")
    mask = get_subnet(scores.data, k).astype(weight.dtype)
    W = weight.data

    def backward(g):
        gw = g * mask if weight._needs_grad else None
        gs = None
        if scores._needs_grad:
            gs = g * W
            if abs_mode == "rank":
                gs = gs * np.sign(scores.data)
        return gw, gs

    return Tensor.from_op(W * mask, (weight, scores), backward, "subnet_weight")


@dataclass
class PopupScores:
    """Trainable scores for one layer plus its keep fraction."""

    scores: np.ndarray
    k: float
    abs_mode: str = "rank"

    def __post_init__(self):
        check_k(self.k)

    def mask(self) -> np.ndarray:
        return get_subnet(self.scores, self.k)


def score_step(popup: PopupScores, grads: np.ndarray, optimizer_state, lr: float | None = None) -> PopupScores:
    """Apply one optimizer update to raw signed scores, in place.

    ``optimizer_state`` is an :class:`edgepop.optim.SGD`-like object exposing
    ``update(key, param, grad, lr)``. No clamping happens in rank mode.
    """
    grads = np.asarray(grads)
    if grads.shape != popup.scores.shape:
        raise DimensionError(f"gradient shape {grads.shape} != score shape {popup.scores.shape}")
    optimizer_state.update(id(popup), popup.scores, grads, lr)
    if popup.abs_mode == "clamp":
        np.abs(popup.scores, out=popup.scores)
    return popup


@dataclass
class SwapEvent:
    layer_id: object
    entered: list[int]
    exited: list[int]
    loss_before: float | None = None
    loss_after: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.entered)


def detect_swaps(before: np.ndarray, after: np.ndarray, layer_id=None) -> SwapEvent | None:
    before = np.asarray(before)
    after = np.asarray(after)
    if before.shape != after.shape:
        raise DimensionError(f"mask shapes differ: {before.shape} vs {after.shape}")
    b = before.ravel() > 0
    a = after.ravel() > 0
    entered = np.flatnonzero(a & ~b)
    exited = np.flatnonzero(b & ~a)
    if entered.size == 0 and exited.size == 0:
        return None
    return SwapEvent(layer_id, entered.tolist(), exited.tolist())
