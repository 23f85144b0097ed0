"""Dense tensors with reverse-mode differentiation.

Only the primitives the masked networks need are provided: matmul, 2-D
cross-correlation, ReLU, 2x2 max pooling, softmax cross-entropy and a few
elementwise helpers. Every op checks its output for NaN/Inf.

Leaves created with ``requires_grad=True`` are trainable; every other leaf is
frozen and never receives a gradient entry.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from edgepop.errors import DataError, DimensionError, GraphError, NonFiniteError

_FLOATS = (np.float32, np.float64)

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """An n-dimensional float array that remembers how it was computed."""

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOATS:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._needs_grad = self.requires_grad

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Iterable["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        """Wrap the result of a differentiable op.

        ``backward`` maps the output gradient to one gradient per parent
        (``None`` for parents that need none).
        """
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"{op} produced non-finite values")
        out = cls(data)
        out.op = op
        out._parents = tuple(parents)
        out._needs_grad = any(p._needs_grad for p in out._parents)
        out._backward = backward if out._needs_grad else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{tag})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other) -> "Tensor":
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return mul(self, Tensor(np.asarray(-1.0, dtype=self.dtype)))

    def __sub__(self, other) -> "Tensor":
        return add(self, -_as_tensor(other, self.dtype))

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tsum(self) * (1.0 / self.size)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul needs [m,p] x [p,n], got {a.shape} x {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return (g @ B.T if a._needs_grad else None, A.T @ g if b._needs_grad else None)

    return Tensor.from_op(A @ B, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(out, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply {a.shape} and {b.shape}") from exc
    A, B = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * B, a.shape) if a._needs_grad else None,
            _unbroadcast(g * A, b.shape) if b._needs_grad else None,
        )

    return Tensor.from_op(out, (a, b), backward, "mul")


def tsum(x: Tensor) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def backward(g):
        return (np.broadcast_to(g, shape).astype(dtype),)

    return Tensor.from_op(np.asarray(x.data.sum(), dtype=dtype), (x,), backward, "sum")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from exc
    orig = x.shape
    return Tensor.from_op(out, (x,), lambda g: (g.reshape(orig),), "reshape")


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis after the batch axis."""
    return reshape(x, (x.shape[0], -1))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return Tensor.from_op(x.data.T, (x,), lambda g: (g.T,), "transpose")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return Tensor.from_op(np.maximum(x.data, 0), (x,), lambda g: (g * pos,), "relu")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 over the last two axes of an NCHW tensor."""
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise DimensionError(f"maxpool2 needs NCHW with even spatial extents, got {x.shape}")
    n, c, h, w = x.shape
    windows = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros(windows.shape, dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        return (gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return Tensor.from_op(out, (x,), backward, "maxpool2")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise DimensionError(
            f"non-integral conv output: ({size} + 2*{padding} - {kernel}) / {stride} + 1"
        )
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW input with an [O,C,k,k] kernel.

    Computed as a sum of k*k shifted matmuls over channels, which keeps the
    memory footprint at one copy of the padded input.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d needs 4-d input and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    o, c_w, kh, kw = weight.shape
    if c != c_w:
        raise DimensionError(f"conv2d channel mismatch: input has {c}, weight expects {c_w}")
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d needs an odd square kernel, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"invalid stride={stride} / padding={padding}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)

    xp = np.pad(x.data.transpose(0, 2, 3, 1), ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    W = weight.data
    # per-offset [C, O] and [O, C] kernel slices, contiguous for BLAS
    w_fwd = np.ascontiguousarray(W.transpose(2, 3, 1, 0))
    out = np.zeros((n, ho, wo, o), dtype=np.result_type(x.dtype, weight.dtype))
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    flat = out.reshape(-1, o)
    for i in range(kh):
        for j in range(kw):
            # contiguous copy keeps the product on the BLAS path
            patch = np.ascontiguousarray(xp[:, i : i + hs : stride, j : j + ws : stride, :]).reshape(-1, c)
            flat += patch @ w_fwd[i, j]

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        gx = np.zeros_like(xp) if x._needs_grad else None
        gw = np.zeros_like(W) if weight._needs_grad else None
        w_bwd = np.ascontiguousarray(W.transpose(2, 3, 0, 1)) if gx is not None else None
        for i in range(kh):
            for j in range(kw):
                if gw is not None:
                    patch = np.ascontiguousarray(xp[:, i : i + hs : stride, j : j + ws : stride, :]).reshape(-1, c)
                    gw[:, :, i, j] = g2.T @ patch
                if gx is not None:
                    gx[:, i : i + hs : stride, j : j + ws : stride, :] += (g2 @ w_bwd[i, j]).reshape(n, ho, wo, c)
        if gx is not None:
            gx = gx[:, padding : padding + h, padding : padding + w, :].transpose(0, 3, 1, 2)
        return gx, gw

    return Tensor.from_op(out.transpose(0, 3, 1, 2), (x, weight), backward, "conv2d")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy needs [N,classes] logits and N labels, got {logits.shape}, {labels.shape}")
    if labels.size == 0:
        raise DataError("cross_entropy of an empty batch")
    classes = logits.shape[1]
    if (labels.min() < 0 or labels.max() >= classes):
        raise DataError(f"labels must lie in [0, {classes})")
    logp = log_softmax(logits.data)
    n = labels.size
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return Tensor.from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


class Graph:
    """Topologically ordered view of the computation that produced ``output``."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = self._toposort(output)

    @staticmethod
    def _toposort(root: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        state: dict[int, int] = {}  # 1 = on stack, 2 = done
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            key = id(node)
            if expanded:
                state[key] = 2
                order.append(node)
                continue
            if state.get(key) == 2:
                continue
            if state.get(key) == 1:
                raise GraphError(f"cycle detected at {node!r}")
            state[key] = 1
            stack.append((node, True))
            for parent in node._parents:
                pstate = state.get(id(parent))
                if pstate == 1:
                    raise GraphError(f"cycle detected at {parent!r}")
                if pstate is None:
                    stack.append((parent, False))
        return order


def backward(graph: Graph | Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep; returns d(output)/dt for every trainable leaf reached.

    Each leaf's ``grad`` attribute is also set. Frozen leaves get no entry.
    """
    if isinstance(graph, Tensor):
        graph = Graph(graph)
    root = graph.output
    if root.size != 1:
        raise GraphError(f"backward needs a scalar output, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    result: dict[Tensor, np.ndarray] = {}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None or not node._needs_grad:
            continue
        if node.op == "leaf":
            node.grad = g
            result[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent._needs_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return result
