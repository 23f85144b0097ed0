"""Executable checks of the edge-popup analysis.

* gradient oracles: closed-form straight-through score gradients against
  autodiff of a surrogate network, and dense gradients against central
  finite differences;
* swap checks: after a plain SGD step on the scores, does a swap confined to
  one layer lower the loss on the same mini-batch?
* brute-force enumeration of every layerwise subnetwork of a tiny MLP;
* subnetwork counting, forward-variance of scaled inits, and a top-k oracle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

from edgepop.errors import ParameterError
from edgepop.init import InitSpec, SAMPLERS, apply_scale, score_init
from edgepop.layers import (
    ArchSpec,
    MaskedLinear,
    Model,
    ReLU,
    WeightLayer,
    build_model,
)
from edgepop.optim import SGD
from edgepop.popup import SwapEvent, detect_swaps, get_subnet, keep_count
from edgepop.rng import RngStream
from edgepop.tensor import Tensor, backward, cross_entropy


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - b| / max(max |a|, max |b|).

    NaN when both are identically zero, so a dead network never passes.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    return float("nan") if scale == 0 else float(np.abs(a - b).max() / scale)


def batch_loss(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    return float(cross_entropy(model.forward(Tensor(x)), y).data)


# ---------------------------------------------------------------------------
# gradient oracles


def layer_io(model: Model, layer: WeightLayer, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Input activations Z and dL/dI for ``layer`` on one batch."""
    idx = model.layer_index(layer)
    z = model.forward(Tensor(x), stop=idx).data
    pre = Tensor(layer.forward(Tensor(z)).data, requires_grad=True)
    backward(cross_entropy(model.forward(pre, start=idx + 1), y))
    return z, pre.grad


def closed_form_key_grad(layer: WeightLayer, z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """dL/d|s| per edge: sum over batch (and positions) of dL/dI_v * w_uv * Z_u."""
    w = layer.weight.data
    if isinstance(layer, MaskedLinear):
        return np.einsum("nv,nu->vu", upstream, z) * w
    kk = w.shape[2]
    p, st = layer.padding, layer.stride
    zp = np.pad(z, ((0, 0), (0, 0), (p, p), (p, p)))
    ho, wo = upstream.shape[2:]
    out = np.zeros_like(w)
    for a in range(kk):
        for b in range(kk):
            window = zp[:, :, a : a + st * (ho - 1) + 1 : st, b : b + st * (wo - 1) + 1 : st]
            out[:, :, a, b] = np.einsum("nvhw,nuhw->vu", upstream, window)
    return out * w


def _surrogate_hook(leaves: dict):
    """Effective weight W * (mask + sign(s0) * (s - s0)), built from generic ops.

    Forward value equals the masked weight; autodiff through mul/add gives
    the straight-through score gradient.
    """

    def hook(layer: WeightLayer) -> Tensor:
        s0 = layer.scores.data
        w = layer.weight.data
        mask = get_subnet(s0, layer.k)
        leaf = leaves[layer.name]
        sign = np.sign(s0) if layer.abs_mode == "rank" else np.ones_like(s0)
        const = Tensor(w * mask - w * sign * s0)
        return const + Tensor(w * sign) * leaf

    return hook


@dataclass
class GradientReport:
    score_vs_surrogate: dict[str, float] = field(default_factory=dict)
    engine_vs_surrogate: dict[str, float] = field(default_factory=dict)
    dense_vs_fd: dict[str, float] = field(default_factory=dict)

    @property
    def max_score_err(self) -> float:
        return _nan_max([*self.score_vs_surrogate.values(), *self.engine_vs_surrogate.values()])

    @property
    def max_dense_err(self) -> float:
        return _nan_max(list(self.dense_vs_fd.values()))


def _nan_max(values: list[float]) -> float:
    return float(np.max(values)) if values else 0.0


class GradientMismatch(AssertionError):
    pass


def score_gradient_errors(model: Model, x: np.ndarray, y: np.ndarray) -> GradientReport:
    """Compare three routes to the popup-score gradient on one batch.

    engine: the model's own backward; surrogate: autodiff of the linearized
    surrogate; closed form: sum of dL/dI * w * Z (spatially summed for convs).
    """
    report = GradientReport()
    layers = [l for l in model.weight_layers if l.mode == "popup"]
    engine = backward(model.loss(x, y))
    engine = {l.name: engine[l.scores] for l in layers}

    leaves = {l.name: Tensor(l.scores.data.copy(), requires_grad=True) for l in layers}
    hook = _surrogate_hook(leaves)
    for l in layers:
        l.weight_hook = hook
    try:
        backward(model.loss(x, y))
    finally:
        for l in layers:
            l.weight_hook = None

    for l in layers:
        sur = leaves[l.name].grad
        z, up = layer_io(model, l, x, y)
        key = closed_form_key_grad(l, z, up)
        analytic = key * np.sign(l.scores.data) if l.abs_mode == "rank" else key
        report.score_vs_surrogate[l.name] = rel_err(analytic, sur)
        report.engine_vs_surrogate[l.name] = rel_err(engine[l.name], sur)
    return report


def dense_fd_errors(model: Model, x: np.ndarray, y: np.ndarray, rng: RngStream, entries: int = 12, eps: float = 1e-6) -> dict[str, float]:
    """Central finite differences on randomly chosen weight entries of a dense model."""
    grads = backward(model.loss(x, y))
    out = {}
    for layer in model.weight_layers:
        if layer.mode != "dense":
            raise ParameterError("finite-difference check needs a dense model")
        w = layer.weight.data
        picks = rng.fork(layer.name).integers(0, w.size, size=min(entries, w.size))
        analytic = grads[layer.weight].ravel()[picks]
        numeric = np.empty(len(picks))
        flat = w.reshape(-1)
        for i, p in enumerate(picks):
            orig = flat[p]
            flat[p] = orig + eps
            up = batch_loss(model, x, y)
            flat[p] = orig - eps
            down = batch_loss(model, x, y)
            flat[p] = orig
            numeric[i] = (up - down) / (2 * eps)
        out[layer.name] = rel_err(analytic, numeric)
    return out


def gradient_oracle(model: Model, batch, threshold: float = 1e-6) -> float:
    """Max relative error of the score-gradient routes; raises naming the worst tensor."""
    x, y = batch
    report = score_gradient_errors(model, x, y)
    worst = max(report.score_vs_surrogate, key=lambda n: np.nan_to_num(report.score_vs_surrogate[n], nan=np.inf), default=None)
    err = report.max_score_err
    if not err < threshold:
        raise GradientMismatch(f"score gradient of {worst}: rel. err {err:.3e} >= {threshold:g}")
    return err


def gradient_suite(seed: int = 0) -> tuple[GradientReport, list[str]]:
    """Masked MLP, masked conv net and dense conv net, all at 64-bit."""
    rng = RngStream(seed, ("gradients",))
    lines = []
    report = GradientReport()
    init = InitSpec("kaiming_normal")
    x = rng.fork("x_mlp").normal((16, 20))
    y = rng.fork("y_mlp").integers(0, 5, 16)
    mlp = build_model(ArchSpec("mlp", Fraction(1, 8), classes=5), 0.5, init, rng.fork("mlp"), input_shape=(20,), dtype=np.float64)
    r = score_gradient_errors(mlp, x, y)
    report.score_vs_surrogate.update({f"mlp/{k}": v for k, v in r.score_vs_surrogate.items()})
    report.engine_vs_surrogate.update({f"mlp/{k}": v for k, v in r.engine_vs_surrogate.items()})

    xc = rng.fork("x_conv").normal((4, 3, 8, 8))
    yc = rng.fork("y_conv").integers(0, 10, 4)
    conv = build_model(ArchSpec("conv2", Fraction(1, 8), fc_widths=(32, 32)), 0.5, init, rng.fork("conv"), input_shape=(3, 8, 8), dtype=np.float64)
    r = score_gradient_errors(conv, xc, yc)
    report.score_vs_surrogate.update({f"conv/{k}": v for k, v in r.score_vs_surrogate.items()})
    report.engine_vs_surrogate.update({f"conv/{k}": v for k, v in r.engine_vs_surrogate.items()})

    dense = build_model(ArchSpec("conv2", Fraction(1, 8), fc_widths=(32, 32)), 1.0, init, rng.fork("dense"), "dense_sgd", (3, 8, 8), dtype=np.float64)
    report.dense_vs_fd.update({f"dense/{k}": v for k, v in dense_fd_errors(dense, xc, yc, rng.fork("fd")).items()})

    for name, v in report.score_vs_surrogate.items():
        lines.append(f"  closed-form vs surrogate  {name:<14} rel.err {v:.2e}")
    for name, v in report.engine_vs_surrogate.items():
        lines.append(f"  engine vs surrogate       {name:<14} rel.err {v:.2e}")
    for name, v in report.dense_vs_fd.items():
        lines.append(f"  dense vs finite diff      {name:<14} rel.err {v:.2e}")
    return report, lines


# ---------------------------------------------------------------------------
# swap checks


@dataclass
class SwapCheckReport:
    events: list[SwapEvent]
    decreased: int
    violated: int
    lr: float
    tolerance: float
    steps: int = 0
    excluded: int = 0

    @property
    def inconclusive(self) -> bool:
        return not self.events

    @property
    def fraction_ok(self) -> float:
        return self.decreased / len(self.events) if self.events else float("nan")


def receiving_node(layer: WeightLayer, flat_index: int) -> int:
    """Output neuron (linear) or output channel (conv) an edge feeds."""
    return int(flat_index // int(np.prod(layer.weight.shape[1:])))


def _as_batches(batch) -> list[tuple[np.ndarray, np.ndarray]]:
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray):
        return [batch]
    return list(batch)


def is_single_swap(layer: WeightLayer, ev: SwapEvent) -> bool:
    """One edge in, one edge out, both feeding the same node."""
    return (
        len(ev.entered) == 1
        and len(ev.exited) == 1
        and receiving_node(layer, ev.entered[0]) == receiving_node(layer, ev.exited[0])
    )


def harvest_trajectory(model: Model, batch, lr: float, steps: int = 500, tolerance: float = 0.0) -> tuple[SwapCheckReport, SwapCheckReport]:
    """Plain SGD on the scores; classify every mask change along the way.

    Returns ``(single, general)`` reports from the same trajectory. A step is
    a general event when the masks of exactly one layer change, and a single
    event when in addition it is one same-node swap. Loss is re-evaluated on
    the step's own batch with all weights fixed. ``batch`` is one ``(x, y)``
    pair or a list of them, used cyclically.
    """
    data = _as_batches(batch)
    layers = model.weight_layers
    opt = SGD(model.trainable(), lr=lr)
    single: list[SwapEvent] = []
    general: list[SwapEvent] = []
    multi_layer = 0
    for step in range(steps):
        x, y = data[step % len(data)]
        before = [l.mask() for l in layers]
        loss = model.loss(x, y)
        loss_before = float(loss.data)
        opt.step(backward(loss))
        for l in layers:
            if l.abs_mode == "clamp":
                np.abs(l.scores.data, out=l.scores.data)
        changed = [(l, ev) for l, b in zip(layers, before) if (ev := detect_swaps(b, l.mask(), l.name)) is not None]
        if not changed:
            continue
        if len(changed) != 1:
            multi_layer += 1
            continue
        layer, ev = changed[0]
        ev.loss_before = loss_before
        ev.loss_after = batch_loss(model, x, y)
        ev.extra["step"] = step
        general.append(ev)
        if is_single_swap(layer, ev):
            single.append(ev)

    def report(events, excluded):
        ok = sum(ev.loss_after <= ev.loss_before + tolerance for ev in events)
        return SwapCheckReport(events, ok, len(events) - ok, lr, tolerance, steps, excluded)

    return report(single, multi_layer + len(general) - len(single)), report(general, multi_layer)


def harvest_swaps(model: Model, batch, lr: float, steps: int = 500, single: bool = True, tolerance: float = 0.0) -> SwapCheckReport:
    return harvest_trajectory(model, batch, lr, steps, tolerance)[0 if single else 1]


def theorem1_single_swap(model: Model, batch, lr: float, steps: int = 500, tolerance: float = 0.0) -> SwapCheckReport:
    return harvest_swaps(model, batch, lr, steps, single=True, tolerance=tolerance)


def theorem1_general(model: Model, batch, lr: float, steps: int = 500, tolerance: float = 0.0) -> SwapCheckReport:
    return harvest_swaps(model, batch, lr, steps, single=False, tolerance=tolerance)


@dataclass
class ConstructedSwap:
    passed: bool
    halvings: int
    lr: float
    loss_before: float
    loss_after: float
    event: SwapEvent | None
    first_order: float


def _key_grads(model: Model, x, y) -> dict[str, np.ndarray]:
    """dL/d|s| for every popup layer via the closed form."""
    out = {}
    for layer in model.weight_layers:
        z, up = layer_io(model, layer, x, y)
        out[layer.name] = closed_form_key_grad(layer, z, up)
    return out


def _separate_scores(layer: WeightLayer, rng: RngStream, lo=(0.5, 1.0), hi=(2.0, 3.0)) -> np.ndarray:
    """Positive scores with the current mask pattern and a wide gap at the threshold."""
    mask = layer.mask().astype(bool)
    draws_hi = rng.fork("hi").uniform(mask.shape, *hi)
    draws_lo = rng.fork("lo").uniform(mask.shape, *lo)
    return np.where(mask, draws_hi, draws_lo)


def construct_swap_instance(model: Model, x, y, rng: RngStream, pairs: int = 1, layer_index: int = 0, lr: float = 1.0, max_halvings: int = 20) -> ConstructedSwap:
    """Engineer a step that swaps ``pairs`` edge pairs in one layer, then check the loss.

    Scores are made positive with a wide gap at the selection threshold.
    Exiting edges sit just above the gap's middle and entering edges just
    below, with the spacing chosen from the learning rate so one plain SGD
    step exchanges them (the score inequality of the swap argument). With
    ``pairs == 1`` both edges feed the same node. If the step causes any
    other swap or the loss fails to drop, the learning rate is halved.
    """
    layers = model.weight_layers
    for l in layers:
        l.scores.data[...] = _separate_scores(l, rng.fork(l.name))
    target = layers[layer_index]
    g = _key_grads(model, x, y)[target.name]
    mask = target.mask().astype(bool)
    mid = 1.5
    if pairs == 1:
        rows = g.reshape(g.shape[0], -1)
        m2 = mask.reshape(mask.shape[0], -1)
        best = None
        for v in range(rows.shape[0]):
            if m2[v].all() or not m2[v].any():
                continue
            j = np.flatnonzero(m2[v])[rows[v][m2[v]].argmax()]
            i = np.flatnonzero(~m2[v])[rows[v][~m2[v]].argmin()]
            margin = rows[v, j] - rows[v, i]
            if best is None or margin > best[0]:
                best = (margin, v * rows.shape[1] + i, v * rows.shape[1] + j)
        if best is None or best[0] <= 0:
            raise ParameterError("no node admits a loss-decreasing swap")
        entering, exiting = [best[1]], [best[2]]
    else:
        flat = g.ravel()
        on = np.flatnonzero(mask.ravel())
        off = np.flatnonzero(~mask.ravel())
        exiting = on[np.argsort(flat[on], kind="stable")[::-1][:pairs]].tolist()
        entering = off[np.argsort(flat[off], kind="stable")[:pairs]].tolist()
    gflat = g.ravel()
    margin = gflat[exiting].min() - gflat[entering].max()
    if margin <= 0:
        raise ParameterError("chosen edges do not satisfy the swap inequality")
    first_order = float(gflat[entering].sum() - gflat[exiting].sum())

    base = {l.name: l.scores.data.copy() for l in layers}
    loss0 = batch_loss(model, x, y)
    step_lr = lr
    for halving in range(max_halvings + 1):
        for l in layers:
            l.scores.data[...] = base[l.name]
        s = target.scores.data.reshape(-1)
        gap = step_lr * margin / 2
        s[exiting] = mid
        s[entering] = mid - gap
        before = [l.mask() for l in layers]
        opt = SGD(model.trainable(), lr=step_lr)
        opt.step(backward(model.loss(x, y)))
        changes = [detect_swaps(b, l.mask(), l.name) for l, b in zip(layers, before)]
        ev = changes[layer_index]
        clean = (
            all(c is None for i, c in enumerate(changes) if i != layer_index)
            and ev is not None
            and sorted(ev.entered) == sorted(entering)
            and sorted(ev.exited) == sorted(exiting)
        )
        loss1 = batch_loss(model, x, y)
        if clean and loss1 < loss0:
            ev.loss_before, ev.loss_after = loss0, loss1
            return ConstructedSwap(True, halving, step_lr, loss0, loss1, ev, first_order)
        step_lr /= 2
    return ConstructedSwap(False, max_halvings, step_lr, loss0, loss1, None, first_order)


def constructed_suite(seed: int = 0, instances: int = 10, pairs: int = 1) -> tuple[list[ConstructedSwap], list[str]]:
    rng = RngStream(seed, ("constructed", str(pairs)))
    results = []
    for t in range(instances):
        r = rng.fork(str(t))
        model = build_model(ArchSpec("mlp", Fraction(1, 4), classes=5, fc_widths=(256,)), 0.5, InitSpec("kaiming_normal"), r.fork("model"), input_shape=(32,), dtype=np.float64)
        x = r.fork("x").normal((64, 32))
        y = r.fork("y").integers(0, 5, 64)
        results.append(construct_swap_instance(model, x, y, r.fork("scores"), pairs=pairs, layer_index=t % 2))
    lines = [
        f"  instance {i}: {'decrease' if c.passed else 'FAILED'} after {c.halvings} halvings "
        f"(lr {c.lr:.3g}, loss {c.loss_before:.6f} -> {c.loss_after:.6f})"
        for i, c in enumerate(results)
    ]
    return results, lines


def harvest_setup(seed: int = 0, width: int = 256, batch_size: int = 128, n_batches: int = 8):
    """Blobs MLP at 64-bit plus a fixed list of mini-batches for swap harvesting."""
    from edgepop.data import synth_blobs

    train, _ = synth_blobs(10, 64, 200, 1.0, RngStream(seed, ("harvest", "data")))
    model = build_model(
        ArchSpec("mlp", Fraction(width, 256)), 0.5, InitSpec("signed_constant"), RngStream(seed, ("harvest", "model")),
        input_shape=(64,), dtype=np.float64,
    )
    order = RngStream(seed, ("harvest", "order")).permutation(len(train))
    data = [
        (train.images[idx].astype(np.float64), train.labels[idx])
        for idx in (order[i * batch_size : (i + 1) * batch_size] for i in range(n_batches))
    ]
    return model, data


# ---------------------------------------------------------------------------
# enumeration


@dataclass
class BruteForceResult:
    best_masks: list[np.ndarray]
    best_loss: float
    best_accuracy: float
    enumerated_count: int
    losses: np.ndarray

    @property
    def summary(self) -> dict[str, float]:
        return {
            "min": float(self.losses.min()),
            "median": float(np.median(self.losses)),
            "max": float(self.losses.max()),
        }


class BudgetExceeded(ParameterError):
    pass


def subnetwork_count(n: int, k: float) -> int:
    """C(n, keep_count(n, k)), exact."""
    if n < 0:
        raise ParameterError(f"n must be nonnegative, got {n}")
    return math.comb(n, keep_count(n, k)) if n else 1


def layer_masks(shape, k: float) -> np.ndarray:
    """Every mask of ``shape`` with exactly keep_count ones, lexicographic order."""
    n = int(np.prod(shape))
    keep = keep_count(n, k)
    combos = list(itertools.combinations(range(n), keep))
    out = np.zeros((len(combos), n))
    for row, c in enumerate(combos):
        out[row, list(c)] = 1.0
    return out.reshape((len(combos), *shape))


def brute_force_subnets(model: Model, dataset, k: float | None = None, budget: int = 10**6, chunk: int = 4096) -> BruteForceResult:
    """Loss and accuracy of every layerwise mask combination of a small MLP.

    ``dataset`` is a :class:`edgepop.data.Dataset` or an ``(x, y)`` pair.
    Combinations are enumerated in lexicographic order of per-layer mask
    indices; the last layer is evaluated in vectorized chunks.
    """
    layers = model.weight_layers
    if not all(isinstance(layer, (MaskedLinear, ReLU)) for layer in model.layers):
        raise ParameterError("brute-force enumeration supports linear/ReLU stacks only")
    ks = [k if k is not None else l.k for l in layers]
    total = math.prod(subnetwork_count(l.numel, kk) for l, kk in zip(layers, ks))
    if total > budget:
        raise BudgetExceeded(f"{total} mask combinations exceed the budget of {budget}")
    x, y = (dataset.images, dataset.labels) if hasattr(dataset, "images") else dataset
    x = np.asarray(x, dtype=np.float64)
    n = len(y)
    weights = [l.weight.data.astype(np.float64) for l in layers]
    masks = [layer_masks(w.shape, kk) for w, kk in zip(weights, ks)]
    losses = np.empty(total)
    correct = np.empty(total, dtype=np.int64)
    pos = 0

    def recurse(depth: int, h: np.ndarray):
        nonlocal pos
        if depth == len(layers) - 1:
            eff = masks[depth] * weights[depth]
            for start in range(0, len(eff), chunk):
                logits = np.einsum("ni,moi->mno", h, eff[start : start + chunk])
                logp = logits - logits.max(axis=2, keepdims=True)
                logp -= np.log(np.exp(logp).sum(axis=2, keepdims=True))
                m = len(logits)
                losses[pos : pos + m] = -logp[:, np.arange(n), y].mean(axis=1)
                correct[pos : pos + m] = (logits.argmax(axis=2) == y).sum(axis=1)
                pos += m
            return
        for mask in masks[depth]:
            recurse(depth + 1, np.maximum(h @ (weights[depth] * mask).T, 0))

    recurse(0, x)
    best = int(np.argmin(losses))
    idx = np.unravel_index(best, [len(m) for m in masks])
    return BruteForceResult([masks[d][i] for d, i in enumerate(idx)], float(losses[best]), float(correct[best] / n), total, losses)


def random_mask_losses(model: Model, x, y, count: int, rng: RngStream) -> np.ndarray:
    """Loss of ``count`` random masks (per-layer keep counts preserved)."""
    out = np.empty(count)
    layers = model.weight_layers
    try:
        for t in range(count):
            for l in layers:
                l.mask_override = get_subnet(rng.fork(f"{t}/{l.name}").normal(l.weight.shape), l.k)
            out[t] = batch_loss(model, x, y)
    finally:
        for l in layers:
            l.mask_override = None
    return out


# ---------------------------------------------------------------------------
# forward variance


def forward_variance(k: float, kind: str = "kaiming_normal", scaled: bool = False, fan_in: int = 1024, fan_out: int = 256, samples: int = 256, trials: int = 100, seed: int = 0) -> float:
    """Mean output variance of a masked linear layer on unit-variance input.

    Scores are drawn independently of the weights, so the mask is a uniform
    random k-subset of each layer.
    """
    rng = RngStream(seed, ("variance", kind, str(scaled), str(k)))
    spec = InitSpec(kind, scaled, k)
    out = np.empty(trials)
    for t in range(trials):
        r = rng.fork(str(t))
        w = SAMPLERS[kind]((fan_out, fan_in), fan_in, r.fork("w"))
        if scaled:
            w = apply_scale(spec, w)
        mask = get_subnet(score_init((fan_out, fan_in), fan_in, r.fork("s")), k)
        x = r.fork("x").normal((samples, fan_in))
        out[t] = (x @ (w * mask).T).var()
    return float(out.mean())


# ---------------------------------------------------------------------------
# top-k oracle


def topk_oracle(scores: Iterable[float], k: float) -> np.ndarray:
    """Reference top-k mask: Python sort on (|s|, index), exact rational count."""
    scores = list(scores)
    n = len(scores)
    drop = math.floor((1 - Fraction(str(k))) * n)
    order = sorted(range(n), key=lambda i: (abs(scores[i]), i))
    mask = np.ones(n)
    mask[order[:drop]] = 0
    return mask


def topk_suite(seed: int = 0, trials: int = 1000) -> tuple[int, int, list[str]]:
    rng = RngStream(seed, ("topk",))
    ks = [round(0.1 * i, 1) for i in range(1, 10)]
    matches = 0
    for t in range(trials):
        r = rng.fork(str(t))
        n = int(r.integers(1, 65))
        k = ks[int(r.integers(0, len(ks)))]
        if t % 3 == 0:
            s = r.integers(-4, 5, n) * 0.25  # heavy ties, both signs
        else:
            s = r.normal(n)
        if np.array_equal(get_subnet(s, k), topk_oracle(s, k)):
            matches += 1
    return matches, trials, [f"  {matches}/{trials} masks match the stable-sort oracle"]


# ---------------------------------------------------------------------------
# suites

HARVEST_BUDGETS = {1e-5: 6000, 1e-4: 3000}
HARVEST_THRESHOLDS = {1e-5: 0.99, 1e-4: 0.95}


@dataclass
class SuiteResult:
    name: str
    passed: bool
    lines: list[str]
    summary: dict


def _harvest_lines(label: str, r: SwapCheckReport, need: float) -> tuple[bool, str]:
    if r.inconclusive:
        return True, f"  harvested {label:<8} lr {r.lr:g}: no qualifying events in {r.steps} steps (inconclusive)"
    ok = r.fraction_ok >= need
    return ok, (
        f"  harvested {label:<8} lr {r.lr:g}: {r.decreased}/{len(r.events)} non-increasing "
        f"({100 * r.fraction_ok:.1f}%, need {100 * need:.0f}%), {r.excluded} excluded"
    )


def theorem1_suite(seed: int = 0, general: bool = False, budgets: dict | None = None) -> SuiteResult:
    """Constructed instances plus harvested events at the two reference learning rates."""
    pairs = 3 if general else 1
    constructed, lines = constructed_suite(seed, pairs=pairs)
    passed = all(c.passed for c in constructed)
    summary = {"constructed_passed": sum(c.passed for c in constructed), "constructed_total": len(constructed)}
    for lr, steps in (budgets or HARVEST_BUDGETS).items():
        model, data = harvest_setup(seed)
        single, multi = harvest_trajectory(model, data, lr, steps)
        report = multi if general else single
        ok, line = _harvest_lines("multi" if general else "single", report, HARVEST_THRESHOLDS.get(lr, 0.99))
        passed &= ok
        lines.append(line)
        summary[f"lr={lr:g}"] = {"events": len(report.events), "non_increasing": report.decreased, "inconclusive": report.inconclusive}
    return SuiteResult("theorem1_general" if general else "theorem1", passed, lines, summary)


def micro_config(seed: int = 0):
    """4 -> 3 -> 3 MLP on 3-class blobs: 924 * 126 layerwise masks at k = 0.5.

    Full-batch training, so edge-popup and the enumeration see the same loss.
    The spread is pinned so the instance does not follow the default task.
    """
    from edgepop.config import default_blobs_config

    return default_blobs_config(**{
        "model.fc_widths": "3",
        "data.classes": 3,
        "data.dim": 4,
        "data.per_class": 50,
        "data.spread": 1.0,
        "optim.batch_size": 1000,
        "optim.weight_decay": 0.0,
        "run.dtype": "float64",
        "run.epochs": 200,
        "run.seed": seed,
    })


def micro_instance(seed: int = 0):
    """Untrained micro model and its training split."""
    from edgepop.train import build_from_config, load_datasets

    cfg = micro_config(seed)
    train_ds, _ = load_datasets(cfg)
    return build_from_config(cfg, train_ds.input_shape), train_ds


def micro_optimality(seeds=range(8)) -> list[tuple[float, float]]:
    """(trained loss, brute-force optimum) on the training split, per seed."""
    from edgepop.train import evaluate, train

    out = []
    for seed in seeds:
        model, train_ds = micro_instance(seed)
        best = brute_force_subnets(model, train_ds).best_loss
        result = train(micro_config(seed), datasets=(train_ds, train_ds))
        out.append((evaluate(result.model, train_ds)[0], best))
    return out


def bruteforce_suite(seed: int = 0) -> SuiteResult:
    model, data = micro_instance(seed)
    result = brute_force_subnets(model, data)
    expected = math.prod(subnetwork_count(l.numel, l.k) for l in model.weight_layers)
    s = result.summary
    passed = result.enumerated_count == expected == len(result.losses) and s["max"] > s["min"]
    lines = [
        f"  enumerated {result.enumerated_count} subnetworks (expected {expected})",
        f"  loss min {s['min']:.4f} median {s['median']:.4f} max {s['max']:.4f}",
        f"  best subnetwork accuracy {result.best_accuracy:.3f}",
    ]
    return SuiteResult("bruteforce", passed, lines, {"count": result.enumerated_count, **s})


def variance_suite(seed: int = 0) -> SuiteResult:
    dense = forward_variance(1.0, seed=seed)
    lines = [f"  dense output variance {dense:.4f}"]
    passed = True
    summary = {"dense": dense}
    for k in (0.3, 0.5):
        scaled = forward_variance(k, scaled=True, seed=seed) / dense
        plain = forward_variance(k, scaled=False, seed=seed) / dense
        ok = abs(scaled - 1) <= 0.10 and abs(plain / k - 1) <= 0.15
        passed &= ok
        lines.append(f"  k={k}: scaled/dense {scaled:.4f}, unscaled/dense {plain:.4f} (k = {k})")
        summary[f"k={k}"] = {"scaled_ratio": scaled, "unscaled_ratio": plain}
    return SuiteResult("variance", passed, lines, summary)


def run_suite(name: str, seed: int = 0) -> SuiteResult:
    if name == "topk":
        matches, trials, lines = topk_suite(seed)
        return SuiteResult(name, matches == trials, lines, {"matches": matches, "trials": trials})
    if name == "gradients":
        report, lines = gradient_suite(seed)
        score, dense = report.max_score_err, report.max_dense_err
        lines.append(f"  max score rel.err {score:.3e} (< 1e-6), max dense rel.err {dense:.3e} (< 1e-5)")
        return SuiteResult(name, score < 1e-6 and dense < 1e-5, lines, {"max_score_err": score, "max_dense_err": dense})
    if name == "theorem1":
        return theorem1_suite(seed)
    if name == "theorem1_general":
        return theorem1_suite(seed, general=True)
    if name == "bruteforce":
        return bruteforce_suite(seed)
    if name == "variance":
        return variance_suite(seed)
    raise ParameterError(f"unknown suite {name!r}; choose from {SUITES}")


SUITES = ("topk", "gradients", "theorem1", "theorem1_general", "bruteforce", "variance")
