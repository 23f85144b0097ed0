"""Grid sweeps over one configuration axis, aggregated over seeds.

Every grid point is trained once per seed; the table holds mean and
(population) standard deviation of last-epoch test accuracy and loss, as
comma-separated, plot-ready rows.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from edgepop.config import TrainConfig
from edgepop.errors import ConfigError
from edgepop.layers import layer_sizes, subnet_size
from edgepop.popup import keep_count

log = logging.getLogger(__name__)

AXES = ("k", "width", "fixed_params", "init", "algorithm", "seed")
_AXIS_KEYS = {
    "k": "model.k",
    "width": "model.width_multiplier",
    "init": "model.init",
    "algorithm": "run.algorithm",
    "seed": "run.seed",
}


@dataclass
class SweepPoint:
    axis: str
    value: str
    overrides: dict
    note: str = ""


@dataclass
class SweepRow:
    value: str
    overrides: dict
    accs: list[float]
    losses: list[float]
    edges: int
    dense_accs: list[float] = field(default_factory=list)

    @property
    def acc_mean(self) -> float:
        return float(np.mean(self.accs))

    @property
    def acc_std(self) -> float:
        return float(np.std(self.accs))

    @property
    def gap(self) -> float | None:
        return float(np.mean(self.dense_accs)) - self.acc_mean if self.dense_accs else None


@dataclass
class SweepTable:
    axis: str
    rows: list[SweepRow]
    skipped: list[SweepPoint] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        dense = any(r.dense_accs for r in self.rows)
        header = [self.axis, "seeds", "edges", "test_acc_mean", "test_acc_std", "test_loss_mean", "test_loss_std"]
        if dense:
            header += ["dense_acc_mean", "dense_acc_std", "gap"]
        w.writerow(header)
        for r in self.rows:
            line = [r.value, len(r.accs), r.edges, repr(r.acc_mean), repr(r.acc_std), repr(float(np.mean(r.losses))), repr(float(np.std(r.losses)))]
            if dense:
                line += [repr(float(np.mean(r.dense_accs))), repr(float(np.std(r.dense_accs))), repr(r.gap)]
            w.writerow(line)
        return buf.getvalue()

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.rows]


def edges_for(cfg: TrainConfig, input_shape, k: float | None = None) -> int:
    """|E| implied by a config's architecture and k, without building."""
    k = cfg.model.k if k is None else k
    return sum(keep_count(n, k) for n in layer_sizes(cfg.arch_spec(), input_shape))


def solve_k(cfg: TrainConfig, input_shape, target: int, iters: int = 80) -> float | None:
    """Smallest k in (0, 1] with exactly ``target`` edges, or None if no k hits it."""
    lo, hi = 0.0, 1.0
    if edges_for(cfg, input_shape, 1.0) < target:
        return None
    for _ in range(iters):
        mid = (lo + hi) / 2
        if mid == lo or mid == hi:
            break
        if edges_for(cfg, input_shape, mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi if edges_for(cfg, input_shape, hi) == target else None


def grid(base: TrainConfig, axis: str, values: list, input_shape=None, target_edges: int | None = None) -> tuple[list[SweepPoint], list[SweepPoint]]:
    """Expand an axis into grid points; returns (feasible, skipped)."""
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    if not values:
        raise ConfigError("sweep needs at least one axis value")
    points, skipped = [], []
    if axis != "fixed_params":
        for v in values:
            points.append(SweepPoint(axis, str(v), {_AXIS_KEYS[axis]: v}))
        return points, skipped
    if input_shape is None:
        raise ConfigError("fixed_params sweep needs the input shape")
    target = target_edges if target_edges is not None else edges_for(base, input_shape)
    for v in values:
        width = Fraction(str(v))
        try:
            cfg = base.replace(**{"model.width_multiplier": width})
        except ConfigError as exc:
            skipped.append(SweepPoint(axis, str(v), {}, f"invalid multiplier: {exc}"))
            continue
        k = solve_k(cfg, input_shape, target)
        if k is None:
            skipped.append(SweepPoint(axis, str(v), {}, f"no k gives exactly {target} edges"))
            continue
        points.append(SweepPoint(axis, str(v), {"model.width_multiplier": width, "model.k": repr(k)}, f"k={k!r}"))
    return points, skipped


def _run(args) -> tuple[float, float, int]:
    cfg, datasets = args
    from edgepop.train import train

    result = train(cfg, datasets=datasets)
    return float(result.last["test_acc"]), float(result.last["test_loss"]), subnet_size(result.model)


def _map(jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [_run(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run, jobs))


def sweep(
    base: TrainConfig,
    axis: str,
    values: list,
    seeds: list[int] | None = None,
    workers: int = 1,
    dense_baseline: bool | None = None,
    datasets=None,
    out: str | Path | None = None,
) -> SweepTable:
    """Train every (point, seed) pair and aggregate per point.

    The width axis also trains a dense baseline at every point unless
    ``dense_baseline`` is False. Results are ordered by grid index, so the
    table does not depend on ``workers``.
    """
    from edgepop.train import load_datasets

    datasets = datasets if datasets is not None else load_datasets(base)
    seeds = list(seeds) if seeds else [base.run.seed]
    points, skipped = grid(base, axis, values, datasets[0].input_shape)
    for p in skipped:
        log.warning("skipping %s=%s: %s", axis, p.value, p.note)
    dense = axis == "width" if dense_baseline is None else dense_baseline
    jobs, index = [], []
    for i, p in enumerate(points):
        for s in seeds:
            cfg = base.replace(**p.overrides, **({"run.seed": s} if axis != "seed" else {}))
            jobs.append((cfg, datasets))
            index.append((i, "sub"))
            if dense:
                jobs.append((cfg.replace(**{"run.algorithm": "dense_sgd", "model.k": 1.0}), datasets))
                index.append((i, "dense"))
    results = _map(jobs, workers)
    rows = [SweepRow(p.value, p.overrides, [], [], 0) for p in points]
    for (i, kind), (acc, loss, edges) in zip(index, results):
        if kind == "dense":
            rows[i].dense_accs.append(acc)
        else:
            rows[i].accs.append(acc)
            rows[i].losses.append(loss)
            rows[i].edges = edges
    table = SweepTable(axis, rows, skipped)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / f"sweep_{axis}.csv").write_text(table.to_csv())
    return table


def parse_values(axis: str, text: str) -> list:
    """Comma-separated axis values; k accepts percentages like 50 or 50%."""
    items = [t.strip() for t in text.split(",") if t.strip()]
    if axis == "k":
        out = []
        for t in items:
            v = float(t.rstrip("%"))
            out.append(v / 100 if t.endswith("%") or v > 1 else v)
        return out
    if axis == "seed":
        return [int(t) for t in items]
    if axis in ("width", "fixed_params"):
        return [Fraction(t) for t in items]
    return items

