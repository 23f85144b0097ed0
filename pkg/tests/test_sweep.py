from fractions import Fraction

import pytest

from edgepop.config import default_blobs_config
from edgepop.errors import ConfigError
from edgepop.sweep import edges_for, grid, parse_values, solve_k, sweep
from edgepop.train import load_datasets


def base(**kw):
    cfg = {
        "run.epochs": 2,
        "model.fc_widths": "32,32",
        "data.classes": 4,
        "data.dim": 8,
        "data.per_class": 30,
        "optim.batch_size": 32,
    }
    cfg.update(kw)
    return default_blobs_config(**cfg)


def test_grid_expands_plain_axes():
    points, skipped = grid(base(), "k", [0.3, 0.5])
    assert [p.overrides for p in points] == [{"model.k": 0.3}, {"model.k": 0.5}]
    assert skipped == []
    with pytest.raises(ConfigError):
        grid(base(), "depth", [1])
    with pytest.raises(ConfigError):
        grid(base(), "k", [])


def test_fixed_params_grid_has_equal_edges_or_skips():
    cfg = base(**{"model.k": 0.25})
    target = edges_for(cfg, (8,))
    points, skipped = grid(cfg, "fixed_params", [Fraction(1, 4), Fraction(1, 2), Fraction(1), Fraction(2)], (8,))
    assert points, "at least the base width is feasible"
    for p in points:
        assert edges_for(cfg.replace(**p.overrides), (8,)) == target
    assert all(p.note for p in skipped)
    assert len(points) + len(skipped) == 4
    assert Fraction(1, 4) in [Fraction(p.value) for p in skipped]


def test_solve_k_is_exact_or_none():
    cfg = base()
    target = edges_for(cfg, (8,), 0.4)
    k = solve_k(cfg, (8,), target)
    assert k is not None and edges_for(cfg, (8,), k) == target
    assert solve_k(cfg, (8,), 10**9) is None


def test_sweep_aggregates_and_writes_csv(tmp_path):
    cfg = base()
    table = sweep(cfg, "k", [0.3, 0.7], seeds=[0, 1], out=tmp_path)
    assert [len(r.accs) for r in table.rows] == [2, 2]
    text = (tmp_path / "sweep_k.csv").read_text()
    assert text == table.to_csv()
    lines = text.splitlines()
    assert lines[0].split(",")[:4] == ["k", "seeds", "edges", "test_acc_mean"]
    assert len(lines) == 3
    assert table.rows[0].edges < table.rows[1].edges


def test_width_sweep_adds_dense_baseline():
    table = sweep(base(), "width", [Fraction(1, 2), Fraction(1)], seeds=[0])
    assert all(len(r.dense_accs) == 1 for r in table.rows)
    assert "gap" in table.to_csv().splitlines()[0]
    r = table.rows[0]
    assert r.gap == pytest.approx(r.dense_accs[0] - r.acc_mean)


def test_sweep_result_does_not_depend_on_workers():
    cfg = base()
    data = load_datasets(cfg)
    one = sweep(cfg, "k", [0.3, 0.5, 0.7], seeds=[0, 1], workers=1, datasets=data)
    two = sweep(cfg, "k", [0.3, 0.5, 0.7], seeds=[0, 1], workers=2, datasets=data)
    assert one.to_csv() == two.to_csv()


def test_parse_values():
    assert parse_values("k", "30, 50%,0.7") == [0.3, 0.5, 0.7]
    assert parse_values("width", "1/2,1") == [Fraction(1, 2), Fraction(1)]
    assert parse_values("seed", "1,2") == [1, 2]
    assert parse_values("init", "signed_constant,kaiming_normal") == ["signed_constant", "kaiming_normal"]
