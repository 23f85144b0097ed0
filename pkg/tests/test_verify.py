import math
from fractions import Fraction

import numpy as np
import pytest

from edgepop import verify
from edgepop.errors import ParameterError
from edgepop.init import InitSpec
from edgepop.layers import ArchSpec, build_model
from edgepop.popup import get_subnet
from edgepop.verify import (
    BudgetExceeded,
    GradientMismatch,
    brute_force_subnets,
    construct_swap_instance,
    dense_fd_errors,
    forward_variance,
    gradient_oracle,
    harvest_trajectory,
    is_single_swap,
    layer_masks,
    random_mask_losses,
    receiving_node,
    rel_err,
    run_suite,
    score_gradient_errors,
    subnetwork_count,
    topk_oracle,
)


def tiny_mlp(rng, widths=(2,), dim=4, classes=2, k=0.5, algorithm="edge_popup"):
    spec = ArchSpec("mlp", Fraction(1), classes=classes, fc_widths=widths)
    return build_model(spec, k, InitSpec("kaiming_normal"), rng.fork("model"), algorithm, (dim,), dtype=np.float64)


def mlp_batch(rng, n=32, dim=20, classes=5):
    return rng.fork("x").normal((n, dim)), rng.fork("y").integers(0, classes, n)


def test_rel_err_rules():
    assert rel_err(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert rel_err(np.array([1.0]), np.array([1.5])) == pytest.approx(1 / 3)
    assert math.isnan(rel_err(np.zeros(3), np.zeros(3)))


@pytest.mark.parametrize("n,k,expected", [(4, 0.5, 6), (10, 0.5, 252), (0, 0.5, 1), (10, 0.3, 120)])
def test_subnetwork_count(n, k, expected):
    assert subnetwork_count(n, k) == expected


def test_subnetwork_count_peaks_near_half_and_is_exact():
    assert subnetwork_count(10, 0.5) > subnetwork_count(10, 0.3)
    counts = [subnetwork_count(100, i / 10) for i in range(1, 10)]
    assert counts.index(max(counts)) == 4
    assert subnetwork_count(1000, 0.5) == math.comb(1000, 500)
    with pytest.raises(ParameterError):
        subnetwork_count(-1, 0.5)


def test_layer_masks_enumerate_all_k_subsets():
    masks = layer_masks((2, 2), 0.5)
    assert masks.shape == (6, 2, 2)
    assert (masks.reshape(6, -1).sum(axis=1) == 2).all()
    assert len({m.tobytes() for m in masks}) == 6


def test_topk_oracle_agrees_with_engine_on_ties(rng):
    s = np.array([0.5, -0.5, 0.25, 0.5, -0.25, 0.0])
    np.testing.assert_array_equal(topk_oracle(s, 0.5), get_subnet(s, 0.5))
    for t in range(50):
        r = rng.fork(str(t))
        s = r.integers(-3, 4, 17) * 0.5
        np.testing.assert_array_equal(topk_oracle(s, 0.3), get_subnet(s, 0.3))


def test_gradient_oracle_accepts_correct_gradients(rng):
    model = build_model(ArchSpec("mlp", Fraction(1, 8), classes=5), 0.5, InitSpec("kaiming_normal"), rng, input_shape=(20,), dtype=np.float64)
    assert gradient_oracle(model, mlp_batch(rng)) < 1e-6


def test_gradient_oracle_names_the_failing_tensor(rng, monkeypatch):
    model = build_model(ArchSpec("mlp", Fraction(1, 8), classes=5), 0.5, InitSpec("kaiming_normal"), rng, input_shape=(20,), dtype=np.float64)
    real = verify.closed_form_key_grad
    monkeypatch.setattr(verify, "closed_form_key_grad", lambda layer, z, up: real(layer, z, up) * 1.01)
    with pytest.raises(GradientMismatch, match="score gradient of"):
        gradient_oracle(model, mlp_batch(rng))


def test_clamp_mode_gradient_routes_agree(rng):
    spec = ArchSpec("mlp", Fraction(1, 8), classes=5)
    model = build_model(spec, 0.5, InitSpec("kaiming_normal"), rng, input_shape=(20,), abs_mode="clamp", dtype=np.float64)
    report = score_gradient_errors(model, *mlp_batch(rng))
    assert report.max_score_err < 1e-6


def test_dense_fd_check_needs_dense_model(rng):
    model = tiny_mlp(rng, dim=20, classes=5)
    with pytest.raises(ParameterError):
        dense_fd_errors(model, *mlp_batch(rng), rng)
    dense = tiny_mlp(rng, dim=20, classes=5, k=1.0, algorithm="dense_sgd")
    errs = dense_fd_errors(dense, *mlp_batch(rng), rng)
    assert max(errs.values()) < 1e-5


def test_gradient_suite_meets_thresholds():
    result = run_suite("gradients")
    assert result.passed, result.lines
    assert result.summary["max_score_err"] < 1e-6 and result.summary["max_dense_err"] < 1e-5


@pytest.mark.parametrize("pairs,layer_index", [(1, 0), (1, 1), (3, 0)])
def test_constructed_swaps_decrease_loss(rng, pairs, layer_index):
    spec = ArchSpec("mlp", Fraction(1, 4), classes=5, fc_widths=(256,))
    model = build_model(spec, 0.5, InitSpec("kaiming_normal"), rng.fork("m"), input_shape=(32,), dtype=np.float64)
    x, y = mlp_batch(rng, 64, 32, 5)
    c = construct_swap_instance(model, x, y, rng.fork("s"), pairs=pairs, layer_index=layer_index)
    assert c.passed and c.loss_after < c.loss_before
    assert len(c.event.entered) == len(c.event.exited) == pairs
    layer = model.weight_layers[layer_index]
    assert is_single_swap(layer, c.event) == (pairs == 1)


def test_receiving_node_for_linear_and_conv(rng):
    lin = tiny_mlp(rng, widths=(3,)).weight_layers[0]  # 3 x 4
    assert [receiving_node(lin, i) for i in (0, 3, 4, 11)] == [0, 0, 1, 2]
    conv = build_model(ArchSpec("conv2", Fraction(1, 16)), 0.5, InitSpec("kaiming_normal"), rng, input_shape=(3, 8, 8)).weight_layers[0]
    per = int(np.prod(conv.weight.shape[1:]))
    assert receiving_node(conv, per - 1) == 0 and receiving_node(conv, per) == 1


def test_harvest_reports_are_consistent():
    model, data = verify.harvest_setup(0, width=64, n_batches=2)
    single, general = harvest_trajectory(model, data, lr=1e-2, steps=60)
    for r in (single, general):
        assert r.decreased + r.violated == len(r.events)
        for ev in r.events:
            assert len(ev.entered) == len(ev.exited) > 0
    assert {id(e) for e in single.events} <= {id(e) for e in general.events}
    assert general.events, "lr 1e-2 over 60 steps should change some mask"


def test_harvest_with_large_lr_reports_violations_without_raising():
    model, data = verify.harvest_setup(0, width=64, n_batches=2)
    _, general = harvest_trajectory(model, data, lr=1.0, steps=30)
    assert general.decreased + general.violated == len(general.events)


def test_harvest_without_events_is_inconclusive():
    model, data = verify.harvest_setup(0, width=64, n_batches=1)
    single, general = harvest_trajectory(model, data, lr=1e-12, steps=3)
    assert single.inconclusive and general.inconclusive
    assert math.isnan(general.fraction_ok)


def test_multi_layer_steps_are_excluded():
    model, data = verify.harvest_setup(0, width=64, n_batches=2)
    single, general = harvest_trajectory(model, data, lr=1.0, steps=30)
    assert general.excluded > 0
    assert single.excluded >= general.excluded


def test_brute_force_counts_and_optimum(rng):
    model = tiny_mlp(rng, widths=(2,), dim=2, classes=2)
    x = rng.fork("x").normal((20, 2))
    y = rng.fork("y").integers(0, 2, 20)
    result = brute_force_subnets(model, (x, y))
    assert result.enumerated_count == 36 == len(result.losses)
    assert result.best_loss == result.losses.min()
    for layer, m in zip(model.weight_layers, result.best_masks):
        layer.mask_override = m
    assert verify.batch_loss(model, x, y) == pytest.approx(result.best_loss, rel=1e-12)
    for layer in model.weight_layers:
        layer.mask_override = None
    s = result.summary
    assert s["min"] <= s["median"] <= s["max"]


def test_brute_force_single_layer_and_budget(rng):
    model = build_model(ArchSpec("mlp", Fraction(1), classes=2, fc_widths=()), 0.5, InitSpec("kaiming_normal"), rng, input_shape=(2,), dtype=np.float64)
    x, y = rng.normal((8, 2)), np.arange(8) % 2
    assert brute_force_subnets(model, (x, y)).enumerated_count == 6
    big = tiny_mlp(rng, widths=(8,), dim=8)
    with pytest.raises(BudgetExceeded, match=str(subnetwork_count(64, 0.5) * subnetwork_count(16, 0.5))):
        brute_force_subnets(big, (rng.normal((4, 8)), np.zeros(4, dtype=int)), budget=1000)


def test_random_masks_have_spread_and_restore_model(rng):
    model = tiny_mlp(rng, widths=(6,), dim=4, classes=3)
    x, y = rng.normal((30, 4)), np.arange(30) % 3
    before = verify.batch_loss(model, x, y)
    losses = random_mask_losses(model, x, y, 50, rng.fork("r"))
    assert losses.max() > losses.min()
    assert verify.batch_loss(model, x, y) == before


def test_forward_variance_scaling():
    dense = forward_variance(1.0, trials=20)
    assert forward_variance(0.5, scaled=True, trials=20) / dense == pytest.approx(1.0, abs=0.1)
    assert forward_variance(0.5, scaled=False, trials=20) / dense == pytest.approx(0.5, abs=0.07)


def test_fast_suites_pass():
    for name in ("topk", "bruteforce", "variance"):
        result = run_suite(name)
        assert result.passed, (name, result.lines)


def test_unknown_suite():
    with pytest.raises(ParameterError):
        run_suite("nope")


def test_micro_instance_enumerates_expected_count():
    model, data = verify.micro_instance(0)
    assert math.prod(subnetwork_count(l.numel, 0.5) for l in model.weight_layers) == 924 * 126
    assert len(data) == 120
