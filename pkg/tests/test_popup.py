import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgepop.errors import DimensionError, ParameterError
from edgepop.optim import SGD
from edgepop.popup import (
    PopupScores,
    detect_swaps,
    drop_count,
    get_subnet,
    keep_count,
    score_step,
    ste_score_grad,
    subnet_weight,
)
from edgepop.tensor import Tensor, backward, tsum
from edgepop.verify import topk_oracle


@pytest.mark.parametrize(
    "scores,k,mask",
    [
        ([0.1, 0.5, 0.3, 0.2], 0.5, [0, 1, 1, 0]),
        ([0.1, 0.5, 0.3, 0.2], 1.0, [1, 1, 1, 1]),
        ([-0.9, 0.1], 0.5, [1, 0]),
        ([0.4, 0.4, 0.4], 0.34, [0, 1, 1]),
    ],
)
def test_small_masks(scores, k, mask):
    np.testing.assert_array_equal(get_subnet(np.array(scores), k), mask)


def test_counts():
    assert drop_count(10, 0.33) == 6 and keep_count(10, 0.33) == 4
    assert drop_count(10, 0.9) == 1
    assert keep_count(100, 0.3) == 30


@pytest.mark.parametrize("k", [0.0, -0.1, 1.01])
def test_bad_k(k):
    with pytest.raises(ParameterError):
        get_subnet(np.ones(4), k)


def test_empty_scores_rejected():
    with pytest.raises(DimensionError):
        get_subnet(np.zeros(0), 0.5)


scores_st = st.lists(
    st.one_of(st.sampled_from([0.0, 0.25, -0.25, 0.5, -1.0]), st.floats(-10, 10, allow_nan=False)),
    min_size=1,
    max_size=64,
)


@settings(max_examples=300, deadline=None)
@given(scores=scores_st, k=st.sampled_from([round(0.1 * i, 1) for i in range(1, 11)]))
def test_matches_stable_sort_oracle(scores, k):
    mask = get_subnet(np.array(scores), k)
    np.testing.assert_array_equal(mask, topk_oracle(scores, k))
    assert mask.sum() == len(scores) - drop_count(len(scores), k)


@settings(max_examples=50, deadline=None)
@given(scores=st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=40), c=st.floats(1e-3, 1e3))
def test_positive_rescaling_keeps_mask(scores, c):
    s = np.array(scores)
    # rescaling can merge distinct magnitudes through rounding; only exact products count
    if len(np.unique(np.abs(s) * c)) != len(np.unique(np.abs(s))):
        return
    np.testing.assert_array_equal(get_subnet(s, 0.5), get_subnet(s * c, 0.5))


def test_mask_shape_follows_scores():
    s = np.arange(24.0).reshape(2, 3, 4)
    m = get_subnet(s, 0.5)
    assert m.shape == s.shape and m.sum() == 12
    assert m.ravel()[:12].sum() == 0


def test_ste_scalar_examples():
    assert ste_score_grad(2.0, 0.5, 3.0) == 3.0
    assert ste_score_grad(2.0, 0.5, 0.0) == 0.0


def test_subnet_weight_forward_and_straight_through_grad():
    w = Tensor(np.array([[0.5, -1.0]]))
    s = Tensor(np.array([[0.9, -0.1]]), requires_grad=True)
    eff = subnet_weight(w, s, 0.5)
    np.testing.assert_array_equal(eff.data, [[0.5, 0.0]])
    x = np.array([[2.0, 7.0]])
    out = tsum(Tensor(x) @ eff.T)
    g = backward(out)[s]
    # masked-out edge still gets dL/dI * w * Z, with the sign of its score
    np.testing.assert_allclose(g, [[1 * 0.5 * 2.0, -(1 * -1.0 * 7.0)]])


def test_clamp_mode_omits_sign():
    w = Tensor(np.array([[1.0, 1.0]]))
    s = Tensor(np.array([[0.9, -0.1]]), requires_grad=True)
    g = backward(tsum(subnet_weight(w, s, 1.0, "clamp")))[s]
    np.testing.assert_array_equal(g, [[1.0, 1.0]])


def test_subnet_weight_shape_checks():
    with pytest.raises(DimensionError):
        subnet_weight(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 3))), 0.5)
    with pytest.raises(ParameterError):
        subnet_weight(Tensor(np.ones(2)), Tensor(np.ones(2)), 0.5, "sqrt")


def test_score_step_examples():
    p = PopupScores(np.array([1.0]), 1.0)
    score_step(p, np.array([3.0]), SGD(lr=0.1))
    assert p.scores[0] == pytest.approx(0.7)
    q = PopupScores(np.array([0.1, 0.15]), 0.5)
    score_step(q, np.array([3.0, 0.0]), SGD(lr=0.1))
    assert q.scores[0] == pytest.approx(-0.2)
    np.testing.assert_array_equal(q.mask(), [1, 0])


def test_score_step_clamp_and_shape():
    p = PopupScores(np.array([0.1]), 1.0, "clamp")
    score_step(p, np.array([3.0]), SGD(lr=0.1))
    assert p.scores[0] == pytest.approx(0.2)
    with pytest.raises(DimensionError):
        score_step(p, np.zeros(2), SGD(lr=0.1))


def test_score_step_momentum_recursion():
    p = PopupScores(np.array([1.0]), 1.0)
    opt = SGD(lr=0.1, momentum=0.9)
    score_step(p, np.array([1.0]), opt)
    score_step(p, np.array([2.0]), opt)
    v1 = 1.0
    v2 = 0.9 * v1 + 2.0
    assert p.scores[0] == pytest.approx(1.0 - 0.1 * v1 - 0.1 * v2)


def test_detect_swaps():
    assert detect_swaps(np.array([1, 0]), np.array([1, 0])) is None
    ev = detect_swaps(np.array([1, 0]), np.array([0, 1]), "fc1")
    assert (ev.entered, ev.exited, ev.layer_id, ev.size) == ([1], [0], "fc1", 1)
    with pytest.raises(DimensionError):
        detect_swaps(np.ones(2), np.ones(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_swap_conservation(seed):
    r = np.random.default_rng(seed)
    a = get_subnet(r.normal(size=30), 0.4)
    b = get_subnet(r.normal(size=30), 0.4)
    ev = detect_swaps(a, b)
    if ev is not None:
        assert len(ev.entered) == len(ev.exited)
