import numpy as np

from edgepop.rng import RngStream, rng_fork


def test_same_path_same_sequence():
    a = rng_fork(RngStream(1), "a").normal(50)
    b = rng_fork(RngStream(1), "a").normal(50)
    np.testing.assert_array_equal(a, b)


def test_sibling_and_seed_differ():
    base = RngStream(1)
    assert not np.array_equal(base.fork("a").normal(50), base.fork("b").normal(50))
    assert not np.array_equal(RngStream(1).fork("a").normal(50), RngStream(2).fork("a").normal(50))


def test_fork_is_independent_of_parent_consumption():
    p = RngStream(3)
    first = p.fork("layer").uniform(10)
    p.normal(1000)
    np.testing.assert_array_equal(p.fork("layer").uniform(10), first)


def test_nested_path_equals_tuple_path():
    np.testing.assert_array_equal(RngStream(5).fork("x").fork("y").random(8), RngStream(5, ("x", "y")).random(8))


def test_normal_mean_within_three_standard_errors():
    n = 10**5
    draws = RngStream(0, ("stats",)).normal(n)
    assert abs(draws.mean()) < 3 / np.sqrt(n)


def test_sibling_streams_uncorrelated():
    a = RngStream(0).fork("a").normal(10**5)
    b = RngStream(0).fork("b").normal(10**5)
    assert abs(np.corrcoef(a, b)[0, 1]) < 3 / np.sqrt(10**5)
