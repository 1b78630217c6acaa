import numpy as np
from hypothesis import given, strategies as st

from fragim import rng

seeds = st.integers(0, 2**64 - 1)


@given(seeds)
def test_uniform_is_open_unit_interval(seed):
    k = rng.root_key(np.uint64(seed))
    u = rng.uniform(k, rng.CLOCK, np.arange(64))
    assert np.all((u > 0) & (u < 1))


@given(seeds, st.integers(0, 1000))
def test_draws_are_pure_functions_of_key(seed, i):
    k = rng.child_key(rng.root_key(np.uint64(seed)), i)
    a = rng.exponential(k, rng.ATOM)
    b = rng.exponential(rng.child_key(rng.root_key(np.uint64(seed)), i), rng.ATOM)
    assert a == b


def test_streams_and_children_differ():
    k = rng.root_key(np.uint64(7))
    assert rng.uniform(k, rng.CLOCK) != rng.uniform(k, rng.ATOM)
    assert rng.child_key(k, 0) != rng.child_key(k, 1)


def test_vectorised_matches_scalar():
    keys = rng.root_key(np.arange(10, dtype=np.uint64))
    vec = rng.uniform(keys, rng.NOISE)
    assert all(rng.uniform(keys[i], rng.NOISE) == vec[i] for i in range(10))


def test_path_seed_is_xor():
    assert list(rng.path_seed(5, np.arange(4))) == [5, 4, 7, 6]


def test_uniform_moments():
    u = rng.uniform(rng.root_key(np.arange(200_000, dtype=np.uint64)), rng.CLOCK)
    assert abs(u.mean() - 0.5) < 4 * (1 / np.sqrt(12 * len(u)))
    e = rng.exponential(rng.root_key(np.arange(200_000, dtype=np.uint64)), rng.CLOCK)
    assert abs(e.mean() - 1.0) < 4 / np.sqrt(len(e))
