"""Random-stream determinism and independence checks."""

import numpy as np

from rep4ex.numcore import RngStream


def test_equal_keys_give_identical_sequences():
    a = RngStream(42, 7).standard_normal(100)
    b = RngStream(42, 7).standard_normal(100)
    assert np.array_equal(a, b)


def test_different_seeds_differ():
    a = RngStream(0).standard_normal(50)
    b = RngStream(1).standard_normal(50)
    assert not np.array_equal(a, b)


def test_derive_is_deterministic_and_key_sensitive():
    root = RngStream(3)
    assert root.derive("x", 1).stream_id == root.derive("x", 1).stream_id
    assert root.derive("x", 1).stream_id != root.derive("x", 2).stream_id
    assert root.derive("x", 1).stream_id != root.derive("y", 1).stream_id
    # Key order matters: derive("a","b") is a different child than ("b","a").
    assert root.derive("a", "b").stream_id != root.derive("b", "a").stream_id
    assert root.derive("a").derive("b").stream_id == root.derive("a", "b").stream_id


def test_derived_children_ignore_parent_consumption():
    fresh = RngStream(9)
    child_before = fresh.derive("child").standard_normal(10)
    used = RngStream(9)
    used.standard_normal(1000)
    child_after = used.derive("child").standard_normal(10)
    assert np.array_equal(child_before, child_after)


def test_string_and_int_keys_are_distinct_namespaces():
    root = RngStream(0)
    assert root.derive("1").stream_id != root.derive(1).stream_id


def test_uniform_bounds_and_shape():
    draws = RngStream(5).uniform(-2.0, 3.0, (40, 3))
    assert draws.shape == (40, 3)
    assert np.all(draws >= -2.0) and np.all(draws < 3.0)


def test_standard_normal_moments():
    draws = RngStream(11).standard_normal(200_000)
    assert abs(draws.mean()) < 0.01
    assert abs(draws.std() - 1.0) < 0.01


def test_permutation_and_choice():
    stream = RngStream(8)
    perm = stream.permutation(100)
    assert sorted(perm.tolist()) == list(range(100))
    picks = stream.choice(50, size=20)
    assert len(set(picks.tolist())) == 20
    assert np.all((0 <= picks) & (picks < 50))


def test_sibling_streams_are_uncorrelated():
    root = RngStream(123)
    a = root.derive("left").standard_normal(50_000)
    b = root.derive("right").standard_normal(50_000)
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) < 0.02


def test_generator_property_is_cached():
    stream = RngStream(1)
    assert stream.generator is stream.generator
