from __future__ import annotations

import numpy as np
import pytest

from errors import NonFiniteError, ShapeError
from tensor import (
    Rng,
    Tensor,
    add,
    flat_index,
    map_tensor,
    randn,
    reduce_mean,
    stack,
    take_rows,
    zeros,
)


def test_tensor_copies_its_input():
    source = np.ones(3)
    t = Tensor(source)
    source[0] = 5.0
    assert t.at(0) == 1.0


def test_tensor_is_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 3.0


def test_with_value_leaves_original_untouched():
    t = Tensor([[1.0, 2.0], [3.0, 4.0]])
    changed = t.with_value((1, 0), 9.0)
    assert t.at(1, 0) == 3.0
    assert changed.at(1, 0) == 9.0


@pytest.mark.parametrize("shape", [(0,), (2, 0), (1, 0, 3)])
def test_empty_extent_is_rejected(shape):
    with pytest.raises(ShapeError, match="empty extent"):
        Tensor(np.zeros(shape))


def test_rank_above_three_is_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 1, 1, 1)))


def test_shape_argument_must_be_filled():
    assert Tensor(range(6), shape=(2, 3)).shape == (2, 3)
    with pytest.raises(ShapeError):
        Tensor(range(5), shape=(2, 3))


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_values_are_rejected(bad):
    with pytest.raises(NonFiniteError):
        Tensor([1.0, bad])


def test_flat_index_is_row_major():
    assert flat_index((2, 3, 4), (0, 0, 0)) == 0
    assert flat_index((2, 3, 4), (1, 2, 3)) == 23
    assert flat_index((2, 3, 4), (1, 0, 2)) == 14
    with pytest.raises(ShapeError):
        flat_index((2, 3), (2, 0))


def test_rng_same_seed_same_stream():
    np.testing.assert_array_equal(Rng(5).uniform(16), Rng(5).uniform(16))
    np.testing.assert_array_equal(Rng(5, 2).normal(16), Rng(5, 2).normal(16))


def test_rng_first_ten_thousand_draws_match():
    np.testing.assert_array_equal(Rng(123).uniform(10_000), Rng(123).uniform(10_000))
    np.testing.assert_array_equal(Rng(123, 4).normal(10_000), Rng(123, 4).normal(10_000))


def test_rng_streams_are_independent():
    assert not np.array_equal(Rng(5, 0).uniform(16), Rng(5, 1).uniform(16))


def test_rng_uniform_range_and_moments():
    u = Rng(11).uniform(20000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01


def test_rng_normal_moments():
    z = Rng(12).normal(20000, mean=2.0, std=3.0)
    assert abs(z.mean() - 2.0) < 0.1
    assert abs(z.std() - 3.0) < 0.1


def test_rng_integers_inclusive():
    draws = Rng(13).integers(0, 3, 2000)
    assert set(draws.tolist()) == {0, 1, 2, 3}
    assert set(Rng(13).integers(4, 4, 10).tolist()) == {4}
    with pytest.raises(ValueError):
        Rng(13).integers(3, 2)


def test_randn_rejects_negative_std():
    with pytest.raises(ValueError):
        randn((2, 2), Rng(0), std=-1.0)


def test_randn_is_deterministic():
    a = randn((2, 3), Rng(4))
    b = randn((2, 3), Rng(4))
    np.testing.assert_array_equal(a.data, b.data)


def test_randn_moments():
    draws = randn((100_000,), Rng(21)).data
    assert abs(draws.mean()) <= 0.02
    assert abs(draws.std() - 1.0) <= 0.02


def test_randn_with_zero_std_is_constant():
    t = randn((3, 4), Rng(22), mean=2.5, std=0.0)
    np.testing.assert_array_equal(t.data, np.full((3, 4), 2.5))


def test_map_identity_returns_equal_tensor():
    t = Tensor([[1.0, -2.0, 3.5], [0.0, 4.0, -6.25]])
    mapped = map_tensor(t, lambda a: a)
    np.testing.assert_array_equal(mapped.data, t.data)
    assert mapped.shape == t.shape
    with pytest.raises(ShapeError):
        map_tensor(t, np.ravel)


def test_helpers():
    t = Tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    assert reduce_mean(t) == 3.5
    np.testing.assert_array_equal(take_rows(t, [0, 2]).data, [[1.0, 2.0], [5.0, 6.0]])
    np.testing.assert_array_equal(add(t, zeros((3, 2))).data, t.data)
    assert stack([t, t]).shape == (2, 3, 2)
    with pytest.raises(ShapeError):
        stack([t, zeros((2, 2))])
    with pytest.raises(ShapeError):
        add(t, zeros((2, 3)))
