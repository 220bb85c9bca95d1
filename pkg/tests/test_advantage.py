import numpy as np
import pytest
from hypothesis import given, strategies as st

from scaffold_rl.advantage import (
    GroupRewards,
    RewardKind,
    batch_advantages,
    broadcast_advantage,
    center_rewards,
    group_advantages,
    normalize_rewards,
)
from scaffold_rl.errors import EmptySequence, GroupTooSmall


def naive_advantages(rewards, eps):
    n = len(rewards)
    mean = sum(rewards) / n
    var = sum((r - mean) ** 2 for r in rewards) / n
    return [(r - mean) / (var ** 0.5 + eps) for r in rewards]


def test_center_example():
    np.testing.assert_allclose(center_rewards([1.0, 0.1, 0.1, 0.0]), [0.7, -0.2, -0.2, -0.3],
                               atol=1e-15)


def test_normalize_example():
    out = group_advantages([1.0, 0.0], eps_norm=0.0)
    np.testing.assert_allclose(out, [1.0, -1.0])


def test_equal_rewards_give_exact_zero():
    for v in (0.0, 0.1, 1.0, 0.37):
        a = group_advantages([v] * 8)
        assert np.all(a == 0.0)


def test_group_too_small():
    with pytest.raises(GroupTooSmall):
        center_rewards([1.0])
    with pytest.raises(GroupTooSmall):
        GroupRewards((0.5,), RewardKind.LAN)
    with pytest.raises(GroupTooSmall):
        batch_advantages(np.zeros((3, 1)))


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=12))
def test_matches_naive_loop(rewards):
    np.testing.assert_allclose(group_advantages(rewards), naive_advantages(rewards, 1e-6),
                               rtol=1e-9, atol=1e-9)


def test_batch_rows_match_group_function(rng):
    R = rng.random((5, 8))
    A = batch_advantages(R)
    for row, r in zip(A, R):
        np.testing.assert_allclose(row, group_advantages(r), rtol=0, atol=1e-15)


def test_normalized_group_has_zero_mean():
    a = group_advantages([1.0, 0.1, 0.1, 0.0, 1.0])
    assert abs(a.mean()) < 1e-12


def test_broadcast():
    rows = broadcast_advantage([0.5, -1.0], [3, 1])
    assert [list(r) for r in rows] == [[0.5, 0.5, 0.5], [-1.0]]
    with pytest.raises(EmptySequence):
        broadcast_advantage([0.5], [0])
    with pytest.raises(ValueError):
        broadcast_advantage([0.5], [1, 2])


def test_normalize_accepts_centered_input():
    c = center_rewards([2.0, 4.0])
    np.testing.assert_allclose(normalize_rewards(c, 0.0), [-1.0, 1.0])
