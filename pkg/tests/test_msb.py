import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import full_binary_tree
from msbdens.msb import (
    Hyperparams,
    ModelError,
    MsbState,
    NodeParams,
    log_node_density,
    path_weights,
    path_weights_from_sticks,
    sample_prior,
)
from msbdens.ptree import PartitionTree, ancestors


def test_hyperparam_defaults_and_validation():
    h = Hyperparams()
    assert (h.alpha, h.a, h.b, h.max_iters, h.burn_in) == (1.0, 3.0, 1.0, 20000, 1000)
    for bad in (dict(alpha=0), dict(a=-1), dict(b=0), dict(max_iters=10, burn_in=10)):
        with pytest.raises(ModelError):
            Hyperparams(**bad)


def test_path_weight_examples():
    np.testing.assert_array_equal(path_weights_from_sticks([0.5, 0.5, 1.0]), [0.5, 0.25, 0.25])
    np.testing.assert_array_equal(path_weights_from_sticks([1.0]), [1.0])
    np.testing.assert_array_equal(path_weights_from_sticks([1.0, 0.3, 1.0]), [1.0, 0.0, 0.0])
    with pytest.raises(ModelError):
        path_weights_from_sticks([1.2, 1.0])


def test_path_weights_on_tree():
    tree = full_binary_tree(2)
    st_ = MsbState(np.array([0.5, 0.5, 0.2, 1, 1, 1, 1.0]), np.zeros(7), np.ones(7), np.zeros(0, int))
    leaf = tree.leaves[0]
    path = ancestors(tree, leaf) + [leaf]
    np.testing.assert_array_equal(path_weights(tree, st_, path), [0.5, 0.25, 0.25])
    with pytest.raises(ModelError):
        path_weights(tree, st_, path[:-1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=0, max_size=12))
def test_weights_sum_to_one_and_nonnegative(v):
    w = path_weights_from_sticks(list(v) + [1.0])
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) <= 1e-12


def test_prior_sets_leaves_and_is_seeded():
    tree = full_binary_tree(3)
    s = sample_prior(tree, Hyperparams(), seed=4, n_obs=5)
    assert np.all(s.V[tree.is_leaf()] == 1.0)
    assert np.all(s.sigma > 0) and s.levels.shape == (5,)
    s.check(tree)
    s2 = sample_prior(tree, Hyperparams(), seed=4, n_obs=5)
    assert np.array_equal(s.V, s2.V) and np.array_equal(s.mu, s2.mu)


def test_prior_moments():
    # 2**17 - 1 nodes, 2**16 - 1 of them internal
    tree = PartitionTree.from_parents([-1] + [(i - 1) // 2 for i in range(1, 2**17 - 1)])
    s = sample_prior(tree, Hyperparams(alpha=1.0, a=3.0, b=1.0), seed=0)
    v = s.V[~tree.is_leaf()]
    assert abs(v.mean() - 0.5) < 0.005
    # 1e5-ish draws: IG(3,1) has infinite-ish tails but finite variance 0.25
    assert abs(s.sigma.mean() - 0.5) < 0.01
    assert abs(s.mu.var() - 1.0) < 0.02


def test_root_weight_prior_mean_shifts_with_alpha():
    tree = PartitionTree.from_parents([-1] + [(i - 1) // 2 for i in range(1, 2**15 - 1)])
    internal = ~tree.is_leaf()
    for alpha in (0.5, 1.0, 4.0):
        v = sample_prior(tree, Hyperparams(alpha=alpha), seed=1).V[internal]
        se = v.std() / math.sqrt(v.size)
        assert abs(v.mean() - 1 / (1 + alpha)) < 3 * se + 1e-12


def test_log_node_density_examples():
    assert log_node_density(NodeParams(0.5, 0.0, 1.0), 0.0) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert log_node_density(NodeParams(0.5, 0.0, 1.0), 0.0) == pytest.approx(-0.9189385332, abs=1e-10)
    assert log_node_density(NodeParams(1.0, 0.0, 4.0), 2.0) == pytest.approx(
        -0.5 * math.log(8 * math.pi) - 0.5, abs=1e-14)
    with pytest.raises(ModelError):
        log_node_density(NodeParams(1.0, 0.0, 0.0), 1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(1e-3, 1e3), st.floats(-50, 50))
def test_log_density_translation(y, mu, sigma, c):
    a = log_node_density(NodeParams(1.0, mu, sigma), y)
    b = log_node_density(NodeParams(1.0, mu + c, sigma), y + c)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


def test_state_check_rejects_bad_states():
    tree = full_binary_tree(1)
    good = MsbState(np.array([0.3, 1, 1.0]), np.zeros(3), np.ones(3), np.array([0, 1]))
    good.check(tree, lengths=np.array([2, 2]))
    bad = good.copy()
    bad.V[1] = 0.5
    with pytest.raises(ModelError, match="leaf"):
        bad.check(tree)
    bad = good.copy()
    bad.sigma[0] = 0
    with pytest.raises(ModelError):
        bad.check(tree)
    with pytest.raises(ModelError, match="path"):
        good.check(tree, lengths=np.array([2, 1]))
