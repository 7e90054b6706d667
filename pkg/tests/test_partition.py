import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corpus import label_accuracy, random_connected_graph, sbm_graph
from conftest import graph_from_pairs
from msbdens.partition import PartitionError, bisect, brute_force_min_cut, cut_weight, max_side


def two_cliques():
    pairs = [(a, b) for a in range(5) for b in range(a + 1, 5)]
    pairs += [(a + 5, b + 5) for a, b in pairs]
    pairs.append((4, 5))
    return graph_from_pairs(10, pairs)


def test_two_cliques():
    g = two_cliques()
    for seed in range(5):
        b = bisect(g, 0.05, seed)
        assert b.cut_weight == 1.0
        np.testing.assert_array_equal(b.labels, [0] * 5 + [1] * 5)
    bf = brute_force_min_cut(g, 0.05)
    assert bf.cut_weight == 1.0
    np.testing.assert_array_equal(bf.labels, [0] * 5 + [1] * 5)


def test_path_graph_strict_balance():
    g = graph_from_pairs(4, [(0, 1), (1, 2), (2, 3)])
    b = bisect(g, 0.0, 0)
    np.testing.assert_array_equal(b.labels, [0, 0, 1, 1])
    assert b.cut_weight == 1.0
    assert b.balance == 1.0


def test_single_edge():
    g = graph_from_pairs(2, [(0, 1, 0.3)])
    for b in (bisect(g, 0.05), brute_force_min_cut(g, 0.05)):
        np.testing.assert_array_equal(b.labels, [0, 1])
        assert b.cut_weight == 0.3


def test_four_cycle():
    g = graph_from_pairs(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    assert brute_force_min_cut(g, 0.0).cut_weight == 2.0
    assert bisect(g, 0.0).cut_weight == 2.0


def test_brute_force_tie_break_lexicographic():
    g = graph_from_pairs(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    # {0,1}/{2,3} and {0,3}/{1,2} both cut 2; 0011 < 0110
    np.testing.assert_array_equal(brute_force_min_cut(g, 0.0).labels, [0, 0, 1, 1])


def test_max_side():
    assert max_side(10, 0.05) == 5
    assert max_side(11, 0.0) == 6
    assert max_side(100, 0.05) == 52
    assert max_side(100, 0.5) == 75


@pytest.mark.parametrize("seed", range(30))
def test_never_beats_brute_force_on_12_vertices(seed):
    g = random_connected_graph(1000 + seed, 12, 12)
    b = bisect(g, 0.05, seed)
    bf = brute_force_min_cut(g, 0.05)
    assert b.cut_weight >= bf.cut_weight - 1e-12
    assert b.cut_weight == cut_weight(g, b.labels)
    n1 = int(b.labels.sum())
    assert 1 <= n1 <= 11 and max(n1, 12 - n1) <= max_side(12, 0.05)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 16), st.sampled_from([0.0, 0.05, 0.2]))
def test_bisect_contract(seed, n, eps):
    g = random_connected_graph(seed, n, n)
    b = bisect(g, eps, seed)
    assert b.labels[0] == 0
    assert b.cut_weight == cut_weight(g, b.labels)
    n1 = int(b.labels.sum())
    assert 0 < n1 < n
    assert max(n1, n - n1) <= max_side(n, eps)
    assert b.balance <= 1 + eps or max(n1, n - n1) == -(-n // 2)
    if n <= 14:
        assert b.cut_weight >= brute_force_min_cut(g, eps).cut_weight - 1e-12


def test_deterministic():
    g, _ = sbm_graph(5)
    a, b = bisect(g, 0.05, 11), bisect(g, 0.05, 11)
    assert np.array_equal(a.labels, b.labels) and a.cut_weight == b.cut_weight


@pytest.mark.parametrize("seed", range(5))
def test_sbm_recovery(seed):
    g, truth = sbm_graph(seed)
    b = bisect(g, 0.05, seed)
    assert label_accuracy(b.labels, truth) >= 0.95


def test_large_graph_exercises_coarsening():
    g, truth = sbm_graph(42, n=1000, p_in=0.04, p_out=0.002)
    b = bisect(g, 0.05, 0)
    assert label_accuracy(b.labels, truth) >= 0.95
    assert max(b.labels.sum(), 1000 - b.labels.sum()) <= max_side(1000, 0.05)


def test_errors():
    with pytest.raises(PartitionError, match="disconnected"):
        bisect(graph_from_pairs(4, [(0, 1), (2, 3)]))
    with pytest.raises(PartitionError):
        bisect(graph_from_pairs(1, []))
    with pytest.raises(PartitionError):
        bisect(graph_from_pairs(2, [(0, 1)]), epsilon=0.7)
    with pytest.raises(PartitionError):
        brute_force_min_cut(graph_from_pairs(21, [(i, i + 1) for i in range(20)]), 0.05)
