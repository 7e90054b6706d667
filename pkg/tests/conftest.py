import numpy as np
import pytest

from msbdens.kgraph import SparseGraph
from msbdens.ptree import PartitionTree


def graph_from_pairs(n, pairs, weight=1.0):
    """Undirected graph from ``(u, v)`` or ``(u, v, w)`` tuples."""
    u, v, w = [], [], []
    for e in pairs:
        u.append(e[0])
        v.append(e[1])
        w.append(e[2] if len(e) > 2 else weight)
    return SparseGraph.from_edges(n, np.array(u, dtype=np.int64), np.array(v, dtype=np.int64),
                                  np.array(w, dtype=np.float64))


def full_binary_tree(depth, p=1):
    parents = [-1]
    frontier = [0]
    for _ in range(depth):
        nxt = []
        for node in frontier:
            for _ in range(2):
                parents.append(node)
                nxt.append(len(parents) - 1)
        frontier = nxt
    return PartitionTree.from_parents(parents, p)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_clusters():
    r = np.random.default_rng(3)
    a = r.normal(-4.0, 1.0, size=(50, 5))
    b = r.normal(4.0, 1.0, size=(50, 5))
    return np.vstack([a, b]), np.repeat([0, 1], 50)
