"""Multilevel balanced graph bisection.

Coarsen by heavy-edge matching, bisect the coarsest graph by greedy
region growing (two gain rules, several starts, plus one Fiedler-vector
split), then project back up with boundary Fiduccia-Mattheyses
refinement at every level.  Balance is measured on vertex counts: neither
side may hold more than ``max(ceil(n/2), floor((1+eps) n/2))`` vertices.

:func:`brute_force_min_cut` enumerates every balanced labelling and is
used as an oracle on small graphs.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .kgraph import SparseGraph

__all__ = ["PartitionError", "Bisection", "bisect", "brute_force_min_cut", "cut_weight"]

COARSEST_SIZE = 64
MIN_SHRINK = 0.9
MAX_PASSES = 10
MATCH_RATIO = 0.5
N_INITIAL_TRIALS = 4
SPECTRAL_MAX = 1000  # coarsest graphs up to this size also get a Fiedler-vector start


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Bisection:
    labels: np.ndarray
    cut_weight: float
    balance: float


def cut_weight(g: SparseGraph, labels) -> float:
    u, v, w = g.edges()
    labels = np.asarray(labels)
    return float(np.sum(w[labels[u] != labels[v]]))


def max_side(total: int, epsilon: float) -> int:
    return max(math.ceil(total / 2), math.floor((1.0 + epsilon) * total / 2 + 1e-9))


def _finish(g: SparseGraph, labels) -> Bisection:
    labels = np.asarray(labels, dtype=np.int8)
    if labels[0] == 1:
        labels = 1 - labels
    n1 = int(labels.sum())
    n = labels.size
    return Bisection(labels, cut_weight(g, labels), max(n1, n - n1) / (n / 2))


# ------------------------------------------------------------- brute force


def brute_force_min_cut(g: SparseGraph, epsilon: float) -> Bisection:
    """Exhaustive minimum balanced cut; ties go to the smallest label vector."""
    n = g.n_vertices
    if n > 20:
        raise PartitionError(f"brute force limited to 20 vertices, got {n}")
    if n < 2:
        raise PartitionError("need at least two vertices")
    cap = max_side(n, epsilon)
    # vertex 0 is pinned to side 0: that is the lexicographically smaller of
    # each complementary pair, and bit (n-1-i) of the code is vertex i's label
    codes = np.arange(1 << (n - 1), dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    labels = ((codes[:, None] >> shifts[None, :]) & 1).astype(np.int8)
    ones = labels.sum(axis=1)
    ok = (ones >= 1) & (ones <= cap) & (n - ones <= cap)
    u, v, w = g.edges()
    cuts = np.zeros(codes.size)
    for a, b, c in zip(u, v, w):
        cuts += c * (labels[:, a] != labels[:, b])
    cuts[~ok] = np.inf
    best = int(np.argmin(cuts))
    return _finish(g, labels[best])


# ------------------------------------------------------------- multilevel


class _Level:
    __slots__ = ("adj", "vw", "cmap")

    def __init__(self, adj, vw, cmap=None):
        self.adj = adj  # csr, symmetric, no diagonal
        self.vw = vw
        self.cmap = cmap  # fine vertex -> coarse vertex of the next level


def _heavy_edge_matching(adj: sp.csr_matrix, rng) -> tuple[np.ndarray, int]:
    """Match each vertex (random order) to its heaviest unmatched neighbor.

    A vertex whose best available edge is lighter than ``MATCH_RATIO``
    times its heaviest incident edge stays single, so weak bridges between
    dense regions are not contracted away.
    """
    n = adj.shape[0]
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    match = np.full(n, -1, dtype=np.int64)
    for v in rng.permutation(n).tolist():
        if match[v] >= 0:
            continue
        s, e = indptr[v], indptr[v + 1]
        best, best_w = -1, -1.0
        for u, w in zip(indices[s:e].tolist(), data[s:e].tolist()):
            if match[u] < 0 and u != v and (w > best_w or (w == best_w and u < best)):
                best, best_w = u, w
        if best < 0 or best_w < MATCH_RATIO * data[s:e].max():
            match[v] = v
        else:
            match[v] = best
            match[best] = v
    cmap = np.full(n, -1, dtype=np.int64)
    nc = 0
    for v in range(n):
        if cmap[v] < 0:
            cmap[v] = nc
            cmap[match[v]] = nc
            nc += 1
    return cmap, nc


def _contract(adj, vw, cmap, nc):
    n = adj.shape[0]
    p = sp.csr_matrix((np.ones(n), (np.arange(n), cmap)), shape=(n, nc))
    coarse = (p.T @ adj @ p).tocsr()
    coarse.setdiag(0)
    coarse.eliminate_zeros()
    coarse.sort_indices()
    return coarse, np.bincount(cmap, weights=vw, minlength=nc)


def _grow_region(adj, vw, start, target, attach=False):
    """Greedy growing from ``start`` until the region holds ``target`` weight.

    The next vertex maximizes the cut decrease ``w(v, region) - w(v, rest)``,
    or with ``attach`` just ``w(v, region)``.
    """
    n = adj.shape[0]
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    labels = np.ones(n, dtype=np.int8)
    gain = np.zeros(n)
    if not attach:
        for v in range(n):
            gain[v] = -data[indptr[v]:indptr[v + 1]].sum()
    heap = []
    region_w = 0.0
    queued = np.zeros(n, dtype=bool)

    def add(v):
        nonlocal region_w
        labels[v] = 0
        region_w += vw[v]
        for u, w in zip(indices[indptr[v]:indptr[v + 1]].tolist(),
                        data[indptr[v]:indptr[v + 1]].tolist()):
            if labels[u] == 1:
                gain[u] += w if attach else 2 * w
                queued[u] = True
                heapq.heappush(heap, (-gain[u], u))

    add(start)
    while region_w < target:
        while heap:
            g, v = heapq.heappop(heap)
            if labels[v] == 1 and -g == gain[v]:
                break
        else:
            rest = np.flatnonzero(labels == 1)
            if rest.size == 0:
                break
            v = int(rest[0])
        if region_w + vw[v] > target and region_w > 0 and region_w + vw[v] - target > target - region_w:
            break
        add(v)
    return labels


def _spectral_split(adj, vw, target):
    """Prefix of the Fiedler ordering whose weight is closest to ``target``."""
    a = adj.toarray()
    lap = np.diag(a.sum(axis=1)) - a
    _, vecs = sla.eigh(lap, subset_by_index=[1, 1])
    order = np.argsort(vecs[:, 0], kind="stable")
    cum = np.cumsum(vw[order])
    k = int(np.argmin(np.abs(cum[:-1] - target))) + 1
    labels = np.ones(adj.shape[0], dtype=np.int8)
    labels[order[:k]] = 0
    return labels


def _pseudo_peripheral(adj, start=0):
    v = start
    for _ in range(2):
        order = breadth_first_order(adj, v, directed=False, return_predecessors=False)
        v = int(order[-1])
    return v


@numba.njit(cache=True)
def _overload(w0, w1, cap):
    return max(0.0, max(w0, w1) - cap)


@numba.njit(cache=True)
def _fm_kernel(indptr, indices, data, vw, lab, cap, max_passes, move_limit):
    n = indptr.shape[0] - 1
    side_w = np.zeros(2)
    for v in range(n):
        side_w[lab[v]] += vw[v]
    ext = np.empty(n)
    inn = np.empty(n)
    gain = np.empty(n)
    locked = np.empty(n, dtype=np.bool_)
    moves = np.empty(n, dtype=np.int64)
    for _ in range(max_passes):
        for v in range(n):
            e = 0.0
            i = 0.0
            for k in range(indptr[v], indptr[v + 1]):
                if lab[indices[k]] == lab[v]:
                    i += data[k]
                else:
                    e += data[k]
            ext[v] = e
            inn[v] = i
            gain[v] = e - i
        cut = 0.0
        for v in range(n):
            cut += ext[v]
        cut *= 0.5
        # heap entries are (-gain, vertex) as floats; stale ones are skipped
        h0 = [(0.0, 0.0)]
        h1 = [(0.0, 0.0)]
        h0.pop()
        h1.pop()
        over0 = _overload(side_w[0], side_w[1], cap)
        for v in range(n):
            if ext[v] > 0 or over0 > 0:
                if lab[v] == 0:
                    h0.append((-gain[v], float(v)))
                else:
                    h1.append((-gain[v], float(v)))
        heapq.heapify(h0)
        heapq.heapify(h1)
        locked[:] = False
        n_moves = 0
        best_over, best_cut, best_len = over0, cut, 0
        while True:
            pick_v = -1
            pick_s = -1
            pick_key = 0.0
            for s in range(2):
                h = h0 if s == 0 else h1
                while len(h) > 0:
                    top = h[0]
                    u = int(top[1])
                    if locked[u] or lab[u] != s or -top[0] != gain[u]:
                        heapq.heappop(h)
                    else:
                        break
                if len(h) == 0:
                    continue
                g = -h[0][0]
                v = int(h[0][1])
                nw0 = side_w[0]
                nw1 = side_w[1]
                if s == 0:
                    nw0 -= vw[v]
                    nw1 += vw[v]
                    dest = nw1
                else:
                    nw1 -= vw[v]
                    nw0 += vw[v]
                    dest = nw0
                over_now = _overload(side_w[0], side_w[1], cap)
                if dest <= cap or (over_now > 0 and _overload(nw0, nw1, cap) < over_now):
                    # best candidate: largest gain, then lowest vertex, then side 0
                    if pick_v < 0 or -g < pick_key or (-g == pick_key and v < pick_v):
                        pick_v, pick_s, pick_key = v, s, -g
            if pick_v < 0:
                break
            v, s = pick_v, pick_s
            if s == 0:
                heapq.heappop(h0)
            else:
                heapq.heappop(h1)
            g = gain[v]
            lab[v] = 1 - s
            side_w[s] -= vw[v]
            side_w[1 - s] += vw[v]
            locked[v] = True
            cut -= g
            moves[n_moves] = v
            n_moves += 1
            t = ext[v]
            ext[v] = inn[v]
            inn[v] = t
            gain[v] = -g
            for k in range(indptr[v], indptr[v + 1]):
                u = indices[k]
                if locked[u]:
                    continue
                w = data[k]
                if lab[u] == 1 - s:
                    inn[u] += w
                    ext[u] -= w
                else:
                    ext[u] += w
                    inn[u] -= w
                gain[u] = ext[u] - inn[u]
                if lab[u] == 0:
                    heapq.heappush(h0, (-gain[u], float(u)))
                else:
                    heapq.heappush(h1, (-gain[u], float(u)))
            over = _overload(side_w[0], side_w[1], cap)
            if over < best_over or (over == best_over and cut < best_cut - 1e-12):
                best_over, best_cut, best_len = over, cut, n_moves
            elif n_moves - best_len > move_limit:
                break
        for k in range(n_moves - 1, best_len - 1, -1):
            v = moves[k]
            s = lab[v]
            lab[v] = 1 - s
            side_w[s] -= vw[v]
            side_w[1 - s] += vw[v]
        if best_len == 0:
            break
    return lab


def _fm_refine(adj, vw, labels, cap, max_passes=MAX_PASSES):
    """Boundary FM with gain heaps, single-vertex moves and best-prefix rollback."""
    n = adj.shape[0]
    lab = np.ascontiguousarray(labels, dtype=np.int8).copy()
    return _fm_kernel(adj.indptr.astype(np.int64), adj.indices.astype(np.int64),
                      adj.data.astype(np.float64), np.ascontiguousarray(vw, dtype=np.float64),
                      lab, float(cap), max_passes, max(25, min(n // 4, 300)))


def _cut(adj, labels):
    coo = adj.tocoo()
    return 0.5 * float(np.sum(coo.data[labels[coo.row] != labels[coo.col]]))


def bisect(g: SparseGraph, epsilon: float = 0.05, seed: int = 0) -> Bisection:
    """Balanced minimum-cut bisection of a connected graph.

    Parameters
    ----------
    g
        Connected graph with at least two vertices.
    epsilon
        Balance tolerance; each side holds at most
        ``max(ceil(n/2), floor((1+epsilon) n/2))`` vertices.
    seed
        Seeds the matching order and the extra initial-partition starts.

    Returns
    -------
    Bisection
        Labels with vertex 0 on side 0, the recomputed cut weight, and the
        balance ``max(side) / (n/2)``.
    """
    n = g.n_vertices
    if n < 2:
        raise PartitionError("need at least two vertices to bisect")
    if not 0.0 <= epsilon <= 0.5:
        raise PartitionError(f"epsilon must be in [0, 0.5], got {epsilon}")
    adj = g.to_scipy()
    if connected_components(adj, directed=False)[0] != 1:
        raise PartitionError("graph is disconnected; connect it before bisecting")
    if n == 2:
        return _finish(g, [0, 1])
    rng = np.random.default_rng(seed)

    levels = [_Level(adj, np.ones(n))]
    while levels[-1].adj.shape[0] > COARSEST_SIZE:
        cur = levels[-1]
        cmap, nc = _heavy_edge_matching(cur.adj, rng)
        if nc > MIN_SHRINK * cur.adj.shape[0]:
            break
        cur.cmap = cmap
        cadj, cvw = _contract(cur.adj, cur.vw, cmap, nc)
        levels.append(_Level(cadj, cvw))

    cap = max_side(n, epsilon)
    top = levels[-1]
    m = top.adj.shape[0]
    starts = [_pseudo_peripheral(top.adj)]
    extra = rng.permutation(m)[:N_INITIAL_TRIALS].tolist()
    starts += [s for s in extra if s != starts[0]][:N_INITIAL_TRIALS - 1]
    inits = [_grow_region(top.adj, top.vw, s, n / 2, attach)
             for s in starts for attach in (False, True)]
    if m <= SPECTRAL_MAX:
        inits.append(_spectral_split(top.adj, top.vw, n / 2))
    best = None
    for lab in inits:
        lab = _fm_refine(top.adj, top.vw, lab, cap)
        side = np.bincount(lab, weights=top.vw, minlength=2)
        key = (max(0.0, side.max() - cap), _cut(top.adj, lab))
        if best is None or key < best[0]:
            best = (key, lab)
    labels = best[1]

    for lvl in reversed(levels[:-1]):
        labels = labels[lvl.cmap]
        labels = _fm_refine(lvl.adj, lvl.vw, labels, cap)

    sizes = np.bincount(labels, minlength=2)
    if sizes.max() > cap or sizes.min() == 0:
        raise PartitionError(f"could not reach balance: side sizes {sizes.tolist()}, cap {cap}")
    return _finish(g, labels)
