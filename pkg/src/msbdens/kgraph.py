"""Thresholded Gaussian-kernel similarity graph over whitened rows.

Edge ``(u, v)`` exists iff ``exp(-rho(u, v)**2 / bandwidth) > t`` and
carries that kernel value as its weight.  ``bandwidth=1`` is the plain
``exp(-rho**2)`` kernel; with hundreds of whitened coordinates every pair
sits at ``rho**2 ~ 2p`` and that kernel underflows to zero, so pipelines
pass the median squared distance instead (see :func:`median_sq_distance`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

__all__ = [
    "GraphError",
    "SparseGraph",
    "pairwise_distance",
    "median_sq_distance",
    "select_threshold",
    "build_graph",
    "build_graph_naive",
    "connect_components",
    "save_edge_list",
    "load_edge_list",
]

log = logging.getLogger(__name__)

_MAX_PAIRS = 1_000_000
_TINY = np.finfo(np.float64).tiny


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class SparseGraph:
    """Symmetric weighted graph in CSR form with sorted neighbor lists."""

    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    summary: dict = field(default_factory=dict, compare=False)

    @property
    def n_vertices(self) -> int:
        return self.indptr.shape[0] - 1

    @property
    def n_edges(self) -> int:
        return self.indices.shape[0] // 2

    def neighbors(self, u: int):
        s, e = self.indptr[u], self.indptr[u + 1]
        return self.indices[s:e], self.weights[s:e]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def to_scipy(self) -> sp.csr_matrix:
        n = self.n_vertices
        return sp.csr_matrix((self.weights, self.indices, self.indptr), shape=(n, n))

    def edges(self):
        """Arrays ``(u, v, w)`` of every undirected edge with ``u < v``."""
        rows = np.repeat(np.arange(self.n_vertices), self.degrees())
        keep = rows < self.indices
        return rows[keep], self.indices[keep], self.weights[keep]

    def check(self):
        """Assert symmetry, no self-loops, weights in (0, 1], sorted lists."""
        n = self.n_vertices
        rows = np.repeat(np.arange(n), self.degrees())
        if np.any(rows == self.indices):
            raise GraphError("self-loop present")
        if self.weights.size and (self.weights.min() <= 0 or self.weights.max() > 1):
            raise GraphError("edge weight outside (0, 1]")
        for u in range(n):
            nb = self.indices[self.indptr[u]:self.indptr[u + 1]]
            if np.any(np.diff(nb) <= 0):
                raise GraphError(f"neighbor list of {u} not strictly sorted")
        a = self.to_scipy()
        if (a != a.T).nnz:
            raise GraphError("adjacency is not symmetric")

    @classmethod
    def from_edges(cls, n, u, v, w, summary=None) -> SparseGraph:
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        w = np.asarray(w, dtype=np.float64)
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        vals = np.concatenate([w, w])
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if dup.any():
                raise GraphError("duplicate edge")
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        indptr = np.cumsum(indptr)
        return cls(indptr, cols, vals, summary or {})

    def subgraph(self, vertices) -> SparseGraph:
        """Induced subgraph on sorted ``vertices``, relabelled 0..m-1."""
        vertices = np.asarray(vertices, dtype=np.int64)
        sub = self.to_scipy()[vertices][:, vertices].tocsr()
        sub.sort_indices()
        return SparseGraph(
            sub.indptr.astype(np.int64), sub.indices.astype(np.int64), sub.data.copy()
        )


def pairwise_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise GraphError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def _sq_dist_pairs(x, u, v, chunk_bytes=1 << 25):
    """Exact squared distances for the row pairs ``(u[i], v[i])``."""
    out = np.empty(len(u), dtype=np.float64)
    step = max(1, chunk_bytes // (8 * max(1, x.shape[1])))
    for s in range(0, len(u), step):
        d = x[u[s:s + step]] - x[v[s:s + step]]
        out[s:s + step] = np.sum(d * d, axis=1)
    return out


def _gram_sq_dist_pairs(x, u, v, block=1024):
    """Squared distances for many pairs via blocked Gram products.

    Pairs are grouped by (row tile, column tile) so every tile costs one
    matrix product.  Accurate to rounding in ``|a|^2 + |b|^2 - 2ab``,
    which is ample for quantiles; edges are always recomputed exactly.
    """
    n = x.shape[0]
    nb = (n + block - 1) // block
    sq = np.einsum("ij,ij->i", x, x)
    out = np.empty(len(u), dtype=np.float64)
    key = (u // block) * nb + v // block
    order = np.argsort(key, kind="stable")
    bounds = np.flatnonzero(np.diff(key[order])) + 1
    for grp in np.split(order, bounds):
        if grp.size == 0:
            continue
        bi, bj = divmod(int(key[grp[0]]), nb)
        i0, j0 = bi * block, bj * block
        xi, xj = x[i0:i0 + block], x[j0:j0 + block]
        g = sq[i0:i0 + block, None] + sq[None, j0:j0 + block] - 2.0 * (xi @ xj.T)
        out[grp] = g[u[grp] - i0, v[grp] - j0]
    return np.maximum(out, 0.0)


def _pair_sample(n, seed):
    total = n * (n - 1) // 2
    if total <= _MAX_PAIRS:
        return np.triu_indices(n, k=1)
    rng = np.random.default_rng(seed)
    u = rng.integers(0, n, size=_MAX_PAIRS)
    v = rng.integers(0, n - 1, size=_MAX_PAIRS)
    v = v + (v >= u)  # uniform over ordered pairs with u != v
    return np.minimum(u, v), np.maximum(u, v)


def median_sq_distance(x, seed: int = 0) -> float:
    """Median squared distance over all pairs (or a 10**6-pair subsample)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise GraphError("need at least two rows")
    u, v = _pair_sample(x.shape[0], seed)
    med = float(np.median(_gram_sq_dist_pairs(x, u, v)))
    return med if med > 0 else 1.0


def select_threshold(x, target_avg_degree: int, bandwidth: float = 1.0, seed: int = 0) -> float:
    """Kernel threshold giving roughly ``target_avg_degree`` neighbors per row.

    The fraction ``target / (n - 1)`` of (sampled) pair weights must lie
    strictly above the returned value.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if target_avg_degree < 1:
        raise GraphError("target_avg_degree must be >= 1")
    if target_avg_degree > n - 1:
        raise GraphError(
            f"target_avg_degree={target_avg_degree} exceeds the n-1={n - 1} possible neighbors"
        )
    u, v = _pair_sample(n, seed)
    w = np.sort(np.exp(-_gram_sq_dist_pairs(x, u, v) / bandwidth))[::-1]
    k = int(round(target_avg_degree / (n - 1) * w.size))
    k = min(max(k, 1), w.size)
    hi = w[k - 1]
    if k < w.size and hi > w[k]:
        t = 0.5 * (hi + w[k])
    else:
        t = np.nextafter(hi, 0.0)
    return float(min(max(t, 0.0), np.nextafter(1.0, 0.0)))


def _check_rows(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise GraphError("expected a 2-D matrix of rows")
    if not np.all(np.isfinite(x)):
        r = np.argwhere(~np.isfinite(x))[0][0]
        raise GraphError(f"non-finite value in row {r}")
    return np.ascontiguousarray(x)


def build_graph(x, t: float, bandwidth: float = 1.0, block: int = 512,
                connect: bool = True) -> SparseGraph:
    """Kernel graph by blocked Gram-matrix screening plus exact recomputation.

    Candidates are screened with ``|a|^2 + |b|^2 - 2ab`` on row tiles,
    then every candidate's distance is recomputed directly so the edge set
    is identical to the naive double loop.  With ``connect`` true, isolated
    vertices and stray components are then attached (see
    :func:`connect_components`).
    """
    x = _check_rows(x)
    if not 0.0 <= t < 1.0:
        raise GraphError(f"threshold must be in [0, 1), got {t}")
    if bandwidth <= 0:
        raise GraphError("bandwidth must be positive")
    n = x.shape[0]
    # exp(-d / h) > t  <=>  d < -h log t ; exp underflows near d / h ~ 745
    cutoff = -bandwidth * np.log(t) if t > 0 else 746.0 * bandwidth
    sq = np.einsum("ij,ij->i", x, x)
    cu, cv = [], []
    for i0 in range(0, n, block):
        i1 = min(n, i0 + block)
        for j0 in range(i0, n, block):
            j1 = min(n, j0 + block)
            g = sq[i0:i1, None] + sq[None, j0:j1] - 2.0 * (x[i0:i1] @ x[j0:j1].T)
            slack = 1e-8 * (sq[i0:i1, None] + sq[None, j0:j1]) + 1e-12
            mask = g <= cutoff + slack
            if i0 == j0:
                mask &= np.triu(np.ones_like(mask, dtype=bool), k=1)
            a, b = np.nonzero(mask)
            cu.append(a + i0)
            cv.append(b + j0)
    u = np.concatenate(cu) if cu else np.empty(0, np.int64)
    v = np.concatenate(cv) if cv else np.empty(0, np.int64)
    w = np.exp(-_sq_dist_pairs(x, u, v) / bandwidth)
    keep = w > t
    g = SparseGraph.from_edges(n, u[keep], v[keep], w[keep])
    isolated = int(np.sum(g.degrees() == 0))
    if connect:
        g = connect_components(g, x, bandwidth)
    g.summary.update(
        n_vertices=n,
        threshold=float(t),
        bandwidth=float(bandwidth),
        kernel_edges=int(keep.sum()),
        isolated_before_connect=isolated,
        edges=g.n_edges,
        avg_degree=2.0 * g.n_edges / max(n, 1),
    )
    if isolated:
        log.info("kernel graph: %d isolated vertices attached", isolated)
    return g


def build_graph_naive(x, t: float, bandwidth: float = 1.0) -> SparseGraph:
    """O(n^2) double-loop reference construction (no connection fix)."""
    x = _check_rows(x)
    n = x.shape[0]
    us, vs, ws = [], [], []
    for a in range(n):
        for b in range(a + 1, n):
            d = x[a] - x[b]
            w = np.exp(-np.sum(d * d) / bandwidth)
            if w > t:
                us.append(a)
                vs.append(b)
                ws.append(w)
    return SparseGraph.from_edges(n, us, vs, ws)


def _nearest_among(x, queries, pool, exclude_self=True, block=512):
    """Index in ``pool`` nearest to each row of ``queries`` (lowest on ties).

    ``queries`` are row vectors; with ``exclude_self`` they are row indices
    of ``x`` and a row never matches itself.  Distances are screened with
    Gram products and the near-minimal candidates re-ranked exactly.
    """
    pool = np.asarray(pool, dtype=np.int64)
    xp = x[pool]
    sq_p = np.einsum("ij,ij->i", xp, xp)
    if exclude_self:
        qidx = np.asarray(queries, dtype=np.int64)
        q = x[qidx]
    else:
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    out = np.empty(q.shape[0], dtype=np.int64)
    for i0 in range(0, q.shape[0], block):
        qb = q[i0:i0 + block]
        sq_q = np.einsum("ij,ij->i", qb, qb)
        d = sq_q[:, None] + sq_p[None, :] - 2.0 * (qb @ xp.T)
        if exclude_self:
            d[pool[None, :] == qidx[i0:i0 + block, None]] = np.inf
        lo = d.min(axis=1)
        slack = 1e-8 * (sq_q + sq_p.max()) + 1e-12
        for r in range(qb.shape[0]):
            cand = np.flatnonzero(d[r] <= lo[r] + slack[r])
            if cand.size > 1:
                exact = np.sum((xp[cand] - qb[r]) ** 2, axis=1)
                cand = cand[exact == exact.min()]
            out[i0 + r] = pool[cand[0]]
    return out


def _kernel_weight(x, a, b, bandwidth):
    dd = x[a] - x[b]
    return min(max(float(np.exp(-np.sum(dd * dd) / bandwidth)), _TINY), 1.0)


def connect_components(g: SparseGraph, x, bandwidth: float = 1.0) -> SparseGraph:
    """Make ``g`` connected with as few added edges as the rules below allow.

    First every isolated vertex is joined to its nearest neighbor.  Any
    component still separate from the largest one is then joined through
    the pair (its member nearest the main centroid, the main member nearest
    its centroid).  Bridge weights are the kernel value, floored at the
    smallest positive double.
    """
    n = g.n_vertices
    if n < 2:
        return g
    x = np.asarray(x, dtype=np.float64)
    u0, v0, w0 = g.edges()
    bu, bv, bw = [], [], []
    seen = set()
    lonely = np.flatnonzero(g.degrees() == 0)
    near = _nearest_among(x, lonely, np.arange(n)) if lonely.size else lonely
    for a, b in zip(lonely.tolist(), near.tolist()):
        key = (min(a, b), max(a, b))
        if key not in seen:
            seen.add(key)
            bu.append(key[0])
            bv.append(key[1])
            bw.append(_kernel_weight(x, a, b, bandwidth))
    cur = SparseGraph.from_edges(n, np.concatenate([u0, bu]).astype(np.int64),
                                 np.concatenate([v0, bv]).astype(np.int64),
                                 np.concatenate([w0, bw]))
    ncomp, lab = connected_components(cur.to_scipy(), directed=False)
    if ncomp > 1:
        sizes = np.bincount(lab, minlength=ncomp)
        main = int(np.argmax(sizes))  # ties -> lowest label, i.e. lowest vertex
        main_idx = np.flatnonzero(lab == main)
        main_c = x[main_idx].mean(axis=0)
        to_main = np.sum((x - main_c) ** 2, axis=1)
        others = [c for c in range(ncomp) if c != main]
        cents = np.stack([x[lab == c].mean(axis=0) for c in others])
        near_main = _nearest_among(x, cents, main_idx, exclude_self=False)
        for c, b in zip(others, near_main.tolist()):
            idx = np.flatnonzero(lab == c)
            a = int(idx[int(np.argmin(to_main[idx]))])
            bu.append(min(a, b))
            bv.append(max(a, b))
            bw.append(_kernel_weight(x, a, b, bandwidth))
    if not bu:
        return g
    out = SparseGraph.from_edges(
        n,
        np.concatenate([u0, bu]).astype(np.int64),
        np.concatenate([v0, bv]).astype(np.int64),
        np.concatenate([w0, bw]),
        dict(g.summary),
    )
    out.summary["bridges_added"] = out.summary.get("bridges_added", 0) + len(bu)
    return out


def save_edge_list(g: SparseGraph, path):
    u, v, w = g.edges()
    with open(path, "w") as fh:
        fh.write(f"{g.n_vertices} {len(u)}\n")
        for a, b, c in zip(u.tolist(), v.tolist(), w.tolist()):
            fh.write(f"{a} {b} {c!r}\n")


def load_edge_list(path) -> SparseGraph:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise GraphError(f"{path}: header must be 'n_vertices m_edges'")
        n, m = int(header[0]), int(header[1])
        u = np.empty(m, np.int64)
        v = np.empty(m, np.int64)
        w = np.empty(m, np.float64)
        for i in range(m):
            parts = fh.readline().split()
            if len(parts) != 3:
                raise GraphError(f"{path}: malformed edge on line {i + 2}")
            u[i], v[i], w[i] = int(parts[0]), int(parts[1]), float(parts[2])
    if m and (u.min() < 0 or v.max() >= n or np.any(u >= v)):
        raise GraphError(f"{path}: edges must satisfy 0 <= u < v < n")
    return SparseGraph.from_edges(n, u, v, w)
