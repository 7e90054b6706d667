"""Multiscale partition tree built by recursive graph bisection.

Node ids are assigned in breadth-first order, so scale is non-decreasing in
the id and every parent id is smaller than its children's.  ``k`` is the
position of a node among the nodes of its scale.

Tree snapshot layout (little-endian)::

    b"MSBT" | u32 version | u64 n_nodes | u64 p | u64 n_train | u8 has_stats
    [ p f64 means | p f64 sds ]                   # if has_stats
    n_train u64 member permutation (leaf pre-order)
    per node: i32 scale | i32 k | i64 parent | u32 n_children | n_children i64
              | u64 member_start | u64 member_count | p f64 centroid
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .dataio import WhitenStats
from .kgraph import SparseGraph, connect_components
from .partition import bisect

__all__ = [
    "TreeError",
    "TreeNode",
    "PartitionTree",
    "build_tree",
    "ancestors",
    "descendants",
    "route",
    "save_tree",
    "load_tree",
]

MAGIC = b"MSBT"
VERSION = 1


class TreeError(ValueError):
    pass


@dataclass
class TreeNode:
    scale: int
    k: int
    parent: int | None
    children: list[int]
    members: np.ndarray
    centroid: np.ndarray


@dataclass
class PartitionTree:
    nodes: list[TreeNode]
    n_train: int
    whiten_stats: WhitenStats | None = None
    _parent_arr: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def depth(self) -> int:
        return max(nd.scale for nd in self.nodes)

    @property
    def p(self) -> int:
        return self.nodes[0].centroid.shape[0]

    @property
    def leaves(self) -> list[int]:
        return [i for i, nd in enumerate(self.nodes) if not nd.children]

    def is_leaf(self) -> np.ndarray:
        return np.array([not nd.children for nd in self.nodes])

    def parents(self) -> np.ndarray:
        """Parent id per node, -1 at the root."""
        if self._parent_arr is None:
            self._parent_arr = np.array(
                [-1 if nd.parent is None else nd.parent for nd in self.nodes], dtype=np.int64
            )
        return self._parent_arr

    def scales(self) -> np.ndarray:
        return np.array([nd.scale for nd in self.nodes], dtype=np.int64)

    def leaf_of(self) -> np.ndarray:
        """Leaf id holding each training index."""
        out = np.full(self.n_train, -1, dtype=np.int64)
        for i in self.leaves:
            out[self.nodes[i].members] = i
        return out

    def training_paths(self) -> tuple[np.ndarray, np.ndarray]:
        """Stored root-to-leaf paths of the training rows.

        Returns ``(paths, lengths)``; ``paths`` is ``n_train x (depth+1)``
        padded with -1.
        """
        leaf = self.leaf_of()
        paths = np.full((self.n_train, self.depth + 1), -1, dtype=np.int64)
        lengths = np.zeros(self.n_train, dtype=np.int64)
        cache = {}
        for i, lf in enumerate(leaf.tolist()):
            if lf not in cache:
                cache[lf] = ancestors(self, lf) + [lf]
            pth = cache[lf]
            paths[i, :len(pth)] = pth
            lengths[i] = len(pth)
        return paths, lengths

    def check(self):
        """Assert the structural invariants; raise TreeError otherwise."""
        root = self.nodes[0]
        if root.scale != 0 or root.parent is not None:
            raise TreeError("node 0 must be the root at scale 0")
        if not np.array_equal(root.members, np.arange(self.n_train)):
            raise TreeError("root must hold every training index")
        for i, nd in enumerate(self.nodes):
            if i and (nd.parent is None or i not in self.nodes[nd.parent].children):
                raise TreeError(f"node {i} has no consistent parent")
            if nd.children:
                joined = np.sort(np.concatenate([self.nodes[c].members for c in nd.children]))
                if not np.array_equal(joined, nd.members):
                    raise TreeError(f"children of node {i} do not partition its members")
                for c in nd.children:
                    if self.nodes[c].scale != nd.scale + 1:
                        raise TreeError(f"child {c} of node {i} has the wrong scale")
        for j in range(self.depth + 1):
            cover = [nd.members for nd in self.nodes
                     if nd.scale == j or (nd.scale < j and not nd.children)]
            allm = np.sort(np.concatenate(cover)) if cover else np.empty(0, np.int64)
            if not np.array_equal(allm, np.arange(self.n_train)):
                raise TreeError(f"scale {j} cells do not partition the training set")

    @classmethod
    def from_parents(cls, parents, p: int = 1) -> PartitionTree:
        """Structure-only tree from a breadth-first parent array (no members)."""
        parents = list(parents)
        nodes = []
        per_scale: dict[int, int] = {}
        for i, par in enumerate(parents):
            if i == 0:
                if par is not None and par >= 0:
                    raise TreeError("node 0 must be the root")
                scale, par = 0, None
            else:
                if not 0 <= par < i:
                    raise TreeError("parents must precede children")
                scale = nodes[par].scale + 1
                nodes[par].children.append(i)
            k = per_scale.get(scale, 0)
            per_scale[scale] = k + 1
            nodes.append(TreeNode(scale, k, par, [], np.empty(0, np.int64), np.zeros(p)))
        return cls(nodes, 0)


def _node(tree, node):
    if not 0 <= node < tree.n_nodes:
        raise TreeError(f"unknown node id {node}")
    return tree.nodes[node]


def ancestors(tree: PartitionTree, node: int) -> list[int]:
    """Strict ancestors of ``node``, root first."""
    out = []
    par = _node(tree, node).parent
    while par is not None:
        out.append(par)
        par = tree.nodes[par].parent
    return out[::-1]


def descendants(tree: PartitionTree, node: int) -> list[int]:
    """Strict descendants of ``node`` in pre-order."""
    out = []
    stack = list(reversed(_node(tree, node).children))
    while stack:
        c = stack.pop()
        out.append(c)
        stack.extend(reversed(tree.nodes[c].children))
    return out


def route(tree: PartitionTree, x) -> list[int]:
    """Root-to-leaf path by nearest-centroid descent (ties to lower child id).

    ``x`` must already be whitened.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (tree.p,):
        raise TreeError(f"expected a whitened vector of length {tree.p}, got {x.shape}")
    path = [0]
    node = tree.nodes[0]
    while node.children:
        best, best_d = None, np.inf
        for c in node.children:
            d = float(np.sum((x - tree.nodes[c].centroid) ** 2))
            if d < best_d:
                best, best_d = c, d
        if best is None:  # non-finite distances: fall back to the first child
            best = node.children[0]
        path.append(best)
        node = tree.nodes[best]
    return path


def build_tree(g: SparseGraph, x, min_leaf: int = 20, max_depth: int = 8, seed: int = 0,
               epsilon: float = 0.05, bandwidth: float = 1.0,
               whiten_stats: WhitenStats | None = None) -> PartitionTree:
    """Recursively bisect the graph over whitened rows ``x``.

    A node is split iff it holds at least ``2 * min_leaf`` rows and sits
    above ``max_depth``.  Induced subgraphs that come apart are re-joined
    with :func:`~msbdens.kgraph.connect_components` before bisecting.
    Bisection seeds derive from ``(seed, node id)``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if g.n_vertices != n:
        raise TreeError(f"graph has {g.n_vertices} vertices but x has {n} rows")
    if min_leaf < 2:
        raise TreeError("min_leaf must be >= 2")
    if max_depth < 0:
        raise TreeError("max_depth must be >= 0")
    if n == 0:
        raise TreeError("cannot build a tree on zero rows")
    adj = g.to_scipy()
    nodes = [TreeNode(0, 0, None, [], np.arange(n), x.mean(axis=0))]
    per_scale = {0: 1}
    queue = [0]
    head = 0
    while head < len(queue):
        nid = queue[head]
        head += 1
        nd = nodes[nid]
        if nd.scale >= max_depth or nd.members.size < 2 * min_leaf:
            continue
        mem = nd.members
        sub = adj[mem][:, mem].tocsr()
        sub.sort_indices()
        sg = SparseGraph(sub.indptr.astype(np.int64), sub.indices.astype(np.int64), sub.data.copy())
        if connected_components(sub, directed=False)[0] > 1:
            sg = connect_components(sg, x[mem], bandwidth)
        ss = np.random.SeedSequence([seed, nid]).generate_state(1)[0]
        labels = bisect(sg, epsilon, int(ss)).labels
        parts = [mem[labels == 0], mem[labels == 1]]
        # the side holding the smaller first index becomes the first child
        parts.sort(key=lambda m: m[0])
        for part in parts:
            cid = len(nodes)
            k = per_scale.get(nd.scale + 1, 0)
            per_scale[nd.scale + 1] = k + 1
            nodes.append(TreeNode(nd.scale + 1, k, nid, [], part, x[part].mean(axis=0)))
            nd.children.append(cid)
            queue.append(cid)
    return PartitionTree(nodes, n, whiten_stats)


# ---------------------------------------------------------------- snapshot


def _leaf_preorder(tree):
    out = []
    stack = [0]
    while stack:
        i = stack.pop()
        ch = tree.nodes[i].children
        if ch:
            stack.extend(reversed(ch))
        else:
            out.append(i)
    return out


def save_tree(tree: PartitionTree, path):
    p = tree.p
    perm_parts = [tree.nodes[i].members for i in _leaf_preorder(tree)]
    perm = np.concatenate(perm_parts).astype("<u8") if perm_parts else np.empty(0, "<u8")
    pos = np.empty(tree.n_train, dtype=np.int64)
    pos[perm.astype(np.int64)] = np.arange(tree.n_train)
    buf = [MAGIC, struct.pack("<IQQQB", VERSION, tree.n_nodes, p, tree.n_train,
                              tree.whiten_stats is not None)]
    if tree.whiten_stats is not None:
        buf.append(tree.whiten_stats.means.astype("<f8").tobytes())
        buf.append(tree.whiten_stats.sds.astype("<f8").tobytes())
    buf.append(perm.tobytes())
    for nd in tree.nodes:
        par = -1 if nd.parent is None else nd.parent
        buf.append(struct.pack("<iiqI", nd.scale, nd.k, par, len(nd.children)))
        buf.append(np.asarray(nd.children, dtype="<i8").tobytes())
        start = int(pos[nd.members].min()) if nd.members.size else 0
        buf.append(struct.pack("<QQ", start, nd.members.size))
        buf.append(nd.centroid.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(buf))


def load_tree(path) -> PartitionTree:
    data = open(path, "rb").read()
    try:
        return _parse_tree(data, path)
    except (struct.error, ValueError) as e:
        if isinstance(e, TreeError):
            raise
        raise TreeError(f"{path}: truncated or corrupt tree file ({e})") from None


def _parse_tree(data: bytes, path) -> PartitionTree:
    if data[:4] != MAGIC:
        raise TreeError(f"{path}: bad magic, not an MSBT file")
    version, n_nodes, p, n_train, has_stats = struct.unpack_from("<IQQQB", data, 4)
    if version != VERSION:
        raise TreeError(f"{path}: tree format version {version}, this build reads {VERSION}")
    off = 4 + struct.calcsize("<IQQQB")
    stats = None
    if has_stats:
        means = np.frombuffer(data, "<f8", p, off).astype(np.float64)
        sds = np.frombuffer(data, "<f8", p, off + 8 * p).astype(np.float64)
        stats = WhitenStats(means, sds)
        off += 16 * p
    perm = np.frombuffer(data, "<u8", n_train, off).astype(np.int64)
    off += 8 * n_train
    nodes = []
    for _ in range(n_nodes):
        scale, k, par, nch = struct.unpack_from("<iiqI", data, off)
        off += struct.calcsize("<iiqI")
        children = np.frombuffer(data, "<i8", nch, off).astype(np.int64).tolist()
        off += 8 * nch
        start, count = struct.unpack_from("<QQ", data, off)
        off += 16
        centroid = np.frombuffer(data, "<f8", p, off).astype(np.float64)
        off += 8 * p
        members = np.sort(perm[start:start + count])
        nodes.append(TreeNode(scale, k, None if par < 0 else int(par), children, members, centroid))
    if off != len(data):
        raise TreeError(f"{path}: {len(data) - off} trailing bytes")
    return PartitionTree(nodes, int(n_train), stats)
