"""Multiscale stick-breaking model state.

Every tree node carries a stick length ``V``, a Gaussian mean ``mu`` and a
Gaussian *variance* ``sigma`` (variance, so the inverse-gamma update is
conjugate).  Along a root-to-leaf path the mixture weight of node ``j`` is
``V_j * prod_{i<j} (1 - V_i)``; leaves carry ``V = 1`` so the weights of a
finite path sum to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ptree import PartitionTree

__all__ = [
    "ModelError",
    "Hyperparams",
    "NodeParams",
    "MsbState",
    "path_weights",
    "path_weights_from_sticks",
    "sample_prior",
    "log_node_density",
]

_LOG_2PI = math.log(2.0 * math.pi)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    """Stick concentration ``alpha``, inverse-gamma ``(a, b)``, iteration budget."""

    alpha: float = 1.0
    a: float = 3.0
    b: float = 1.0
    max_iters: int = 20000
    burn_in: int = 1000

    def __post_init__(self):
        if not (self.alpha > 0 and self.a > 0 and self.b > 0):
            raise ModelError("alpha, a and b must all be positive")
        if self.max_iters < 1 or self.burn_in < 0 or self.burn_in >= self.max_iters:
            raise ModelError("need max_iters >= 1 and 0 <= burn_in < max_iters")


@dataclass(frozen=True)
class NodeParams:
    V: float
    mu: float
    sigma: float


@dataclass
class MsbState:
    """Per-node ``V``, ``mu``, ``sigma`` arrays plus per-observation levels.

    ``levels[i]`` is a position along observation ``i``'s root-to-leaf path
    (0 is the root).
    """

    V: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    levels: np.ndarray

    def node(self, i: int) -> NodeParams:
        return NodeParams(float(self.V[i]), float(self.mu[i]), float(self.sigma[i]))

    def copy(self) -> MsbState:
        return MsbState(self.V.copy(), self.mu.copy(), self.sigma.copy(), self.levels.copy())

    def check(self, tree: PartitionTree, lengths=None):
        leaf = tree.is_leaf()
        if np.any((self.V < 0) | (self.V > 1)):
            raise ModelError("stick lengths must lie in [0, 1]")
        if not np.all(self.V[leaf] == 1.0):
            raise ModelError("leaf sticks must equal 1")
        if not np.all(self.sigma > 0):
            raise ModelError("node variances must be positive")
        if lengths is not None and np.any((self.levels < 0) | (self.levels >= lengths)):
            raise ModelError("a level falls outside its observation's path")


def path_weights_from_sticks(v) -> np.ndarray:
    """Stick-breaking weights for the stick lengths along one path."""
    v = np.asarray(v, dtype=np.float64)
    if np.any((v < 0) | (v > 1)) or not np.all(np.isfinite(v)):
        raise ModelError("stick lengths must lie in [0, 1]")
    rest = np.concatenate([[1.0], np.cumprod(1.0 - v)[:-1]])
    return v * rest


def path_weights(tree: PartitionTree, state: MsbState, path) -> np.ndarray:
    path = list(path)
    if not path or path[0] != 0 or tree.nodes[path[-1]].children:
        raise ModelError("path must run from the root to a leaf")
    return path_weights_from_sticks(state.V[path])


def sample_prior(tree: PartitionTree, hyper: Hyperparams, seed=0, n_obs: int = 0) -> MsbState:
    """Independent prior draws: ``V ~ Beta(1, alpha)`` (leaves 1),
    ``mu ~ N(0, 1)``, ``sigma ~ IG(a, b)``."""
    rng = np.random.default_rng(seed)
    m = tree.n_nodes
    V = rng.beta(1.0, hyper.alpha, size=m)
    V[tree.is_leaf()] = 1.0
    mu = rng.standard_normal(m)
    sigma = hyper.b / rng.gamma(hyper.a, 1.0, size=m)
    return MsbState(V, mu, sigma, np.zeros(n_obs, dtype=np.int64))


def log_node_density(params: NodeParams, y: float) -> float:
    """Log of the Normal density with mean ``mu`` and variance ``sigma``."""
    if not params.sigma > 0:
        raise ModelError(f"node variance must be positive, got {params.sigma}")
    r = y - params.mu
    return -0.5 * (_LOG_2PI + math.log(params.sigma) + r * r / params.sigma)
