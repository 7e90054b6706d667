"""Gibbs sampler for the multiscale stick-breaking mixture.

One iteration:

1. draw each observation's level along its path from the multinomial full
   conditional (log-space, max-subtracted);
2. draw each internal stick ``V ~ Beta(1 + n_level, alpha + n_below)``;
3. draw each node mean ``mu ~ N(v nu ybar, v)`` with ``nu = n_level / sigma``
   and ``v = 1 / (1 + nu)``, then its variance
   ``sigma ~ IG(a + n_level / 2, b + sum (y - mu)^2 / 2)`` using the new mean.

``n_level`` counts the observations whose level sits at the node and
``ybar`` is their mean.

Posterior snapshot layout (little-endian)::

    b"MSBP" | u32 version | f64 alpha, a, b | u64 max_iters, burn_in, thin, seed
    | f64 y_mean, y_sd | u64 n_nodes | u64 n_draws | u64 n_trace
    | V, mu, sigma as n_draws*n_nodes f64 each | n_trace f64 log-likelihood
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sstats

from . import _kernels as K
from .dataio import DataError
from .msb import Hyperparams, ModelError, MsbState, sample_prior
from .ptree import PartitionTree

__all__ = [
    "SamplerError",
    "SufficientStats",
    "PosteriorSamples",
    "compute_stats",
    "step_levels",
    "step_sticks",
    "step_node_params",
    "run_gibbs",
    "convergence_diagnostic",
    "save_posterior",
    "load_posterior",
]

log = logging.getLogger(__name__)

MAGIC = b"MSBP"
VERSION = 1
DEFAULT_THIN = 10
DEFAULT_MAX_DRAWS = 2000
MIN_RETAINED_BEFORE_STOP = 500
CHECK_EVERY = 500


class SamplerError(RuntimeError):
    pass


@dataclass
class SufficientStats:
    count: np.ndarray
    sum_y: np.ndarray
    sum_y_sq: np.ndarray
    below: np.ndarray


@dataclass
class PosteriorSamples:
    """Retained draws, one row per draw and one column per tree node."""

    V: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    loglik: np.ndarray
    hyper: Hyperparams
    thin: int
    seed: int
    y_mean: float = 0.0
    y_sd: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_draws(self) -> int:
        return self.V.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.V.shape[1]

    def equals(self, other: PosteriorSamples) -> bool:
        return (
            np.array_equal(self.V, other.V)
            and np.array_equal(self.mu, other.mu)
            and np.array_equal(self.sigma, other.sigma)
            and np.array_equal(self.loglik, other.loglik)
            and self.hyper == other.hyper
            and (self.thin, self.seed, self.y_mean, self.y_sd)
            == (other.thin, other.seed, other.y_mean, other.y_sd)
        )


def _int_seed(rng) -> int:
    return int(rng.integers(0, 2**32 - 1))


def _tree_arrays(tree: PartitionTree):
    return tree.parents(), tree.is_leaf()


def _check_paths(paths, lengths, y):
    paths = np.ascontiguousarray(paths, dtype=np.int64)
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if paths.ndim != 2 or paths.shape[0] != y.shape[0] or lengths.shape != y.shape:
        raise SamplerError("paths, lengths and y disagree on the number of observations")
    return paths, lengths, y


def compute_stats(tree: PartitionTree, paths, levels, y) -> SufficientStats:
    """Sufficient statistics recomputed in plain numpy."""
    m = tree.n_nodes
    y = np.asarray(y, dtype=np.float64)
    nodes = np.asarray(paths)[np.arange(y.shape[0]), np.asarray(levels)] if y.size else np.empty(0, np.int64)
    count = np.bincount(nodes, minlength=m).astype(np.int64)
    sum_y = np.bincount(nodes, weights=y, minlength=m)
    sum_yy = np.bincount(nodes, weights=y * y, minlength=m)
    parent = tree.parents()
    sub = count.copy()
    for node in range(m - 1, 0, -1):
        sub[parent[node]] += sub[node]
    return SufficientStats(count, sum_y, sum_yy, sub - count)


def step_levels(tree: PartitionTree, state: MsbState, paths, lengths, y, rng) -> np.ndarray:
    """Redraw ``state.levels`` in place; returns the levels."""
    paths, lengths, y = _check_paths(paths, lengths, y)
    if state.levels.shape != y.shape:
        state.levels = np.zeros(y.shape[0], dtype=np.int64)
    K.seed_rng(_int_seed(rng))
    m = tree.n_nodes
    logp = np.empty(max(1, paths.shape[1]))
    K.sample_levels(paths, lengths, y, state.V, state.mu, state.sigma, tree.parents(),
                    state.levels, logp, np.empty(m), np.empty(m))
    return state.levels


def step_sticks(tree: PartitionTree, state: MsbState, stats: SufficientStats,
                hyper: Hyperparams, rng) -> np.ndarray:
    if np.any(stats.count < 0) or np.any(stats.below < 0):
        raise SamplerError("negative allocation counts")
    K.seed_rng(_int_seed(rng))
    K.sample_sticks(stats.count.astype(np.int64), stats.below.astype(np.int64),
                    tree.is_leaf(), float(hyper.alpha), state.V)
    return state.V


def step_node_params(tree: PartitionTree, state: MsbState, stats: SufficientStats,
                     paths, y, hyper: Hyperparams, rng):
    """Draw every ``mu`` then every ``sigma`` (with the fresh ``mu``)."""
    if not np.all(state.sigma > 0):
        raise ModelError("node variances must be positive")
    paths, _, y = _check_paths(paths, np.zeros(len(y), np.int64), y)
    K.seed_rng(_int_seed(rng))
    count = stats.count.astype(np.int64)
    K.sample_means(count, stats.sum_y, state.sigma, state.mu)
    ss = np.empty(tree.n_nodes)
    K.sample_variances(paths, state.levels, y, count, state.mu, float(hyper.a),
                       float(hyper.b), state.sigma, ss)
    return state.mu, state.sigma


def _effective_thin(hyper, thin, max_draws):
    span = hyper.max_iters - hyper.burn_in
    return max(thin, math.ceil(span / max_draws)) if max_draws > 0 else thin


def run_gibbs(tree: PartitionTree, paths, lengths, y, hyper: Hyperparams = Hyperparams(),
              seed: int = 0, thin: int = DEFAULT_THIN, max_draws: int = DEFAULT_MAX_DRAWS,
              early_stop: bool = False, diag_batch: int = 50, diag_level: float = 0.05,
              y_mean: float = 0.0, y_sd: float = 1.0) -> PosteriorSamples:
    """Run one chain on whitened responses ``y`` with stored paths.

    Parameters
    ----------
    paths, lengths
        Root-to-leaf node ids per observation (``-1`` padded) and their
        lengths, e.g. from :meth:`PartitionTree.training_paths`.  Zero
        observations simulate from the prior.
    thin, max_draws
        Every ``thin``-th post-burn-in state is kept; ``thin`` is raised if
        needed so that at most ``max_draws`` are kept.
    early_stop
        Stop once :func:`convergence_diagnostic` accepts the post-burn-in
        log-likelihood trace, checked every 500 iterations after at least
        500 draws have been retained.
    """
    if thin < 1:
        raise SamplerError("thin must be >= 1")
    paths, lengths, y = _check_paths(paths, lengths, y)
    if paths.shape[1] == 0:
        paths = np.zeros((y.shape[0], 1), dtype=np.int64)
    parent, is_leaf = _tree_arrays(tree)
    m = tree.n_nodes
    ss = np.random.SeedSequence(seed)
    init_seed, chain_seed = ss.spawn(2)
    state = sample_prior(tree, hyper, np.random.default_rng(init_seed), n_obs=y.shape[0])
    thin_eff = _effective_thin(hyper, thin, max_draws)
    cap = (hyper.max_iters - hyper.burn_in) // thin_eff
    out_V = np.empty((cap, m))
    out_mu = np.empty((cap, m))
    out_sigma = np.empty((cap, m))
    loglik = np.zeros(hyper.max_iters)
    count = np.zeros(m, dtype=np.int64)
    below = np.zeros(m, dtype=np.int64)
    sum_y = np.zeros(m)
    sum_yy = np.zeros(m)
    K.seed_rng(int(chain_seed.generate_state(1)[0]))

    n_drawn = 0
    it = 0
    stopped_early = False
    diag = None
    while it < hyper.max_iters:
        stop = hyper.max_iters
        if early_stop:
            stop = min(stop, it + CHECK_EVERY)
        n_drawn = K.run_chain(
            it, stop, hyper.burn_in, thin_eff, cap, paths, lengths, y, parent, is_leaf,
            float(hyper.alpha), float(hyper.a), float(hyper.b), state.V, state.mu,
            state.sigma, state.levels, count, sum_y, sum_yy, below, loglik,
            out_V, out_mu, out_sigma, n_drawn,
        )
        it = stop
        if early_stop and n_drawn >= MIN_RETAINED_BEFORE_STOP and it < hyper.max_iters:
            trace = loglik[hyper.burn_in:it]
            if trace.size >= 20 * diag_batch:
                diag = convergence_diagnostic(trace, diag_batch, diag_level)
                if diag[0]:
                    stopped_early = True
                    break
    meta = {"iterations": it, "thin": thin_eff, "stopped_early": stopped_early,
            "n_obs": int(y.shape[0])}
    if diag is not None:
        meta["diagnostic_pass"] = bool(diag[0])
        meta["diagnostic_statistic"] = float(diag[1])
    return PosteriorSamples(
        out_V[:n_drawn].copy(), out_mu[:n_drawn].copy(), out_sigma[:n_drawn].copy(),
        loglik[:it].copy(), hyper, thin_eff, int(seed), float(y_mean), float(y_sd), meta,
    )


def convergence_diagnostic(trace, batch: int = 50, level: float = 0.05):
    """Normality check on standardized batch means of a chain functional.

    Splits ``trace`` into non-overlapping batches of length ``batch``,
    standardizes the batch means and computes the Jarque-Bera statistic.
    Returns ``(passed, statistic, p_value)`` with ``passed`` iff the
    chi-square(2) tail probability exceeds ``level``; a trace with
    zero-variance batch means always fails.
    """
    trace = np.asarray(trace, dtype=np.float64)
    if batch < 1:
        raise SamplerError("batch must be positive")
    if trace.size < 20 * batch:
        raise SamplerError(f"trace of length {trace.size} is shorter than 20 batches of {batch}")
    m = trace.size // batch
    means = trace[:m * batch].reshape(m, batch).mean(axis=1)
    sd = means.std()
    if not sd > 1e-12 * max(1.0, abs(means.mean())):
        return False, math.inf, 0.0
    z = (means - means.mean()) / sd
    skew = np.mean(z**3)
    kurt = np.mean(z**4)
    jb = m / 6.0 * (skew**2 + (kurt - 3.0) ** 2 / 4.0)
    pval = float(sstats.chi2.sf(jb, 2))
    return pval > level, float(jb), pval


# ---------------------------------------------------------------- snapshot


def save_posterior(samples: PosteriorSamples, path):
    h = samples.hyper
    head = struct.pack(
        "<4sIdddQQQQddQQQ", MAGIC, VERSION, h.alpha, h.a, h.b, h.max_iters, h.burn_in,
        samples.thin, samples.seed, samples.y_mean, samples.y_sd, samples.n_nodes,
        samples.n_draws, samples.loglik.size,
    )
    with open(path, "wb") as fh:
        fh.write(head)
        for arr in (samples.V, samples.mu, samples.sigma, samples.loglik):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_posterior(path) -> PosteriorSamples:
    data = open(path, "rb").read()
    fmt = "<4sIdddQQQQddQQQ"
    size = struct.calcsize(fmt)
    if len(data) < size or data[:4] != MAGIC:
        raise DataError(f"{path}: bad magic, not an MSBP file")
    (_, version, alpha, a, b, iters, burn, thin, seed, y_mean, y_sd,
     m, d, nt) = struct.unpack_from(fmt, data)
    if version != VERSION:
        raise DataError(f"{path}: posterior format version {version}, this build reads {VERSION}")
    need = size + 8 * (3 * m * d + nt)
    if len(data) != need:
        raise DataError(f"{path}: expected {need} bytes, found {len(data)}")
    off = size
    arrs = []
    for cnt, shape in ((m * d, (d, m)),) * 3 + ((nt, (nt,)),):
        arrs.append(np.frombuffer(data, "<f8", cnt, off).astype(np.float64).reshape(shape))
        off += 8 * cnt
    return PosteriorSamples(arrs[0], arrs[1], arrs[2], arrs[3],
                            Hyperparams(alpha, a, b, int(iters), int(burn)),
                            int(thin), int(seed), y_mean, y_sd)
