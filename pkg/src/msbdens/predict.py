"""Posterior predictive densities, percentile bands and point predictions.

For a retained draw the conditional density at ``x`` is the stick-breaking
mixture of the Gaussians met on the path of ``x``::

    f(y | x) = sum_j pi_j N(y; mu_j, sigma_j)

evaluated in whitened response units and mapped back to the original units
with the Jacobian ``1 / y_sd``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gibbs import PosteriorSamples
from .ptree import PartitionTree, route

__all__ = [
    "PredictError",
    "DensityEstimate",
    "default_grid",
    "path_weight_draws",
    "mixture_density",
    "predictive_density",
    "point_predict",
    "point_predict_path",
    "single_scale_density",
]

_LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_GRID_POINTS = 512
DEFAULT_GRID_HALF_WIDTH = 6.0


class PredictError(ValueError):
    pass


@dataclass
class DensityEstimate:
    y_grid: np.ndarray
    densities: np.ndarray  # n_draws x n_grid
    p2_5: np.ndarray
    p50: np.ndarray
    p97_5: np.ndarray
    point_mean: float


def default_grid(y_mean: float, y_sd: float, n_points: int = DEFAULT_GRID_POINTS,
                 half_width: float = DEFAULT_GRID_HALF_WIDTH) -> np.ndarray:
    return np.linspace(y_mean - half_width * y_sd, y_mean + half_width * y_sd, n_points)


def _whiten_x(tree: PartitionTree, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (tree.p,):
        raise PredictError(f"expected a feature vector of length {tree.p}, got shape {x.shape}")
    return tree.whiten_stats.apply(x) if tree.whiten_stats is not None else x


def _check_samples(samples: PosteriorSamples, tree: PartitionTree):
    if samples.n_draws == 0:
        raise PredictError("no retained posterior draws")
    if samples.n_nodes != tree.n_nodes:
        raise PredictError(f"samples cover {samples.n_nodes} nodes, tree has {tree.n_nodes}")


def path_weight_draws(samples: PosteriorSamples, path) -> np.ndarray:
    """Stick-breaking weights along ``path`` for every draw (draws x len)."""
    v = samples.V[:, list(path)]
    rest = np.ones_like(v)
    rest[:, 1:] = np.cumprod(1.0 - v[:, :-1], axis=1)
    return v * rest


def mixture_density(samples: PosteriorSamples, path, y_white) -> np.ndarray:
    """Per-draw mixture density in whitened units (draws x grid)."""
    path = list(path)
    w = path_weight_draws(samples, path)
    mu = samples.mu[:, path][:, :, None]
    s = samples.sigma[:, path][:, :, None]
    yy = np.asarray(y_white, dtype=np.float64)[None, None, :]
    comp = np.exp(-0.5 * (_LOG_2PI + np.log(s) + (yy - mu) ** 2 / s))
    return np.einsum("dj,djg->dg", w, comp)


def predictive_density(tree: PartitionTree, samples: PosteriorSamples, x, y_grid=None,
                       path=None) -> DensityEstimate:
    """Posterior density curves of ``y`` at features ``x`` (original units).

    ``path`` overrides routing, e.g. to use a training row's stored path.
    """
    _check_samples(samples, tree)
    if path is None:
        path = route(tree, _whiten_x(tree, x))
    if y_grid is None:
        y_grid = default_grid(samples.y_mean, samples.y_sd)
    y_grid = np.asarray(y_grid, dtype=np.float64)
    if y_grid.ndim != 1 or y_grid.size < 2 or np.any(np.diff(y_grid) <= 0):
        raise PredictError("y_grid must be strictly increasing with at least two points")
    dens = mixture_density(samples, path, (y_grid - samples.y_mean) / samples.y_sd) / samples.y_sd
    lo, mid, hi = np.percentile(dens, [2.5, 50.0, 97.5], axis=0)
    return DensityEstimate(y_grid, dens, lo, mid, hi,
                           point_predict_path(samples, path))


def point_predict_path(samples: PosteriorSamples, path) -> float:
    w = path_weight_draws(samples, path)
    m = np.mean(np.sum(w * samples.mu[:, list(path)], axis=1))
    return float(samples.y_mean + samples.y_sd * m)


def point_predict(tree: PartitionTree, samples: PosteriorSamples, x) -> float:
    """Posterior mean of ``E[y | x]`` in original units."""
    _check_samples(samples, tree)
    return point_predict_path(samples, route(tree, _whiten_x(tree, x)))


def single_scale_density(tree: PartitionTree, samples: PosteriorSamples, x, scale: int,
                         y_grid) -> np.ndarray:
    """Per-draw density of the scale-``scale`` cell holding ``x`` alone."""
    _check_samples(samples, tree)
    path = route(tree, _whiten_x(tree, x))
    if not 0 <= scale < len(path):
        raise PredictError(f"x reaches scale {len(path) - 1}, asked for {scale}")
    node = path[scale]
    yw = (np.asarray(y_grid, dtype=np.float64) - samples.y_mean) / samples.y_sd
    mu = samples.mu[:, node][:, None]
    s = samples.sigma[:, node][:, None]
    return np.exp(-0.5 * (_LOG_2PI + np.log(s) + (yw - mu) ** 2 / s)) / samples.y_sd
