"""Seeded generators for the synthetic benchmark scenarios.

Every generator returns a :class:`SimResult`: the dataset plus the latent
truth (``eta`` per row, and the component label for the union-of-subspaces
model).  All ``sigma``-style arguments here are standard deviations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Dataset

__all__ = [
    "SimError",
    "SimResult",
    "MODELS",
    "gen_nonlinear_mixture",
    "nonlinear_mixture_density",
    "gen_swissroll",
    "sample_stiefel",
    "gen_linear_subspace",
    "gen_union_subspaces",
    "generate",
    "save_truth",
]

MODELS = ("nonlinear_mixture", "swissroll", "linear_subspace", "union_subspaces")


class SimError(ValueError):
    pass


@dataclass
class SimResult:
    data: Dataset
    eta: np.ndarray
    labels: np.ndarray | None = None
    params: dict | None = None


def gen_nonlinear_mixture(n, p=1000, mu1=-2.0, sigma1=1.0, mu2=2.0, sigma2=1.0,
                          sigma_x=0.1, c=20.0, seed=0) -> SimResult:
    """``eta = sin(U(0, c))``; every ``x_r ~ N(eta, sigma_x)``;
    ``y ~ |eta| N(mu1, sigma1) + (1 - |eta|) N(mu2, sigma2)``."""
    if min(sigma1, sigma2, sigma_x) <= 0 or c <= 0:
        raise SimError("sigma1, sigma2, sigma_x and c must be positive")
    if n < 0 or p < 1:
        raise SimError("need n >= 0 and p >= 1")
    rng = np.random.default_rng(seed)
    eta = np.sin(rng.uniform(0.0, c, size=n))
    x = eta[:, None] + sigma_x * rng.standard_normal((n, p))
    first = rng.random(n) < np.abs(eta)
    y = np.where(first, mu1 + sigma1 * rng.standard_normal(n), mu2 + sigma2 * rng.standard_normal(n))
    return SimResult(Dataset(x, y), eta, None,
                     dict(mu1=mu1, sigma1=sigma1, mu2=mu2, sigma2=sigma2, sigma_x=sigma_x, c=c))


def nonlinear_mixture_density(y, eta, mu1=-2.0, sigma1=1.0, mu2=2.0, sigma2=1.0):
    """True conditional density of the nonlinear mixture given ``eta``."""
    y = np.asarray(y, dtype=np.float64)
    w = abs(eta)

    def npdf(v, m, s):
        return np.exp(-0.5 * ((v - m) / s) ** 2) / (s * np.sqrt(2 * np.pi))

    return w * npdf(y, mu1, sigma1) + (1 - w) * npdf(y, mu2, sigma2)


def _identity(eta):
    return eta


def _unit(eta):
    return np.ones_like(eta)


def gen_swissroll(n, p=1000, mean_fn=_identity, sd_fn=_unit, seed=0) -> SimResult:
    """``eta ~ U(0, 1)``; ``x_1 = eta sin(eta)``, ``x_2 = eta cos(eta)``,
    remaining coordinates standard normal; ``y ~ N(mean_fn(eta), sd_fn(eta))``."""
    if p < 3:
        raise SimError("swissroll needs p >= 3")
    rng = np.random.default_rng(seed)
    eta = rng.uniform(0.0, 1.0, size=n)
    x = np.empty((n, p))
    x[:, 0] = eta * np.sin(eta)
    x[:, 1] = eta * np.cos(eta)
    x[:, 2:] = rng.standard_normal((n, p - 2))
    sd = np.asarray(sd_fn(eta), dtype=np.float64)
    if np.any(sd <= 0):
        raise SimError("sd_fn must be positive")
    y = mean_fn(eta) + sd * rng.standard_normal(n)
    return SimResult(Dataset(x, y), eta)


def sample_stiefel(rows: int, cols: int, rng) -> np.ndarray:
    """Haar-distributed ``rows x cols`` matrix with orthonormal columns.

    QR of a Gaussian matrix with the signs of ``diag(R)`` folded into ``Q``.
    """
    if rows < cols or cols < 1:
        raise SimError(f"need rows >= cols >= 1, got {rows} x {cols}")
    g = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(g)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def _loadings(p, d, a_theta, b_theta, rng):
    gamma = sample_stiefel(p + 1, d, rng)
    theta = b_theta / rng.gamma(a_theta, 1.0, size=d)
    return gamma * theta  # Gamma @ diag(theta)


def gen_linear_subspace(n, p, d=5, a_theta=1.0, b_theta=0.25, seed=0, omega=None) -> SimResult:
    """``z = Omega eta + N(0, I)`` with ``z = (y, x)``; ``eta ~ N_d(0, I)``.

    ``omega`` overrides the random loading matrix (shape ``(p+1) x d``).
    """
    if d < 1 or d > p + 1:
        raise SimError(f"need 1 <= d <= p+1, got d={d}, p={p}")
    rng = np.random.default_rng(seed)
    if omega is None:
        omega = _loadings(p, d, a_theta, b_theta, rng)
    omega = np.asarray(omega, dtype=np.float64)
    if omega.shape != (p + 1, d):
        raise SimError(f"omega must be {(p + 1, d)}, got {omega.shape}")
    eta = rng.standard_normal((n, d))
    z = eta @ omega.T + rng.standard_normal((n, p + 1))
    return SimResult(Dataset(z[:, 1:], z[:, 0]), eta, None, {"omega": omega})


def gen_union_subspaces(n, p, d=5, G=5, a_theta=1.0, b_theta=0.25, dir_alpha=None,
                        seed=0) -> SimResult:
    """Mixture over ``G`` linear-subspace models with ``Dirichlet`` weights."""
    if G < 1:
        raise SimError("G must be >= 1")
    if d < 1 or d > p + 1:
        raise SimError(f"need 1 <= d <= p+1, got d={d}, p={p}")
    dir_alpha = np.ones(G) if dir_alpha is None else np.asarray(dir_alpha, dtype=np.float64)
    if dir_alpha.shape != (G,) or np.any(dir_alpha <= 0):
        raise SimError("dir_alpha must hold G positive values")
    rng = np.random.default_rng(seed)
    omegas = np.stack([_loadings(p, d, a_theta, b_theta, rng) for _ in range(G)])
    weights = rng.dirichlet(dir_alpha)
    labels = rng.choice(G, size=n, p=weights)
    eta = rng.standard_normal((n, d))
    z = np.einsum("npd,nd->np", omegas[labels], eta) + rng.standard_normal((n, p + 1))
    return SimResult(Dataset(z[:, 1:], z[:, 0]), eta, labels,
                     {"omegas": omegas, "weights": weights})


def generate(model: str, n: int, p: int, seed: int = 0, **kw) -> SimResult:
    if model == "nonlinear_mixture":
        return gen_nonlinear_mixture(n, p, seed=seed, **kw)
    if model == "swissroll":
        return gen_swissroll(n, p, seed=seed, **kw)
    if model == "linear_subspace":
        return gen_linear_subspace(n, p, seed=seed, **kw)
    if model == "union_subspaces":
        return gen_union_subspaces(n, p, seed=seed, **kw)
    raise SimError(f"unknown model {model!r}; choose from {', '.join(MODELS)}")


def save_truth(sim: SimResult, path):
    """Sidecar CSV with the latent coordinates (and component label) per row."""
    eta = sim.eta[:, None] if sim.eta.ndim == 1 else sim.eta
    names = ["eta"] if eta.shape[1] == 1 else [f"eta_{k}" for k in range(eta.shape[1])]
    if sim.labels is not None:
        names.append("component")
    with open(path, "w") as fh:
        fh.write(",".join(["row"] + names) + "\n")
        for i in range(eta.shape[0]):
            cells = [str(i)] + [repr(float(e)) for e in eta[i]]
            if sim.labels is not None:
                cells.append(str(int(sim.labels[i])))
            fh.write(",".join(cells) + "\n")
