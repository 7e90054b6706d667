"""Compiled inner loops of the Gibbs sampler.

All randomness comes from numba's per-thread generator, which the callers
seed explicitly before each chain or step.
"""

import math

import numba
import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)


@numba.njit(cache=True)
def seed_rng(seed):
    np.random.seed(seed)


@numba.njit(cache=True)
def node_log_terms(V, sigma, parent, const, inv_var):
    """Per node: log path weight minus the Normal normalizer, and 1/variance."""
    log_rest = np.empty(V.shape[0])
    for node in range(V.shape[0]):
        par = parent[node]
        log_rest[node] = 0.0 if par < 0 else log_rest[par] + np.log1p(-V[par])
        const[node] = np.log(V[node]) + log_rest[node] - 0.5 * (_LOG_2PI + np.log(sigma[node]))
        inv_var[node] = 1.0 / sigma[node]


@numba.njit(cache=True)
def sample_levels(paths, lengths, y, V, mu, sigma, parent, levels, logp, const, inv_var):
    """Draw every level; return the summed log-likelihood under the entry state."""
    node_log_terms(V, sigma, parent, const, inv_var)
    n = y.shape[0]
    total = 0.0
    for i in range(n):
        L = lengths[i]
        m = -np.inf
        yi = y[i]
        for j in range(L):
            node = paths[i, j]
            r = yi - mu[node]
            lp = const[node] - 0.5 * r * r * inv_var[node]
            logp[j] = lp
            if lp > m:
                m = lp
        if not m > -np.inf:
            raise FloatingPointError("all level probabilities vanished")
        tot = 0.0
        for j in range(L):
            logp[j] = np.exp(logp[j] - m)
            tot += logp[j]
        total += m + np.log(tot)
        u = np.random.random() * tot
        acc = 0.0
        pick = L - 1
        for j in range(L):
            acc += logp[j]
            if u < acc:
                pick = j
                break
        while logp[pick] == 0.0:  # never land on a zero-probability level
            pick -= 1
        levels[i] = pick
    return total


@numba.njit(cache=True)
def sufficient_stats(paths, levels, y, parent, count, sum_y, sum_yy, below):
    count[:] = 0
    sum_y[:] = 0.0
    sum_yy[:] = 0.0
    for i in range(y.shape[0]):
        node = paths[i, levels[i]]
        count[node] += 1
        sum_y[node] += y[i]
        sum_yy[node] += y[i] * y[i]
    below[:] = count
    for node in range(parent.shape[0] - 1, 0, -1):
        below[parent[node]] += below[node]
    for node in range(parent.shape[0]):
        below[node] -= count[node]


@numba.njit(cache=True)
def sample_sticks(count, below, is_leaf, alpha, V):
    for node in range(V.shape[0]):
        if count[node] < 0 or below[node] < 0:
            raise ValueError("negative allocation count")
        if is_leaf[node]:
            V[node] = 1.0
        else:
            V[node] = np.random.beta(1.0 + count[node], alpha + below[node])


@numba.njit(cache=True)
def sample_means(count, sum_y, sigma, mu):
    for node in range(mu.shape[0]):
        c = count[node]
        nu = c / sigma[node]
        v = 1.0 / (1.0 + nu)
        ybar = sum_y[node] / c if c > 0 else 0.0
        mu[node] = v * nu * ybar + math.sqrt(v) * np.random.standard_normal()


@numba.njit(cache=True)
def sample_variances(paths, levels, y, count, mu, a, b, sigma, ss):
    ss[:] = 0.0
    for i in range(y.shape[0]):
        node = paths[i, levels[i]]
        r = y[i] - mu[node]
        ss[node] += r * r
    for node in range(sigma.shape[0]):
        shape = a + 0.5 * count[node]
        scale = b + 0.5 * ss[node]
        sigma[node] = scale / np.random.gamma(shape, 1.0)


@numba.njit(cache=True)
def run_chain(start, stop, burn_in, thin, max_draws, paths, lengths, y, parent, is_leaf,
              alpha, a, b, V, mu, sigma, levels, count, sum_y, sum_yy, below,
              loglik, out_V, out_mu, out_sigma, n_drawn):
    """Iterations ``start .. stop-1``; returns the updated retained-draw count."""
    n = y.shape[0]
    logp = np.empty(paths.shape[1] if paths.shape[1] > 0 else 1)
    ss = np.empty(V.shape[0])
    const = np.empty(V.shape[0])
    inv_var = np.empty(V.shape[0])
    for it in range(start, stop):
        ll = sample_levels(paths, lengths, y, V, mu, sigma, parent, levels, logp, const, inv_var)
        loglik[it] = ll / n if n > 0 else 0.0
        sufficient_stats(paths, levels, y, parent, count, sum_y, sum_yy, below)
        sample_sticks(count, below, is_leaf, alpha, V)
        sample_means(count, sum_y, sigma, mu)
        sample_variances(paths, levels, y, count, mu, a, b, sigma, ss)
        done = it + 1
        if done > burn_in and (done - burn_in) % thin == 0 and n_drawn < max_draws:
            out_V[n_drawn, :] = V
            out_mu[n_drawn, :] = mu
            out_sigma[n_drawn, :] = sigma
            n_drawn += 1
    return n_drawn
