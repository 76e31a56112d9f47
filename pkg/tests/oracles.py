"""Independent reference implementations used to cross-check the library.

Everything here is deliberately written in the most literal way possible
(python loops, brute-force enumeration, numerical integration) so that a bug
in the library's vectorized code cannot hide in a shared formula.
"""

from __future__ import annotations

from collections import deque

import numpy as np
from scipy.integrate import quad


def bfs_path_length(num_nodes: int, edges) -> float:
    """Mean directed shortest-path distance over ordered pairs, 0 when
    unreachable, by per-source breadth-first search."""
    if num_nodes < 2:
        return 0.0
    succ = {i: [] for i in range(num_nodes)}
    for s, t in edges:
        succ[s].append(t)
    total = 0
    for source in range(num_nodes):
        dist = {source: 0}
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in succ[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        total += sum(d for node, d in dist.items() if node != source)
    return total / (num_nodes * (num_nodes - 1))


def triple_count_clustering(num_nodes: int, edges) -> float:
    """Global transitivity by explicit triangle and triple enumeration on the
    undirected projection."""
    adj = [[False] * num_nodes for _ in range(num_nodes)]
    for s, t in edges:
        adj[s][t] = True
        adj[t][s] = True
    triangles = 0
    for i in range(num_nodes):
        for j in range(i + 1, num_nodes):
            if not adj[i][j]:
                continue
            for k in range(j + 1, num_nodes):
                if adj[i][k] and adj[j][k]:
                    triangles += 1
    triples = 0
    for i in range(num_nodes):
        deg = sum(adj[i])
        triples += deg * (deg - 1) // 2
    if triples == 0:
        return 0.0
    return 3.0 * triangles / triples


def quadrature_kl(mu: float, log_var: float) -> float:
    """KL(N(mu, exp(log_var)) || N(0, 1)) for one dimension by numerical
    integration of q(x) log(q(x)/p(x))."""
    var = np.exp(log_var)
    sd = np.sqrt(var)

    def integrand(x: float) -> float:
        log_q = -0.5 * np.log(2 * np.pi * var) - (x - mu) ** 2 / (2 * var)
        log_p = -0.5 * np.log(2 * np.pi) - x**2 / 2
        return np.exp(log_q) * (log_q - log_p)

    lo = mu - 12 * sd
    hi = mu + 12 * sd
    value, _ = quad(integrand, lo, hi, limit=200)
    return value


def mc_expected_improvement(
    mu: float, var: float, best: float, n_samples: int, rng: np.random.Generator
) -> float:
    """Monte-Carlo E[max(f - best, 0)] for f ~ N(mu, var)."""
    samples = mu + np.sqrt(var) * rng.standard_normal(n_samples)
    return float(np.mean(np.maximum(samples - best, 0.0)))


def fd_gradient(fn, x: np.ndarray, epsilon: float = 1e-6) -> np.ndarray:
    """Plain central-difference gradient of a scalar function of an array."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + epsilon
        f_plus = fn(x)
        flat[i] = saved - epsilon
        f_minus = fn(x)
        flat[i] = saved
        gflat[i] = (f_plus - f_minus) / (2 * epsilon)
    return grad
