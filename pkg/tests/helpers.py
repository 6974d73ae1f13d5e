"""Shared numerical oracles for the test suite.

The finite-difference comparator is the independent check used against every
analytic gradient in the package; the energy-distance permutation test backs
the distributional-equivalence checks.
"""

from __future__ import annotations

import numpy as np


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function at ``x`` (float64)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def relative_grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max_i |a_i - n_i| / max(1e-8, |a_i| + |n_i|), a scale-free comparison."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(1e-8, np.abs(a) + np.abs(n))
    return float(np.max(np.abs(a - n) / denom))


def pairwise_dists(a: np.ndarray, b: np.ndarray, block: int = 2048) -> np.ndarray:
    """Euclidean distance matrix in float32, computed in row blocks."""
    a = np.ascontiguousarray(a, dtype=np.float32)
    b = np.ascontiguousarray(b, dtype=np.float32)
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float32)
    bb = (b * b).sum(axis=1)
    for lo in range(0, a.shape[0], block):
        hi = min(lo + block, a.shape[0])
        chunk = a[lo:hi]
        sq = (chunk * chunk).sum(axis=1)[:, None] + bb[None, :] - 2.0 * (chunk @ b.T)
        np.maximum(sq, 0.0, out=sq)
        out[lo:hi] = np.sqrt(sq)
    return out


def energy_distance_pvalue(x: np.ndarray, y: np.ndarray, n_perm: int = 99,
                           seed: int = 0) -> float:
    """Permutation p-value for the two-sample energy-distance statistic.

    H0: x and y are draws from the same distribution. The pooled distance
    matrix is computed once; each permutation re-evaluates the statistic via
    indicator-vector quadratic forms, so the cost per permutation is one
    matvec. Returns (1 + #{perm stat >= observed}) / (1 + n_perm).
    """
    n, m = x.shape[0], y.shape[0]
    pooled = np.concatenate([x, y], axis=0)
    d = pairwise_dists(pooled, pooled)

    def stat(mask_x: np.ndarray) -> float:
        # mask_x: boolean, True marks the x-sample rows
        v = mask_x.astype(np.float32)
        w = 1.0 - v
        sxx = v @ (d @ v)
        syy = w @ (d @ w)
        sxy = v @ (d @ w)
        nn = v.sum()
        mm = w.sum()
        return float(2.0 * sxy / (nn * mm) - sxx / (nn * nn) - syy / (mm * mm))

    base_mask = np.zeros(n + m, dtype=bool)
    base_mask[:n] = True
    observed = stat(base_mask)
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_perm):
        perm = rng.permutation(n + m)
        mask = np.zeros(n + m, dtype=bool)
        mask[perm[:n]] = True
        if stat(mask) >= observed:
            hits += 1
    return (1.0 + hits) / (1.0 + n_perm)
