"""Synthetic interaction corpora with planted structure.

Users and items carry hidden cluster labels; a user favors items of the
matching cluster by a multiplicative affinity on top of a global Zipf
popularity law. Per-user activity is skewed and clamped, so the long tail
of sparse users that recommenders actually face is present. The defaults
give a classic small-benchmark shape: 943 users, 1682 items, exactly
100K interactions.
"""

from __future__ import annotations

import numpy as np


def planted_interactions(n_users: int = 943, n_items: int = 1682,
                         n_interactions: int = 100_000, n_clusters: int = 8,
                         affinity: float = 12.0,
                         popularity_exponent: float = 0.95,
                         activity_exponent: float = 0.6,
                         interactions_per_user: tuple = (12, 400),
                         seed: int = 0):
    """Raw (user, item) string pairs with planted cluster structure.

    ``affinity`` multiplies the popularity weight of items inside the
    user's own cluster. Items are drawn per user without replacement, so
    the pair list is duplicate-free, and per-user counts are nudged within
    the ``interactions_per_user`` clamp until the total lands exactly on
    ``n_interactions``.
    """
    lo, hi = interactions_per_user
    hi = min(hi, n_items)   # cannot draw more distinct items than exist
    if lo > hi or lo * n_users > n_interactions or hi * n_users < n_interactions:
        raise ValueError("interactions_per_user clamp cannot reach the total")
    rng = np.random.default_rng(seed)
    user_cluster = rng.integers(0, n_clusters, size=n_users)
    item_cluster = rng.integers(0, n_clusters, size=n_items)
    pop = 1.0 / np.arange(1, n_items + 1) ** popularity_exponent
    pop = pop[rng.permutation(n_items)]
    act = 1.0 / np.arange(1, n_users + 1) ** activity_exponent
    act = act[rng.permutation(n_users)]
    counts = np.maximum(lo, np.round(act / act.sum()
                                     * n_interactions).astype(int))
    counts = np.minimum(counts, hi)
    # nudge the largest users until the total lands exactly on target
    diff = counts.sum() - n_interactions
    order = np.argsort(-counts)
    idx = 0
    while diff != 0:
        u = order[idx % n_users]
        if diff > 0 and counts[u] > lo:
            counts[u] -= 1
            diff -= 1
        elif diff < 0 and counts[u] < hi:
            counts[u] += 1
            diff += 1
        idx += 1
    edges = []
    for u in range(n_users):
        w = pop * np.where(item_cluster == user_cluster[u], affinity, 1.0)
        w = w / w.sum()
        for i in rng.choice(n_items, size=counts[u], replace=False, p=w):
            edges.append((f"u{u}", f"i{i}"))
    return edges


def write_interactions(pairs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in pairs:
            fh.write(f"{u}\t{i}\n")
