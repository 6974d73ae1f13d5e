"""Ranking and contrastive losses on the autodiff tape.

Both losses take embedding rows as ``Tensor`` leaves; gradients w.r.t. those
rows come out of ``backward()`` and are scattered back through the encoder by
the trainer.
"""

from __future__ import annotations

import numpy as np

from scone import autodiff as ad
from scone.autodiff import Tensor


def bpr_loss(u_emb: Tensor, pos_emb: Tensor, neg_emb: Tensor,
             lambda2: float = 0.0, theta_batch: Tensor | None = None):
    """Pairwise ranking loss -ln sigmoid(pos_score - neg_score), mean over
    triplets, plus lambda2 times the squared norm of the touched initial
    embeddings (mean per triplet).

    Returns (total, rank_term, l2_term) where total = rank + lambda2 * l2.
    """
    pos_score = (u_emb * pos_emb).sum(axis=1)
    neg_score = (u_emb * neg_emb).sum(axis=1)
    # -ln sigmoid(x) = softplus(-x)
    rank = ad.softplus(neg_score - pos_score).mean()
    if lambda2 > 0.0 and theta_batch is not None:
        b = u_emb.data.shape[0]
        l2 = (theta_batch * theta_batch).sum() * (1.0 / b)
        total = rank + l2 * lambda2
    else:
        l2 = None
        total = rank
    return total, rank, l2


def cosine_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit norm; zero-norm rows are rejected."""
    norms_sq = (x * x).sum(axis=1, keepdims=True)
    if np.any(norms_sq.data < eps):
        raise ValueError("zero-norm row: cosine similarity undefined")
    return x / ad.sqrt(norms_sq)


def infonce_loss(views_a: Tensor, views_b: Tensor, tau: float) -> Tensor:
    """Contrastive loss between two aligned view batches.

    For each row i, the positive is (a_i, b_i) and every other b_j in the
    batch is a negative; similarities are cosine over temperature tau. The
    result is the sum over rows, not the mean.
    """
    if views_a.data.shape != views_b.data.shape:
        raise ValueError(f"view batches must align, got {views_a.data.shape} "
                         f"vs {views_b.data.shape}")
    if views_a.data.ndim != 2:
        raise ValueError("views must be [B, D] matrices")
    a = cosine_rows(views_a)
    b = cosine_rows(views_b)
    sim = (a @ b.T) * (1.0 / tau)            # [B, B]
    pos = (a * b).sum(axis=1) * (1.0 / tau)  # diagonal of sim
    return (ad.logsumexp(sim, axis=1) - pos).sum()
