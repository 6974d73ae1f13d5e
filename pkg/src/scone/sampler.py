"""Stochastic sampling on top of the score network.

Two generative procedures drive training: contrastive views (perturb an
embedding to an intermediate step, then reverse-sample back to step 0) and
hard negatives (run the same reverse walk for a positive/negative pair while
blending the positive trajectory into the negative one before every step).
All functions are numpy-in/numpy-out and take an explicit RNG; none of them
builds an autodiff tape.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from scone.config import SdeSchedule
from scone.score_model import ScoreNet


@dataclasses.dataclass
class ViewPair:
    view_a: np.ndarray   # e' = e(N), the forward-perturbed embedding
    view_b: np.ndarray   # e'' = e_hat(0), the reverse-generated embedding
    noise: np.ndarray | None = None   # z used by the forward perturbation


def _as_batch(e):
    e = np.asarray(e)
    if e.ndim == 1:
        return e[None, :], True
    if e.ndim == 2:
        return e, False
    raise ValueError(f"expected a vector or [B, D] batch, got shape {e.shape}")


def perturb(e0: np.ndarray, schedule: SdeSchedule, step: int, rng,
            return_noise: bool = False):
    """Forward kernel draw: e(n) = e0 + sqrt(sigma^2(n/T) - sigma^2(0)) * z."""
    if not (1 <= step <= schedule.total_steps):
        raise IndexError(f"perturbation step {step} outside [1, {schedule.total_steps}]")
    e, squeeze = _as_batch(e0)
    std = float(np.sqrt(schedule.perturbation_var(step)))
    z = rng.standard_normal(e.shape, dtype=e.dtype if e.dtype == np.float32 else np.float64)
    out = e + std * z
    if squeeze:
        out, z = out[0], z[0]
    return (out, z) if return_noise else out


def reverse_step(e_next: np.ndarray, i: int, net: ScoreNet,
                 schedule: SdeSchedule, rng) -> np.ndarray:
    """One reverse-diffusion update from grid step i+1 down to step i.

    e(i) = e(i+1) + (sigma^2(i+1) - sigma^2(i)) * S_phi(e(i+1), sigma(i+1))
           + sqrt(sigma^2(i+1) - sigma^2(i)) * z
    """
    if i < 0 or i + 1 > schedule.total_steps:
        raise IndexError(f"reverse step {i} outside [0, {schedule.total_steps - 1}]")
    e, squeeze = _as_batch(e_next)
    beta = float(schedule.step_var(i))
    sigma_next = schedule.sigma_at(i + 1)
    drift = net.score(e, sigma_next)
    z = rng.standard_normal(e.shape, dtype=e.dtype if e.dtype == np.float32 else np.float64)
    out = e + beta * drift + np.sqrt(beta) * z
    return out[0] if squeeze else out


def reverse_sample(e_start: np.ndarray, net: ScoreNet, schedule: SdeSchedule,
                   rng, n_steps: int | None = None) -> np.ndarray:
    """Walk the reverse chain from grid step n_steps down to 0."""
    n = schedule.sampling_steps if n_steps is None else n_steps
    e = np.asarray(e_start)
    for i in range(n - 1, -1, -1):
        e = reverse_step(e, i, net, schedule, rng)
    return e


def generate_views(e0: np.ndarray, net: ScoreNet, schedule: SdeSchedule, rng,
                   n_steps: int | None = None, return_noise: bool = False) -> ViewPair:
    """Contrastive view pair for each row of e0.

    view_a is the forward perturbation to step N; view_b reverse-samples from
    view_a back to step 0. The walk is stochastic on purpose: view_b lands on
    another plausible embedding near e0, not on e0 itself. n_steps = 0
    degenerates to (e0, e0).
    """
    n = schedule.sampling_steps if n_steps is None else n_steps
    if n == 0:
        e = np.asarray(e0)
        return ViewPair(view_a=e.copy(), view_b=e.copy(),
                        noise=np.zeros_like(e) if return_noise else None)
    view_a, z = perturb(e0, schedule, n, rng, return_noise=True)
    view_b = reverse_sample(view_a, net, schedule, rng, n_steps=n)
    return ViewPair(view_a=view_a, view_b=view_b,
                    noise=z if return_noise else None)


def generate_hard_negatives(e_pos: np.ndarray, e_neg: np.ndarray, w: float,
                            net: ScoreNet, schedule: SdeSchedule, rng) -> np.ndarray:
    """Reverse-generate negatives with the positive trajectory injected.

    Both embeddings are perturbed to step N. Before every reverse step the
    negative track is blended toward the positive one,
    neg <- w * neg + (1 - w) * pos, then both tracks go through the score
    network as one batch (the network is per-row, so stacking along the batch
    axis realizes the joint update) and are split back. Returns the negative
    track at step 0.
    """
    if not (0.0 <= w <= 1.0):
        raise ValueError(f"injection weight w must lie in [0, 1], got {w}")
    pos, squeeze = _as_batch(e_pos)
    neg, squeeze_n = _as_batch(e_neg)
    if pos.shape != neg.shape:
        raise ValueError(f"positive and negative batches must align, "
                         f"got {pos.shape} vs {neg.shape}")
    squeeze = squeeze and squeeze_n
    n = schedule.sampling_steps
    b = pos.shape[0]
    pos = perturb(pos, schedule, n, rng)
    neg = perturb(neg, schedule, n, rng)
    for i in range(n - 1, -1, -1):
        neg = w * neg + (1.0 - w) * pos
        stacked = np.concatenate([pos, neg], axis=0)
        stacked = reverse_step(stacked, i, net, schedule, rng)
        pos, neg = stacked[:b], stacked[b:]
    return neg[0] if squeeze else neg
