"""Noise-conditional score network and its denoising training objective.

The network maps a noisy embedding e(t) and the noise level sigma(t) to an
estimate of the perturbation-kernel score. Architecture: an input projection,
one encoding block and one decoding block (each a two-layer MLP with the time
embedding added inside), a skip connection by feature concatenation, and an
output projection back to the embedding dimension.
"""

from __future__ import annotations

import numpy as np

from scone import autodiff as ad
from scone.autodiff import Tensor
from scone.config import SdeSchedule


def sinusoidal_embedding(values, dim: int = 64) -> np.ndarray:
    """Classic sin/cos positional features of a (batch of) scalar(s).

    out[.., 2k] = sin(x * w_k), out[.., 2k+1] = cos(x * w_k),
    w_k = 10000^(-2k/dim).
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    x = np.atleast_1d(np.asarray(values, dtype=np.float64))
    k = np.arange(dim // 2, dtype=np.float64)
    freqs = np.power(10000.0, -2.0 * k / dim)
    angles = x[:, None] * freqs[None, :]
    out = np.empty((x.shape[0], dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


class ScoreNet:
    """S_phi(e(t), sigma(t)) with trainable parameters held as autodiff leaves.

    ``hidden`` is the width of the narrow layers h0/h3, ``wide`` of h1/h2.
    The defaults (64/128) keep the encoder/decoder symmetric.
    """

    def __init__(self, embed_dim: int = 64, hidden: int = 64, wide: int = 128,
                 time_dim: int = 64, rng=None, dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng()
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.wide = wide
        self.time_dim = time_dim
        self.dtype = np.dtype(dtype)

        def linear(name, fan_in, fan_out):
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in),
                           size=(fan_in, fan_out)).astype(dtype)
            b = np.zeros(fan_out, dtype=dtype)
            self.params[name + "_w"] = Tensor(w, requires_grad=True)
            self.params[name + "_b"] = Tensor(b, requires_grad=True)

        self.params: dict = {}
        linear("temb1", time_dim, time_dim)
        linear("temb2", time_dim, time_dim)
        linear("fc0", embed_dim, hidden)
        linear("fc1a", hidden, wide)
        linear("fc1t", time_dim, wide)
        linear("fc1b", wide, wide)
        linear("fc2", wide, wide)
        linear("fc3a", wide + wide, hidden)
        linear("fc3t", time_dim, hidden)
        linear("fc3b", hidden, hidden)
        linear("fc4", hidden, embed_dim)

    def _lin(self, name, x: Tensor) -> Tensor:
        return x @ self.params[name + "_w"] + self.params[name + "_b"]

    def time_embedding(self, sigmas) -> Tensor:
        """MLP on sinusoidal features of the noise level; one row per sigma."""
        emb = sinusoidal_embedding(sigmas, self.time_dim).astype(self.dtype)
        t = Tensor(emb)
        return self._lin("temb2", ad.tanh(self._lin("temb1", t)))

    def forward(self, e_t, sigmas) -> Tensor:
        """Score estimate for rows of e_t at noise level(s) sigmas.

        ``sigmas`` may be a scalar (shared level, embedded once and broadcast)
        or a length-B array of per-row levels.
        """
        x = e_t if isinstance(e_t, Tensor) else Tensor(np.asarray(e_t, dtype=self.dtype))
        if x.data.ndim != 2 or x.data.shape[1] != self.embed_dim:
            raise ValueError(f"expected input of shape [B, {self.embed_dim}], "
                             f"got {x.data.shape}")
        t = self.time_embedding(sigmas)
        h0 = self._lin("fc0", x)
        h1 = self._lin("fc1b", ad.tanh(self._lin("fc1a", h0)) + self._lin("fc1t", t))
        h2 = ad.tanh(self._lin("fc2", h1))
        h3 = self._lin("fc3b",
                       ad.tanh(self._lin("fc3a", ad.concat([h2, h1], axis=1)))
                       + self._lin("fc3t", t))
        return self._lin("fc4", h3)

    def score(self, e_t: np.ndarray, sigmas) -> np.ndarray:
        """Tape-free forward pass for samplers and evaluation."""
        with ad.no_grad():
            return self.forward(e_t, sigmas).data

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        for name, p in self.params.items():
            if name not in state:
                raise KeyError(f"missing parameter {name!r} in checkpoint")
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {name!r}: checkpoint shape {arr.shape} "
                                 f"does not match model shape {p.data.shape}")
            p.data = arr.copy()


def dsm_loss(net: ScoreNet, e0: np.ndarray, schedule: SdeSchedule, rng):
    """Denoising score-matching loss over a batch of clean embeddings.

    Each row draws a step n uniform in {1..T} and a Gaussian perturbation;
    the regression target is the kernel score -(e_t - e0)/var(n) and each
    term is weighted by var(n) = sigma^2(n/T) - sigma^2(0), which makes the
    weighted target norm unit-scale per coordinate. Returns the scalar loss
    and a fresh gradient dict for the network parameters.
    """
    e0 = np.asarray(e0, dtype=net.dtype)
    if e0.ndim != 2 or len(e0) == 0:
        raise ValueError("dsm_loss needs a nonempty [B, D] batch")
    b = len(e0)
    steps = rng.integers(1, schedule.total_steps + 1, size=b)
    grid = schedule.sigma_grid
    var = (grid[steps] ** 2 - grid[0] ** 2).astype(net.dtype)
    sigmas = grid[steps]
    z = rng.standard_normal(e0.shape, dtype=net.dtype)
    std = np.sqrt(var)[:, None]
    e_t = e0 + std * z
    target = -z / std

    net.zero_grad()
    s = net.forward(Tensor(e_t), sigmas)
    diff = s - Tensor(target)
    per_row = (diff * diff).sum(axis=1) * var
    loss = per_row.mean()
    loss.backward()
    grads = {name: np.array(p.grad) for name, p in net.params.items()}
    net.zero_grad()
    return float(loss.data), grads
