"""Linear graph propagation over the normalized adjacency.

The encoder's only parameters are the node embeddings theta. Propagation is
repeated sparse multiplication by the normalized adjacency; the final
embedding is a convex combination of the layer outputs. Because the whole map
is linear in theta, its adjoint is evaluated in closed form rather than on
the autodiff tape.
"""

from __future__ import annotations

import numpy as np

from scone.data import NormalizedAdjacency


def uniform_alphas(n_layers: int) -> np.ndarray:
    return np.full(n_layers + 1, 1.0 / (n_layers + 1))


def _check_alphas(alphas, n_layers: int) -> np.ndarray:
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (n_layers + 1,):
        raise ValueError(f"need {n_layers + 1} layer weights, got shape {alphas.shape}")
    if abs(alphas.sum() - 1.0) > 1e-9:
        raise ValueError(f"layer weights must sum to 1, got {alphas.sum()!r}")
    return alphas


def propagate(theta: np.ndarray, adjacency: NormalizedAdjacency, n_layers: int):
    """Return [E0, E1, ..., EL] with E_{l+1} = A_norm @ E_l and E0 = theta."""
    if n_layers < 0:
        raise ValueError(f"n_layers must be >= 0, got {n_layers}")
    if theta.shape[0] != adjacency.node_count:
        raise ValueError(f"theta has {theta.shape[0]} rows but the adjacency "
                         f"covers {adjacency.node_count} nodes")
    layers = [theta]
    for _ in range(n_layers):
        layers.append(adjacency.matrix @ layers[-1])
    return layers


def finalize(layer_embeddings, alphas=None) -> np.ndarray:
    n_layers = len(layer_embeddings) - 1
    if alphas is None:
        alphas = uniform_alphas(n_layers)
    alphas = _check_alphas(alphas, n_layers)
    out = np.zeros_like(layer_embeddings[0])
    for a, layer in zip(alphas, layer_embeddings):
        # float() keeps float32 layers from being promoted by the f64 weight
        out += float(a) * layer
    return out


def backward_through_propagation(grad_final: np.ndarray,
                                 adjacency: NormalizedAdjacency,
                                 alphas) -> np.ndarray:
    """Adjoint of finalize(propagate(theta)): grad_theta = sum_l alpha_l A^l g.

    A_norm is symmetric, so the transposed propagation reuses the same matrix;
    the sum is evaluated Horner-style with L sparse products.
    """
    n_layers = len(alphas) - 1
    alphas = _check_alphas(alphas, n_layers)
    acc = float(alphas[n_layers]) * grad_final
    for l in range(n_layers - 1, -1, -1):
        acc = adjacency.matrix @ acc + float(alphas[l]) * grad_final
    return acc


class GraphEncoder:
    """Embedding table plus the propagation wiring for one dataset."""

    def __init__(self, node_count: int, embed_dim: int = 64, n_layers: int = 2,
                 alphas=None, init_std: float = 0.1, rng=None, dtype=np.float32):
        self.node_count = node_count
        self.embed_dim = embed_dim
        self.n_layers = n_layers
        self.alphas = (uniform_alphas(n_layers) if alphas is None
                       else _check_alphas(alphas, n_layers))
        if rng is None:
            rng = np.random.default_rng()
        self.theta = rng.normal(0.0, init_std,
                                size=(node_count, embed_dim)).astype(dtype)

    def layer_embeddings(self, adjacency: NormalizedAdjacency):
        return propagate(self.theta, adjacency, self.n_layers)

    def final_embeddings(self, adjacency: NormalizedAdjacency) -> np.ndarray:
        return finalize(self.layer_embeddings(adjacency), self.alphas)

    def grad_theta(self, grad_final: np.ndarray,
                   adjacency: NormalizedAdjacency) -> np.ndarray:
        return backward_through_propagation(grad_final, adjacency, self.alphas)
