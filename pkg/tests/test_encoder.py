import numpy as np
import pytest

from scone.data import build_adjacency
from scone.encoder import (GraphEncoder, backward_through_propagation,
                           finalize, propagate, uniform_alphas)
from tests.helpers import relative_grad_error
from tests.test_data import toy_dataset


def random_adjacency(n_users, n_items, n_edges, seed, dtype=np.float64):
    rng = np.random.default_rng(seed)
    pairs = set()
    while len(pairs) < n_edges:
        pairs.add((int(rng.integers(n_users)), int(rng.integers(n_items))))
    ds = toy_dataset(sorted(pairs), n_users, n_items)
    return build_adjacency(ds, dtype=dtype)


class TestUniformAlphas:
    def test_values(self):
        np.testing.assert_allclose(uniform_alphas(2), [1 / 3] * 3)
        np.testing.assert_allclose(uniform_alphas(0), [1.0])

    def test_finalize_rejects_bad_alphas(self):
        layers = [np.zeros((2, 2)), np.zeros((2, 2))]
        with pytest.raises(ValueError):
            finalize(layers, [1.0])          # wrong length
        with pytest.raises(ValueError):
            finalize(layers, [0.3, 0.3])     # does not sum to 1


class TestPropagate:
    def test_zero_layers_identity(self):
        adj = random_adjacency(3, 4, 6, seed=0)
        theta = np.random.default_rng(1).standard_normal((7, 5))
        layers = propagate(theta, adj, n_layers=0)
        assert len(layers) == 1
        np.testing.assert_array_equal(layers[0], theta)
        np.testing.assert_array_equal(finalize(layers), theta)

    def test_single_edge_swaps_embeddings(self):
        # one user, one item: each hop copies the neighbour's embedding
        adj = build_adjacency(toy_dataset([(0, 0)], 1, 1), dtype=np.float64)
        theta = np.array([[1.0, 2.0], [3.0, 4.0]])
        layers = propagate(theta, adj, n_layers=2)
        np.testing.assert_allclose(layers[1], theta[::-1])
        np.testing.assert_allclose(layers[2], theta)
        final = finalize(layers, uniform_alphas(2))
        np.testing.assert_allclose(final, (2.0 * theta + theta[::-1]) / 3.0)

    def test_linearity(self):
        adj = random_adjacency(5, 6, 12, seed=2)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((11, 4))
        y = rng.standard_normal((11, 4))
        fx = finalize(propagate(x, adj, 2))
        fy = finalize(propagate(y, adj, 2))
        fxy = finalize(propagate(2.0 * x - 0.5 * y, adj, 2))
        np.testing.assert_allclose(fxy, 2.0 * fx - 0.5 * fy, atol=1e-10)

    def test_isolated_node_loses_signal(self):
        adj = build_adjacency(toy_dataset([(0, 0)], n_users=2, n_items=1),
                              dtype=np.float64)
        theta = np.arange(6, dtype=np.float64).reshape(3, 2)
        layers = propagate(theta, adj, n_layers=1)
        np.testing.assert_array_equal(layers[1][1], 0.0)  # user 1 has no edges

    def test_shape_mismatch_rejected(self):
        adj = random_adjacency(3, 3, 4, seed=1)
        with pytest.raises(ValueError):
            propagate(np.zeros((4, 2)), adj, 1)


class TestBackwardThroughPropagation:
    def test_adjoint_identity(self):
        # <finalize(propagate(X)), G> == <X, backward(G)> for linear maps
        adj = random_adjacency(7, 9, 25, seed=4)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((16, 6))
        g = rng.standard_normal((16, 6))
        alphas = uniform_alphas(2)
        fwd = finalize(propagate(x, adj, 2), alphas)
        bwd = backward_through_propagation(g, adj, alphas)
        lhs = float(np.sum(fwd * g))
        rhs = float(np.sum(x * bwd))
        assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(lhs))

    def test_matches_finite_differences(self):
        adj = random_adjacency(4, 5, 9, seed=6)
        rng = np.random.default_rng(7)
        theta = rng.standard_normal((9, 3))
        weight = rng.standard_normal((9, 3))
        alphas = uniform_alphas(2)

        def loss(t):
            return float(np.sum(finalize(propagate(t, adj, 2), alphas) * weight))

        analytic = backward_through_propagation(weight, adj, alphas)
        eps = 1e-6
        numeric = np.zeros_like(theta)
        for idx in np.ndindex(theta.shape):
            t = theta.copy(); t[idx] += eps
            up = loss(t)
            t = theta.copy(); t[idx] -= eps
            down = loss(t)
            numeric[idx] = (up - down) / (2 * eps)
        assert relative_grad_error(analytic, numeric) <= 1e-4

    def test_three_layer_alphas(self):
        adj = random_adjacency(3, 3, 5, seed=8)
        rng = np.random.default_rng(9)
        x = rng.standard_normal((6, 4))
        g = rng.standard_normal((6, 4))
        alphas = uniform_alphas(3)
        fwd = finalize(propagate(x, adj, 3), alphas)
        bwd = backward_through_propagation(g, adj, alphas)
        assert abs(np.sum(fwd * g) - np.sum(x * bwd)) < 1e-8


class TestGraphEncoder:
    def test_init_statistics(self):
        enc = GraphEncoder(node_count=4000, embed_dim=32,
                           rng=np.random.default_rng(0))
        assert enc.theta.shape == (4000, 32)
        assert abs(float(enc.theta.mean())) < 5e-3
        assert abs(float(enc.theta.std()) - 0.1) < 5e-3

    def test_seeded_determinism(self):
        a = GraphEncoder(100, 8, rng=np.random.default_rng(3)).theta
        b = GraphEncoder(100, 8, rng=np.random.default_rng(3)).theta
        np.testing.assert_array_equal(a, b)
        c = GraphEncoder(100, 8, rng=np.random.default_rng(4)).theta
        assert not np.array_equal(a, c)

    def test_dtype_and_round_trip(self):
        enc = GraphEncoder(10, 4, rng=np.random.default_rng(0), dtype=np.float32)
        assert enc.theta.dtype == np.float32
        adj = random_adjacency(5, 5, 8, seed=0, dtype=np.float32)
        final = enc.final_embeddings(adj)
        assert final.dtype == np.float32
        assert final.shape == (10, 4)
