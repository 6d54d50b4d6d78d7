import numpy as np
import pytest

import conceptgcn as cg
from conceptgcn.concept import ConceptParams, build_conceptual_graph, kernel_weight
from conceptgcn.errors import ConfigError
from conceptgcn.linalg import DenseMatrix
from conceptgcn.stage1 import SoftPrediction


def random_soft(n, c, rng):
    raw = rng.random((n, c)) + 1e-3
    return SoftPrediction(DenseMatrix(raw / raw.sum(axis=1, keepdims=True)))


def brute_force_neighbor_sets(arr: np.ndarray, k: int):
    """Oracle: all-pairs distances, sorted by (distance, index)."""
    n = arr.shape[0]
    sets = []
    for i in range(n):
        d2 = [(float(np.sum((arr[i] - arr[j]) ** 2)), j) for j in range(n) if j != i]
        d2.sort()
        sets.append(frozenset(j for _, j in d2[:k]))
    return sets


class TestKernelWeight:
    def test_equal_vectors_give_one(self):
        assert kernel_weight([0.2, 0.8], [0.2, 0.8], 2.0) == 1.0

    def test_closed_form_value(self):
        # squared distance 8 with sigma 2 gives exp(-1)
        p_i = np.array([2.0, 0.0])
        p_j = np.array([0.0, 2.0])
        got = kernel_weight(p_i, p_j, 2.0)
        assert abs(got - np.exp(-1.0)) < 1e-12
        assert abs(got - 0.367879) < 1e-6

    def test_symmetric_exactly(self, rng):
        a, b = rng.random(5), rng.random(5)
        assert kernel_weight(a, b, 1.7) == kernel_weight(b, a, 1.7)

    def test_bounded_in_unit_interval(self, rng):
        for _ in range(20):
            a, b = rng.random(4), rng.random(4)
            w = kernel_weight(a, b, 0.5)
            assert 0.0 < w <= 1.0

    def test_sigma_must_be_positive(self):
        with pytest.raises(ConfigError):
            kernel_weight([1.0], [0.0], 0.0)
        with pytest.raises(ConfigError):
            kernel_weight([1.0], [0.0], -2.0)


class TestConceptParams:
    def test_neighbor_count_from_table_values(self):
        assert ConceptParams(2.0, 0.33, 40).k == 13
        assert ConceptParams(4.0, 0.56, 100).k == 56
        assert ConceptParams(6.0, 0.75, 150).k == 113

    def test_at_least_one_neighbor(self):
        assert ConceptParams(1.0, 0.01, 10).k == 1

    def test_validation(self):
        with pytest.raises(ConfigError):
            ConceptParams(0.0, 0.5, 10)
        with pytest.raises(ConfigError):
            ConceptParams(1.0, 0.0, 10)
        with pytest.raises(ConfigError):
            ConceptParams(1.0, 1.5, 10)
        with pytest.raises(ConfigError):
            ConceptParams(1.0, 0.5, 10, alpha=1.5)


class TestBuildConceptualGraph:
    def test_three_node_one_hot_example(self):
        # two identical one-hot rows pair up with weight 1; the third links
        # to the lowest-index node among its ties with weight exp(-1/sigma^2)
        sigma = 2.0
        p = SoftPrediction(DenseMatrix([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
        params = ConceptParams(sigma, 0.1, 10, include_original_edges=False)  # k=1
        out = build_conceptual_graph(p, params)
        dense = out.W.to_dense().array
        assert dense[0, 1] == 1.0 and dense[1, 0] == 1.0
        expected = np.exp(-1.0 / sigma ** 2)
        assert abs(dense[2, 0] - expected) < 1e-12
        assert dense[2, 1] == 0.0
        assert np.all(np.diag(dense) == 1.0)

    def test_refuses_complete_graph(self, rng):
        p = random_soft(5, 3, rng)
        with pytest.raises(ConfigError):
            build_conceptual_graph(p, ConceptParams(1.0, 1.0, 10))  # k=10 >= n=5

    def test_neighbor_sets_match_brute_force_oracle(self, rng):
        for trial in range(3):
            n = int(rng.integers(40, 150))
            p = random_soft(n, 4, rng)
            k = int(rng.integers(2, 8))
            params = ConceptParams(1.5, k / 10.0, 10, include_original_edges=False)
            assert params.k == k
            out = build_conceptual_graph(p, params)
            oracle = brute_force_neighbor_sets(p.P.array, k)
            dense = out.W.to_dense().array
            for i in range(n):
                linked = set(np.flatnonzero(dense[i] > 0)) - {i}
                # symmetrization only adds reverse edges, never removes
                assert oracle[i].issubset(linked)
            # directed pre-symmetrization edges: every (i, j) with j in oracle set
            directed_ok = sum(1 for i in range(n) for j in oracle[i] if dense[i, j] > 0)
            assert directed_ok == n * k

    def test_symmetric_with_unit_diagonal(self, rng):
        p = random_soft(80, 3, rng)
        out = build_conceptual_graph(p, ConceptParams(2.0, 0.33, 40))
        dense = out.W.to_dense().array
        assert np.max(np.abs(dense - dense.T)) < 1e-12
        assert np.all(np.diag(dense) == 1.0)

    def test_sigma_monotonicity_same_neighbors(self, rng):
        p = random_soft(50, 3, rng)
        small = build_conceptual_graph(p, ConceptParams(1.0, 0.3, 20, include_original_edges=False))
        large = build_conceptual_graph(p, ConceptParams(3.0, 0.3, 20, include_original_edges=False))
        a, b = small.W.to_dense().array, large.W.to_dense().array
        assert np.array_equal(a > 0, b > 0)  # identical structure
        assert np.all(b[a > 0] >= a[a > 0] - 1e-15)

    def test_permutation_equivariance(self, rng):
        p = random_soft(40, 3, rng)
        params = ConceptParams(2.0, 0.25, 20, include_original_edges=False)
        base = build_conceptual_graph(p, params).W.to_dense().array

        perm = rng.permutation(40)
        permuted = SoftPrediction(DenseMatrix(p.P.array[perm]))
        shuffled = build_conceptual_graph(permuted, params).W.to_dense().array
        restored = shuffled[np.argsort(perm)][:, np.argsort(perm)]
        assert np.allclose(restored, base, atol=1e-15)

    def test_mixing_with_original_edges(self, rng):
        g = cg.make_synthetic_graph(n=40, m=8, c=3, seed=0)
        p = random_soft(40, 3, rng)
        mixed = build_conceptual_graph(
            p, ConceptParams(2.0, 0.25, 20, include_original_edges=True, alpha=0.5),
            original=g.adjacency,
        )
        pure = build_conceptual_graph(
            p, ConceptParams(2.0, 0.25, 20, include_original_edges=False),
        )
        assert np.array_equal(mixed.W.to_dense().array, pure.W.to_dense().array)
        # the propagation matrix must pick up original-only edges
        orig = g.adjacency.to_dense().array
        mixed_norm = mixed.normalized.to_dense().array
        pure_norm = pure.normalized.to_dense().array
        extra = (orig > 0) & (pure.W.to_dense().array == 0)
        assert np.any(extra)
        assert np.all(mixed_norm[extra] > 0)
        assert np.any(pure_norm[extra] == 0)

    def test_normalized_is_symmetric(self, rng):
        g = cg.make_synthetic_graph(n=30, m=6, c=3, seed=1)
        p = random_soft(30, 3, rng)
        out = build_conceptual_graph(p, ConceptParams(2.0, 0.2, 20), original=g.adjacency)
        assert out.normalized.is_symmetric()

    def test_accepts_dense_matrix_and_validates(self, rng):
        arr = rng.random((10, 3))
        with pytest.raises(Exception):
            build_conceptual_graph(DenseMatrix(arr), ConceptParams(1.0, 0.2, 10))
