import numpy as np
import pytest

import conceptgcn as cg
from conceptgcn.concept import ConceptParams, ConceptualGraph, build_conceptual_graph
from conceptgcn.errors import ContractError, DimensionError
from conceptgcn.layers import GcnLayerParams
from conceptgcn.linalg import DenseMatrix, SparseMatrixCSR
from conceptgcn.stage1 import SoftPrediction
from conceptgcn.stage2 import Stage2Model, fuse_stage2, predict, stage2_forward


def identity_concept(n: int) -> ConceptualGraph:
    eye = SparseMatrixCSR.identity(n)
    return ConceptualGraph(W=eye, normalized=eye)


def soft(rows) -> SoftPrediction:
    return SoftPrediction(DenseMatrix(rows))


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    ra = np.argsort(np.argsort(a))
    rb = np.argsort(np.argsort(b))
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    return float((ra * rb).sum() / np.sqrt((ra * ra).sum() * (rb * rb).sum()))


class TestFuseStage2:
    def test_widths_add_up(self, rng):
        x = DenseMatrix(rng.standard_normal((6, 10)))
        h = DenseMatrix(rng.standard_normal((6, 4)))
        p = soft(np.full((6, 2), 0.5))
        assert fuse_stage2(x, h, p).shape == (6, 16)

    def test_slices_recover_inputs(self, rng):
        x = DenseMatrix(rng.standard_normal((4, 3)))
        h = DenseMatrix(rng.standard_normal((4, 2)))
        p = soft(np.full((4, 2), 0.5))
        fused = fuse_stage2(x, h, p).array
        assert np.array_equal(fused[:, :3], x.array)
        assert np.array_equal(fused[:, 3:5], h.array)
        assert np.array_equal(fused[:, 5:], p.P.array)

    def test_zero_width_high_features(self, rng):
        x = DenseMatrix(rng.standard_normal((4, 3)))
        h = DenseMatrix(np.zeros((4, 0)))
        p = soft(np.full((4, 2), 0.5))
        fused = fuse_stage2(x, h, p).array
        assert fused.shape == (4, 5)
        assert np.array_equal(fused[:, 3:], p.P.array)

    def test_row_mismatch(self, rng):
        x = DenseMatrix(rng.standard_normal((4, 3)))
        h = DenseMatrix(rng.standard_normal((5, 2)))
        with pytest.raises(DimensionError):
            fuse_stage2(x, h, soft(np.full((4, 2), 0.5)))

    def test_benchmark_dimension_fusion(self):
        # published dims: 1433 raw + 16 high-level + 7 classes -> 1456
        x = DenseMatrix(np.zeros((2, 1433)))
        h = DenseMatrix(np.zeros((2, 16)))
        p = soft(np.full((2, 7), 1.0 / 7.0))
        assert fuse_stage2(x, h, p).shape == (2, 1456)


class TestStage2Forward:
    def test_row_stochastic_output(self, rng):
        n, m, hidden, c = 20, 8, 6, 3
        model = Stage2Model.initialize(m + hidden + c, hidden, c, 0.2, rng)
        fused = DenseMatrix(rng.standard_normal((n, m + hidden + c)))
        out = stage2_forward(model, identity_concept(n), fused, 0.0, "eval")
        assert np.max(np.abs(out.array.sum(axis=1) - 1.0)) < 1e-9
        assert np.all(out.array >= 0.0)

    def test_eval_deterministic_bitwise(self, rng):
        n, m, hidden, c = 10, 5, 4, 3
        model = Stage2Model.initialize(m + hidden + c, hidden, c, 0.2, rng)
        fused = DenseMatrix(rng.standard_normal((n, m + hidden + c)))
        a = stage2_forward(model, identity_concept(n), fused, 0.3, "eval")
        b = stage2_forward(model, identity_concept(n), fused, 0.3, "eval")
        assert np.array_equal(a.array, b.array)

    def test_pass_through_weights_preserve_argmax(self, rng):
        # identity propagation plus hand-built weights that copy the soft
        # prediction block through both layers and the head
        n, m, hidden, c = 12, 4, 3, 3
        p_rows = rng.random((n, c)) + 0.05
        p_rows /= p_rows.sum(axis=1, keepdims=True)
        p = soft(p_rows)
        x = DenseMatrix(rng.standard_normal((n, m)))
        h_high = DenseMatrix(rng.standard_normal((n, hidden)))
        fused = fuse_stage2(x, h_high, p)

        copy_p = np.zeros((m + hidden + c, hidden))
        copy_p[m + hidden:, :c] = np.eye(c)  # hidden >= c here
        w_a = GcnLayerParams(W=DenseMatrix(copy_p), bias=DenseMatrix.zeros(1, hidden))
        w_b = GcnLayerParams(W=DenseMatrix.identity(hidden), bias=DenseMatrix.zeros(1, hidden))
        head = GcnLayerParams(W=DenseMatrix(np.eye(hidden)[:, :c] * 50.0),
                              bias=DenseMatrix.zeros(1, c))
        model = Stage2Model(gcn2_a=w_a, gcn2_b=w_b, head2=head, negative_slope=0.2)
        out = stage2_forward(model, identity_concept(n), fused, 0.0, "eval")
        assert np.array_equal(np.argmax(out.array, axis=1), np.argmax(p_rows, axis=1))
        # strong rank agreement per row, not just argmax
        corr = np.mean([spearman(out.array[i], p_rows[i]) for i in range(n)])
        assert corr > 0.9

    def test_run_on_real_concept_graph(self, rng):
        g = cg.make_synthetic_graph(n=30, m=6, c=3, seed=2)
        p_rows = rng.random((30, 3))
        p_rows /= p_rows.sum(axis=1, keepdims=True)
        concept = build_conceptual_graph(soft(p_rows), ConceptParams(2.0, 0.2, 20),
                                         original=g.adjacency)
        model = Stage2Model.initialize(6 + 4 + 3, 4, 3, 0.2, rng)
        fused = fuse_stage2(g.features, DenseMatrix(rng.standard_normal((30, 4))),
                            soft(p_rows))
        out = stage2_forward(model, concept, fused, 0.0, "eval")
        assert np.max(np.abs(out.array.sum(axis=1) - 1.0)) < 1e-9


class TestPredict:
    def test_argmax(self):
        assert list(predict(DenseMatrix([[0.1, 0.7, 0.2]]))) == [1]

    def test_tie_breaks_to_lowest_index(self):
        assert list(predict(DenseMatrix([[0.5, 0.5]]))) == [0]
        assert list(predict(DenseMatrix([[0.2, 0.4, 0.4]]))) == [1]

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            predict(DenseMatrix(np.zeros((0, 3))))

    def test_invariant_under_monotone_transforms(self, rng):
        probs = rng.random((20, 5))
        probs /= probs.sum(axis=1, keepdims=True)
        base = predict(DenseMatrix(probs))
        assert np.array_equal(base, predict(DenseMatrix(np.exp(probs))))
        assert np.array_equal(base, predict(DenseMatrix(probs * 10.0)))
