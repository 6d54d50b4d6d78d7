import numpy as np
import pytest

from conceptgcn.errors import ContractError, DimensionError, NumericError
from conceptgcn.linalg import DenseMatrix, SparseMatrixCSR, matmul, spmm


def naive_matmul_ascending(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Oracle: plain triple loop semantics, accumulating over k in ascending
    order with separate multiply and add roundings."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out = out + a[:, [k]] * b[[k], :]
    return out


def naive_spmm_ascending(s: SparseMatrixCSR, d: np.ndarray) -> np.ndarray:
    out = np.zeros((s.rows, d.shape[1]))
    for i in range(s.rows):
        for k in range(s.row_ptr[i], s.row_ptr[i + 1]):
            out[i] = out[i] + s.values[k] * d[s.col_idx[k]]
    return out


class TestDenseMatrix:
    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            DenseMatrix([[1.0, np.nan]])
        with pytest.raises(NumericError):
            DenseMatrix([[np.inf]])

    def test_row_major_data_view(self):
        m = DenseMatrix([[1.0, 2.0], [3.0, 4.0]])
        assert m.rows == 2 and m.cols == 2
        assert list(m.data) == [1.0, 2.0, 3.0, 4.0]

    def test_immutable(self):
        m = DenseMatrix([[1.0]])
        with pytest.raises(AttributeError):
            m.array = np.zeros((1, 1))


class TestMatmul:
    def test_identity(self):
        m = DenseMatrix([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        out = matmul(DenseMatrix.identity(3), m)
        assert np.array_equal(out.array, m.array)

    def test_hand_product(self):
        a = DenseMatrix([[1.0, 2.0], [3.0, 4.0]])
        b = DenseMatrix([[5.0], [6.0]])
        assert np.array_equal(matmul(a, b).array, [[17.0], [39.0]])

    def test_zero_annihilator(self):
        z = DenseMatrix.zeros(2, 2)
        m = DenseMatrix([[7.0, -1.0], [0.5, 2.0]])
        assert np.array_equal(matmul(z, m).array, np.zeros((2, 2)))

    def test_shape_mismatch_names_both_shapes(self):
        a = DenseMatrix.zeros(2, 3)
        b = DenseMatrix.zeros(4, 2)
        with pytest.raises(DimensionError, match=r"2x3.*4x2"):
            matmul(a, b)


class TestCSR:
    def test_round_trip_binary_exact(self, rng):
        for _ in range(10):
            dense = (rng.random((13, 9)) < 0.3).astype(np.float64)
            s = SparseMatrixCSR.from_dense(dense)
            assert np.array_equal(s.to_dense().array, dense)

    def test_no_explicit_zeros_after_construction(self):
        dense = np.array([[0.0, 1.0], [2.0, 0.0]])
        s = SparseMatrixCSR.from_dense(dense)
        assert s.nnz == 2
        assert not np.any(s.values == 0.0)

    def test_columns_sorted_within_rows(self, rng):
        coo_rows = [0, 0, 0, 1]
        coo_cols = [5, 1, 3, 2]
        s = SparseMatrixCSR.from_coo(2, 6, coo_rows, coo_cols, [1.0, 2.0, 3.0, 4.0])
        assert list(s.col_idx[:3]) == [1, 3, 5]

    def test_validate_rejects_bad_row_ptr(self):
        with pytest.raises(ContractError):
            SparseMatrixCSR(2, 2, [0, 2, 1], [0, 1], [1.0, 1.0])

    def test_validate_rejects_unsorted_columns(self):
        with pytest.raises(ContractError):
            SparseMatrixCSR(1, 3, [0, 2], [2, 0], [1.0, 1.0])

    def test_validate_rejects_explicit_zero(self):
        with pytest.raises(ContractError):
            SparseMatrixCSR(1, 2, [0, 1], [0], [0.0])

    def test_validate_rejects_out_of_range_column(self):
        with pytest.raises(ContractError):
            SparseMatrixCSR(1, 2, [0, 1], [5], [1.0])


class TestSpmm:
    def test_sparse_identity(self, rng):
        m = DenseMatrix(rng.standard_normal((5, 3)))
        out = spmm(SparseMatrixCSR.identity(5), m)
        assert np.array_equal(out.array, m.array)

    def test_densify_oracle_50x50(self, rng):
        dense = (rng.random((50, 50)) < 0.1) * rng.standard_normal((50, 50))
        s = SparseMatrixCSR.from_dense(dense)
        d = DenseMatrix(rng.standard_normal((50, 8)))
        expected = dense @ d.array
        got = spmm(s, d).array
        assert np.max(np.abs(got - expected)) < 1e-12

    def test_empty_row_gives_zero_row(self):
        s = SparseMatrixCSR.from_dense(np.array([[0.0, 0.0], [1.0, 1.0]]))
        d = DenseMatrix([[3.0], [4.0]])
        out = spmm(s, d)
        assert np.array_equal(out.array, [[0.0], [7.0]])

    def test_shape_mismatch(self):
        s = SparseMatrixCSR.identity(3)
        with pytest.raises(DimensionError):
            spmm(s, DenseMatrix.zeros(4, 2))

    def test_matches_left_to_right_oracle_bitwise(self, rng):
        # the documented summation order: ascending column within each row
        for trial in range(5):
            dense = (rng.random((20, 17)) < 0.25) * rng.standard_normal((20, 17))
            s = SparseMatrixCSR.from_dense(dense)
            d = rng.standard_normal((17, 6))
            assert np.array_equal(spmm(s, DenseMatrix(d)).array, naive_spmm_ascending(s, d))


class TestSpmmMatmulAgreement:
    def test_bitwise_on_exact_arithmetic_domain(self, rng):
        # with integer-representable entries every summation order is exact,
        # so sparse and dense paths must agree to the last bit
        for trial in range(10):
            dense = (rng.random((30, 25)) < 0.2) * rng.integers(-4, 5, (30, 25)).astype(np.float64)
            d = rng.integers(-8, 9, (25, 7)).astype(np.float64)
            s = SparseMatrixCSR.from_dense(dense)
            lhs = spmm(s, DenseMatrix(d)).array
            rhs = matmul(s.to_dense(), DenseMatrix(d)).array
            assert np.array_equal(lhs, rhs)

    def test_float_domain_within_1e12(self, rng):
        for trial in range(5):
            dense = (rng.random((40, 33)) < 0.15) * rng.standard_normal((40, 33))
            d = rng.standard_normal((33, 5))
            s = SparseMatrixCSR.from_dense(dense)
            lhs = spmm(s, DenseMatrix(d)).array
            rhs = matmul(s.to_dense(), DenseMatrix(d)).array
            assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_spmm_repeatable_bitwise(self, rng):
        dense = (rng.random((25, 25)) < 0.2) * rng.standard_normal((25, 25))
        s = SparseMatrixCSR.from_dense(dense)
        d = DenseMatrix(rng.standard_normal((25, 4)))
        assert np.array_equal(spmm(s, d).array, spmm(s, d).array)
