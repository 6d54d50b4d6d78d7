"""Dense and CSR sparse matrix types plus the two core products.

Everything is 64-bit float. Sparse kernels accumulate per row in ascending
column order, which makes results reproducible bit-for-bit across runs.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DimensionError, NumericError

__all__ = ["DenseMatrix", "SparseMatrixCSR", "matmul", "spmm"]


class DenseMatrix:
    """Row-major 2-D matrix of float64. Immutable by convention: the wrapped
    array is never mutated after construction; operations return new objects."""

    __slots__ = ("array",)

    def __init__(self, data, validate: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise DimensionError(f"DenseMatrix needs 2-D data, got ndim={arr.ndim}")
        arr = np.ascontiguousarray(arr)
        if validate and not np.all(np.isfinite(arr)):
            raise NumericError("DenseMatrix entries must be finite (found NaN/Inf)")
        object.__setattr__(self, "array", arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "DenseMatrix":
        # internal fast path: caller guarantees float64 / 2-D / finite
        obj = object.__new__(cls)
        object.__setattr__(obj, "array", arr)
        return obj

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "DenseMatrix":
        return cls._wrap(np.zeros((rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "DenseMatrix":
        return cls._wrap(np.eye(n))

    @property
    def rows(self) -> int:
        return self.array.shape[0]

    @property
    def cols(self) -> int:
        return self.array.shape[1]

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the entries."""
        return self.array.reshape(-1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.array.shape

    def copy(self) -> "DenseMatrix":
        return DenseMatrix._wrap(self.array.copy())

    def __setattr__(self, name, value):
        raise AttributeError("DenseMatrix is immutable")

    def __repr__(self):
        return f"DenseMatrix({self.rows}x{self.cols})"


class SparseMatrixCSR:
    """Compressed sparse row matrix with sorted, deduplicated columns and no
    stored zeros."""

    __slots__ = ("rows", "cols", "row_ptr", "col_idx", "values", "_scipy", "_transpose")

    def __init__(self, rows, cols, row_ptr, col_idx, values, validate: bool = True):
        object.__setattr__(self, "rows", int(rows))
        object.__setattr__(self, "cols", int(cols))
        object.__setattr__(self, "row_ptr", np.asarray(row_ptr, dtype=np.int64))
        object.__setattr__(self, "col_idx", np.asarray(col_idx, dtype=np.int64))
        object.__setattr__(self, "values", np.asarray(values, dtype=np.float64))
        object.__setattr__(self, "_scipy", None)
        object.__setattr__(self, "_transpose", None)
        if validate:
            self.validate()

    def validate(self) -> None:
        rp, ci, v = self.row_ptr, self.col_idx, self.values
        if rp.shape != (self.rows + 1,):
            raise ContractError(f"row_ptr length {rp.shape[0]} != rows+1 = {self.rows + 1}")
        if rp[0] != 0 or np.any(np.diff(rp) < 0):
            raise ContractError("row_ptr must start at 0 and be non-decreasing")
        nnz = int(rp[-1])
        if len(ci) != nnz or len(v) != nnz:
            raise ContractError(f"row_ptr[-1]={nnz} disagrees with col_idx/values lengths {len(ci)}/{len(v)}")
        if nnz and (ci.min() < 0 or ci.max() >= self.cols):
            raise ContractError(f"col_idx out of range [0, {self.cols})")
        # strictly increasing columns within each row
        same_row = np.repeat(np.arange(self.rows), np.diff(rp))
        if nnz > 1:
            adjacent = same_row[1:] == same_row[:-1]
            if np.any(adjacent & (np.diff(ci) <= 0)):
                raise ContractError("col_idx must be strictly increasing within each row")
        if np.any(v == 0.0):
            raise ContractError("explicit zeros are not allowed in CSR storage")
        if not np.all(np.isfinite(v)):
            raise NumericError("CSR values must be finite")

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def __setattr__(self, name, value):
        raise AttributeError("SparseMatrixCSR is immutable")

    @classmethod
    def from_scipy(cls, mat, validate: bool = False) -> "SparseMatrixCSR":
        m = mat.tocsr().copy()
        m.sum_duplicates()
        m.sort_indices()
        m.eliminate_zeros()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data, validate=validate)

    @classmethod
    def from_dense(cls, dense) -> "SparseMatrixCSR":
        arr = dense.array if isinstance(dense, DenseMatrix) else np.asarray(dense, dtype=np.float64)
        return cls.from_scipy(sp.csr_matrix(arr))

    @classmethod
    def from_coo(cls, rows: int, cols: int, row_indices, col_indices, values) -> "SparseMatrixCSR":
        """Build canonical CSR from triplets; duplicate entries are summed."""
        m = sp.coo_matrix(
            (np.asarray(values, dtype=np.float64), (row_indices, col_indices)),
            shape=(rows, cols),
        )
        return cls.from_scipy(m)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrixCSR":
        return cls.from_scipy(sp.identity(n, format="csr"))

    def to_scipy(self) -> sp.csr_matrix:
        """Zero-copy scipy view sharing this matrix's arrays."""
        cached = self._scipy
        if cached is None:
            cached = sp.csr_matrix((self.values, self.col_idx, self.row_ptr), shape=self.shape)
            object.__setattr__(self, "_scipy", cached)
        return cached

    def to_dense(self) -> DenseMatrix:
        return DenseMatrix._wrap(np.asarray(self.to_scipy().todense()))

    def transpose(self) -> "SparseMatrixCSR":
        cached = self._transpose
        if cached is None:
            cached = SparseMatrixCSR.from_scipy(self.to_scipy().T)
            object.__setattr__(self, "_transpose", cached)
        return cached

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.to_scipy().sum(axis=1)).reshape(-1)

    def is_symmetric(self) -> bool:
        s = self.to_scipy()
        return self.rows == self.cols and (s != s.T).nnz == 0

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()

    def __repr__(self):
        return f"SparseMatrixCSR({self.rows}x{self.cols}, nnz={self.nnz})"


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Dense product a @ b."""
    if a.cols != b.rows:
        raise DimensionError(
            f"matmul shape mismatch: {a.rows}x{a.cols} @ {b.rows}x{b.cols}"
        )
    return DenseMatrix._wrap(a.array @ b.array)


def spmm(s: SparseMatrixCSR, d: DenseMatrix) -> DenseMatrix:
    """Sparse-dense product s @ d.

    Each output row is accumulated over the row's stored entries in ascending
    column order, so results are deterministic and match a dense product with
    the same summation order.
    """
    if s.cols != d.rows:
        raise DimensionError(
            f"spmm shape mismatch: {s.rows}x{s.cols} @ {d.rows}x{d.cols}"
        )
    return DenseMatrix._wrap(_spmm_array(s, d.array))


try:  # direct kernel call skips scipy's per-call dispatch; same C routine
    from scipy.sparse import _sparsetools as _st

    def _spmm_array(s: "SparseMatrixCSR", arr: np.ndarray) -> np.ndarray:
        arr = np.ascontiguousarray(arr)
        out = np.zeros((s.rows, arr.shape[1]))
        _st.csr_matvecs(s.rows, s.cols, arr.shape[1],
                        s.row_ptr, s.col_idx, s.values, arr.ravel(), out.ravel())
        return out

    _probe = SparseMatrixCSR(2, 2, [0, 1, 2], [1, 0], [1.0, 2.0])
    assert np.array_equal(_spmm_array(_probe, np.eye(2)), [[0.0, 1.0], [2.0, 0.0]])
    del _probe
except Exception:  # pragma: no cover - depends on the installed scipy build

    def _spmm_array(s: "SparseMatrixCSR", arr: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(s.to_scipy() @ arr)
