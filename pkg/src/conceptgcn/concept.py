"""Secondary similarity graph built from soft class distributions.

Nodes whose predicted distributions are close in Euclidean distance get
linked; edge weights come from a Gaussian kernel over that distance. The
result feeds the second-stage classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ContractError, DimensionError
from .graph_data import sym_normalize
from .linalg import DenseMatrix, SparseMatrixCSR
from .stage1 import SoftPrediction

__all__ = ["ConceptParams", "ConceptualGraph", "kernel_weight", "build_conceptual_graph",
           "propagation_matrix"]

_CHUNK_ROWS = 512


@dataclass
class ConceptParams:
    sigma: float
    ratio_node: float
    graph_size: int
    include_original_edges: bool = True
    alpha: float = 0.5

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 < self.ratio_node <= 1.0:
            raise ConfigError(f"ratio_node must be in (0, 1], got {self.ratio_node}")
        if self.graph_size < 1:
            raise ConfigError(f"graph_size must be positive, got {self.graph_size}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")

    @property
    def k(self) -> int:
        """Neighbors kept per node."""
        return max(1, int(np.floor(self.ratio_node * self.graph_size + 0.5)))


@dataclass
class ConceptualGraph:
    W: SparseMatrixCSR           # symmetric kernel weights, unit diagonal
    normalized: SparseMatrixCSR  # propagation matrix for the second stage

    def __post_init__(self):
        if not self.W.is_symmetric():
            raise ContractError("conceptual graph weights must be symmetric")
        if np.any(self.W.diagonal() != 1.0):
            raise ContractError("conceptual graph diagonal must be exactly 1")


def kernel_weight(p_i, p_j, sigma: float) -> float:
    """Gaussian kernel exp(-|p_i - p_j|^2 / (2 sigma^2)) in (0, 1]."""
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    a = np.asarray(p_i, dtype=np.float64).reshape(-1)
    b = np.asarray(p_j, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"kernel_weight: vector lengths differ ({a.size} vs {b.size})")
    d2 = float(np.sum((a - b) ** 2))
    return float(np.exp(-d2 / (2.0 * sigma * sigma)))


def _nearest_neighbors(arr: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k-nearest rows by squared Euclidean distance, excluding self.
    Ties at the cutoff are resolved toward lower node index. Returns flat
    (source, target) index arrays of length n*k."""
    n = arr.shape[0]
    srcs = np.repeat(np.arange(n), k)
    dsts = np.empty(n * k, dtype=np.int64)
    for lo in range(0, n, _CHUNK_ROWS):
        hi = min(lo + _CHUNK_ROWS, n)
        diff = arr[lo:hi, None, :] - arr[None, :, :]
        d2 = np.einsum("ijc,ijc->ij", diff, diff)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        for r in range(hi - lo):
            row = d2[r]
            cutoff = np.partition(row, k - 1)[k - 1]
            strict = np.flatnonzero(row < cutoff)
            chosen = strict
            if strict.size < k:
                at_cut = np.flatnonzero(row == cutoff)[: k - strict.size]
                chosen = np.concatenate([strict, at_cut])
            chosen.sort()
            dsts[(lo + r) * k:(lo + r + 1) * k] = chosen
    return srcs, dsts


def build_conceptual_graph(P, params: ConceptParams,
                           original: SparseMatrixCSR | None = None) -> ConceptualGraph:
    """Link every node to its k nearest peers in prediction space (k from
    ratio_node * graph_size), weight the links with the Gaussian kernel,
    symmetrize by elementwise max, and pin the diagonal to 1. When original
    edges are mixed in, the propagation matrix blends the renormalized forms
    of both graphs and is renormalized once more."""
    if isinstance(P, SoftPrediction):
        arr = P.P.array
    elif isinstance(P, DenseMatrix):
        SoftPrediction(P)  # reuse the row-stochastic validation
        arr = P.array
    else:
        raise ContractError("P must be a SoftPrediction or row-stochastic DenseMatrix")
    n = arr.shape[0]
    k = params.k
    if k >= n:
        raise ConfigError(
            f"k={k} neighbors with only {n} nodes would make the graph complete"
        )

    srcs, dsts = _nearest_neighbors(arr, k)
    d2 = np.sum((arr[srcs] - arr[dsts]) ** 2, axis=1)
    weights = np.exp(-d2 / (2.0 * params.sigma ** 2))
    directed = sp.coo_matrix((weights, (srcs, dsts)), shape=(n, n)).tocsr()
    symmetric = directed.maximum(directed.T)
    symmetric.setdiag(1.0)
    w = SparseMatrixCSR.from_scipy(symmetric)
    return ConceptualGraph(W=w, normalized=propagation_matrix(w, params, original))


def propagation_matrix(w: SparseMatrixCSR, params: ConceptParams,
                       original: SparseMatrixCSR | None = None) -> SparseMatrixCSR:
    """Renormalize the kernel graph, optionally blended with the renormalized
    original adjacency (weight alpha on the kernel side)."""
    norm_w = sym_normalize(w)
    if params.include_original_edges and original is not None:
        norm_a = sym_normalize(original, add_self_loops=True)
        mix = params.alpha * norm_w.to_scipy() + (1.0 - params.alpha) * norm_a.to_scipy()
        return sym_normalize(SparseMatrixCSR.from_scipy(mix))
    return norm_w
