"""Seeded synthetic attributed graphs for tests and demos.

A planted-partition citation lookalike: nodes carry sparse binary features
biased toward a class-owned block of the vocabulary, and edges prefer
same-class pairs. Not a stand-in for the real benchmarks; it exists so the
full pipeline can run and be checked without any downloads.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .graph_data import AttributedGraph
from .linalg import DenseMatrix, SparseMatrixCSR

__all__ = ["make_synthetic_graph"]


def make_synthetic_graph(n: int = 120, m: int = 48, c: int = 4, seed: int = 0,
                         intra_p: float = 0.08, inter_p: float = 0.005,
                         feature_on: float = 0.35, feature_noise: float = 0.03,
                         name: str = "synthetic") -> AttributedGraph:
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % c
    rng.shuffle(labels)

    block = m // c
    features = (rng.random((n, m)) < feature_noise).astype(np.float64)
    for cls in range(c):
        rows = np.flatnonzero(labels == cls)
        lo, hi = cls * block, (cls + 1) * block
        features[np.ix_(rows, np.arange(lo, hi))] = (
            rng.random((len(rows), hi - lo)) < feature_on
        ).astype(np.float64)
    # ensure no all-zero feature rows (isolated bag-of-words rows break nothing,
    # but a guaranteed on-bit keeps row normalization meaningful)
    empty = features.sum(axis=1) == 0
    features[empty, (labels[empty] * block) % m] = 1.0

    upper_r, upper_c = np.triu_indices(n, k=1)
    same = labels[upper_r] == labels[upper_c]
    p = np.where(same, intra_p, inter_p)
    keep = rng.random(len(p)) < p
    srcs, dsts = upper_r[keep], upper_c[keep]
    # connect any isolated node to a same-class peer so every node can propagate
    deg = np.bincount(np.concatenate([srcs, dsts]), minlength=n)
    for node in np.flatnonzero(deg == 0):
        peers = np.flatnonzero((labels == labels[node]) & (np.arange(n) != node))
        target = int(peers[rng.integers(len(peers))]) if len(peers) else (node + 1) % n
        srcs = np.append(srcs, min(node, target))
        dsts = np.append(dsts, max(node, target))

    rows = np.concatenate([srcs, dsts])
    cols = np.concatenate([dsts, srcs])
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    adj.sum_duplicates()
    adj.data[:] = 1.0
    adj.setdiag(0)
    adj.eliminate_zeros()

    return AttributedGraph(
        adjacency=SparseMatrixCSR.from_scipy(adj),
        features=DenseMatrix(features),
        labels=labels.astype(np.int64),
        class_count=c,
        node_names=[f"n{i:04d}" for i in range(n)],
        name=name,
    )
