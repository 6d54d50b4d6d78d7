"""Attributed-graph data model, text/JSON ingestion, normalization, splits."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ContractError, ParseError, SchemaError, SplitError
from .linalg import DenseMatrix, SparseMatrixCSR

log = logging.getLogger(__name__)

__all__ = [
    "AttributedGraph",
    "DataSplit",
    "DatasetStats",
    "parse_linqs",
    "load_json_graph",
    "save_json_graph",
    "normalize_adjacency",
    "sym_normalize",
    "make_splits",
]


@dataclass
class DatasetStats:
    nodes: int
    edges: int
    features: int
    classes: int


@dataclass
class DataSplit:
    """Boolean node masks; pairwise disjoint, union covering all labeled nodes."""

    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    def validate(self) -> None:
        t, v, s = self.train_mask, self.val_mask, self.test_mask
        if not (len(t) == len(v) == len(s)):
            raise ContractError("split masks must share one length")
        if np.any(t & v) or np.any(t & s) or np.any(v & s):
            raise ContractError("split masks overlap")


@dataclass
class AttributedGraph:
    """Undirected attributed graph: binary symmetric adjacency with empty
    diagonal, dense node features, one integer label per node."""

    adjacency: SparseMatrixCSR
    features: DenseMatrix
    labels: np.ndarray
    class_count: int
    node_names: list[str]
    name: str = "graph"
    ingest_report: dict = field(default_factory=dict)
    _closed: SparseMatrixCSR | None = field(default=None, repr=False, compare=False)
    _features_csr: SparseMatrixCSR | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.adjacency.rows
        if self.adjacency.cols != n:
            raise ContractError("adjacency must be square")
        if self.features.rows != n or len(self.labels) != n or len(self.node_names) != n:
            raise ContractError("features/labels/node_names must have one row per node")
        if np.any(self.adjacency.diagonal() != 0):
            raise ContractError("adjacency diagonal must be zero")
        if not self.adjacency.is_symmetric():
            raise ContractError("adjacency must be symmetric")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ContractError("labels must lie in [0, class_count)")

    @property
    def n(self) -> int:
        return self.adjacency.rows

    @property
    def num_features(self) -> int:
        return self.features.cols

    def stats(self) -> DatasetStats:
        return DatasetStats(
            nodes=self.n,
            edges=self.adjacency.nnz // 2,
            features=self.num_features,
            classes=self.class_count,
        )

    def closed_neighborhood(self) -> SparseMatrixCSR:
        """Adjacency pattern plus self-loops (values all 1)."""
        if self._closed is None:
            m = self.adjacency.to_scipy() + sp.identity(self.n, format="csr")
            m.data[:] = 1.0
            self._closed = SparseMatrixCSR.from_scipy(m)
        return self._closed

    def features_csr(self) -> SparseMatrixCSR:
        """Sparse view of the feature matrix (bag-of-words features are mostly
        zero, and the first projection dominates training cost)."""
        if self._features_csr is None:
            self._features_csr = SparseMatrixCSR.from_dense(self.features)
        return self._features_csr

    def with_row_normalized_features(self) -> "AttributedGraph":
        """Each feature row divided by its L1 norm; zero rows untouched."""
        arr = self.features.array
        norms = np.abs(arr).sum(axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return AttributedGraph(
            adjacency=self.adjacency,
            features=DenseMatrix._wrap(arr / norms),
            labels=self.labels,
            class_count=self.class_count,
            node_names=self.node_names,
            name=self.name,
            ingest_report=self.ingest_report,
        )


# --------------------------------------------------------------------- parsing


def _iter_lines(source):
    if isinstance(source, str):
        return source.splitlines()
    if hasattr(source, "read"):
        return source.read().splitlines()
    return list(source)


def parse_linqs(content_text, cites_text) -> AttributedGraph:
    """Parse tab-separated node records (`id f1..fm label`) plus a citation
    edge list (`src dst`). Edges are symmetrized; self-citations, duplicates,
    and references to unknown ids are dropped and counted."""
    content_lines = _iter_lines(content_text)
    names: list[str] = []
    index: dict[str, int] = {}
    feature_rows: list[np.ndarray] = []
    raw_labels: list[str] = []
    width = None
    for lineno, line in enumerate(content_lines, start=1):
        line = line.strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 3:
            raise ParseError(f"content line {lineno}: need id, features, label")
        node_id, label = tokens[0], tokens[-1]
        feats = tokens[1:-1]
        if width is None:
            width = len(feats)
        elif len(feats) != width:
            raise ParseError(
                f"content line {lineno}: {len(feats)} feature values, expected {width}"
            )
        if node_id in index:
            raise ParseError(f"content line {lineno}: duplicate node id {node_id!r}")
        index[node_id] = len(names)
        names.append(node_id)
        try:
            feature_rows.append(np.array(feats, dtype=np.float64))
        except ValueError as exc:
            raise ParseError(f"content line {lineno}: non-numeric feature value ({exc})")
        raw_labels.append(label)

    if not names:
        raise ParseError("content stream holds no node records")

    classes = sorted(set(raw_labels))
    label_ids = np.array([classes.index(l) for l in raw_labels], dtype=np.int64)
    features = DenseMatrix(np.vstack(feature_rows))

    n = len(names)
    srcs, dsts = [], []
    dangling = dropped_self = 0
    kept_lines = 0
    for lineno, line in enumerate(_iter_lines(cites_text), start=1):
        line = line.strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 2:
            raise ParseError(f"cites line {lineno}: expected two ids, got {len(tokens)}")
        a, b = tokens
        if a not in index or b not in index:
            dangling += 1
            continue
        i, j = index[a], index[b]
        if i == j:
            dropped_self += 1
            continue
        kept_lines += 1
        srcs.append(i)
        dsts.append(j)

    adjacency = _binary_symmetric_adjacency(n, srcs, dsts)
    duplicates = kept_lines - adjacency.nnz // 2
    if dangling or dropped_self or duplicates:
        log.warning(
            "edge cleanup: %d dangling, %d self, %d duplicate citation(s) dropped",
            dangling, dropped_self, duplicates,
        )
    return AttributedGraph(
        adjacency=adjacency,
        features=features,
        labels=label_ids,
        class_count=len(classes),
        node_names=names,
        ingest_report={
            "dangling_dropped": dangling,
            "self_dropped": dropped_self,
            "duplicate_collapsed": int(duplicates),
            "citation_lines_kept": kept_lines,
            "class_names": classes,
        },
    )


def _binary_symmetric_adjacency(n: int, srcs, dsts) -> SparseMatrixCSR:
    if not srcs:
        return SparseMatrixCSR(n, n, np.zeros(n + 1, dtype=np.int64), [], [])
    rows = np.concatenate([srcs, dsts])
    cols = np.concatenate([dsts, srcs])
    m = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    m.sum_duplicates()
    m.data[:] = 1.0
    m.setdiag(0)
    m.eliminate_zeros()
    return SparseMatrixCSR.from_scipy(m)


# ------------------------------------------------------------------------ JSON

_SCHEMA_KEYS = {"name", "num_nodes", "num_features", "num_classes", "features", "labels", "edges"}


def load_json_graph(path) -> AttributedGraph:
    """Load the neutral JSON graph document (see save_json_graph)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise SchemaError("document root must be an object")
    for key in _SCHEMA_KEYS:
        if key not in doc:
            raise SchemaError(f"missing required key {key!r}")

    n = doc["num_nodes"]
    m = doc["num_features"]
    c = doc["num_classes"]
    for key, value in (("num_nodes", n), ("num_features", m), ("num_classes", c)):
        if not isinstance(value, int) or value < 0:
            raise SchemaError(f"key {key!r} must be a non-negative integer")
    feats = doc["features"]
    if not isinstance(feats, list) or len(feats) != n:
        raise SchemaError(f"key 'features' must list {n} rows")
    features = np.asarray(feats, dtype=np.float64)
    if features.size == 0:
        features = features.reshape(n, m)
    if features.ndim != 2 or features.shape != (n, m):
        raise SchemaError(f"key 'features' must be {n}x{m}")
    labels = doc["labels"]
    if not isinstance(labels, list) or len(labels) != n:
        raise SchemaError(f"key 'labels' must list {n} integers")
    labels = np.asarray(labels, dtype=np.int64)
    if n and (labels.min() < 0 or labels.max() >= c):
        raise SchemaError(f"key 'labels' holds values outside [0, {c})")
    edges = doc["edges"]
    if not isinstance(edges, list):
        raise SchemaError("key 'edges' must be a list of [src, dst] pairs")
    srcs, dsts = [], []
    for k, pair in enumerate(edges):
        if not isinstance(pair, list) or len(pair) != 2:
            raise SchemaError(f"key 'edges' entry {k} is not a [src, dst] pair")
        a, b = pair
        if not isinstance(a, int) or not isinstance(b, int) or not (0 <= a < n and 0 <= b < n):
            raise SchemaError(f"key 'edges' entry {k} references nodes outside [0, {n})")
        if a == b:
            raise SchemaError(f"key 'edges' entry {k} is a self-loop")
        srcs.append(a)
        dsts.append(b)
    node_names = doc.get("node_names")
    if node_names is None:
        node_names = [str(i) for i in range(n)]
    elif not isinstance(node_names, list) or len(node_names) != n:
        raise SchemaError(f"key 'node_names' must list {n} strings")

    return AttributedGraph(
        adjacency=_binary_symmetric_adjacency(n, srcs, dsts),
        features=DenseMatrix(features.reshape(n, m)),
        labels=labels,
        class_count=c,
        node_names=[str(s) for s in node_names],
        name=str(doc["name"]),
    )


def save_json_graph(g: AttributedGraph, path, edge_weights: SparseMatrixCSR | None = None) -> None:
    """Write the neutral JSON document: each undirected edge appears once as
    [src, dst] with src < dst. ``edge_weights`` adds a parallel weight array."""
    coo = g.adjacency.to_scipy().tocoo() if edge_weights is None else edge_weights.to_scipy().tocoo()
    keep = coo.row < coo.col
    pairs = np.stack([coo.row[keep], coo.col[keep]], axis=1)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    doc = {
        "name": g.name,
        "num_nodes": g.n,
        "num_features": g.num_features,
        "num_classes": g.class_count,
        "features": [[float(v) for v in row] for row in g.features.array],
        "labels": [int(v) for v in g.labels],
        "edges": [[int(a), int(b)] for a, b in pairs],
        "node_names": list(g.node_names),
    }
    if edge_weights is not None:
        doc["edge_weights"] = [float(v) for v in coo.data[keep][order]]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


# --------------------------------------------------------------- normalization


def sym_normalize(w: SparseMatrixCSR, add_self_loops: bool = False) -> SparseMatrixCSR:
    """Symmetric degree renormalization: entry (i,j) divided by sqrt(di*dj),
    with degrees taken from row sums (after adding self-loops when asked).
    Computed entrywise so a symmetric input stays symmetric to the last bit."""
    m = w.to_scipy()
    if add_self_loops:
        m = m + sp.identity(w.rows, format="csr")
    deg = np.asarray(m.sum(axis=1)).reshape(-1)
    deg[deg == 0.0] = 1.0
    coo = m.tocoo()
    data = coo.data / np.sqrt(deg[coo.row] * deg[coo.col])
    scaled = sp.coo_matrix((data, (coo.row, coo.col)), shape=m.shape)
    return SparseMatrixCSR.from_scipy(scaled)


def normalize_adjacency(g: AttributedGraph) -> SparseMatrixCSR:
    """Self-looped symmetric renormalization of the binary adjacency."""
    return sym_normalize(g.adjacency, add_self_loops=True)


# ----------------------------------------------------------------------- split


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def make_splits(g: AttributedGraph, train_ratio: float, val_ratio: float, seed: int) -> DataSplit:
    """Per-class stratified shuffle into train/val/test masks."""
    if train_ratio <= 0 or val_ratio <= 0:
        raise ConfigError("train_ratio and val_ratio must be positive")
    if train_ratio + val_ratio >= 1.0:
        raise ConfigError(
            f"train_ratio + val_ratio must be < 1, got {train_ratio} + {val_ratio}"
        )
    rng = np.random.default_rng(seed)
    n = g.n
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    for cls in range(g.class_count):
        members = np.flatnonzero(g.labels == cls)
        if len(members) < 3:
            raise SplitError(
                f"class {cls} has {len(members)} member(s); at least 3 are needed to stratify"
            )
        perm = rng.permutation(members)
        n_tr = max(1, _round_half_up(train_ratio * len(members)))
        n_va = max(1, _round_half_up(val_ratio * len(members)))
        n_tr = min(n_tr, len(members) - 2)
        n_va = min(n_va, len(members) - n_tr - 1)
        train[perm[:n_tr]] = True
        val[perm[n_tr:n_tr + n_va]] = True
        test[perm[n_tr + n_va:]] = True
    split = DataSplit(train_mask=train, val_mask=val, test_mask=test)
    split.validate()
    return split
