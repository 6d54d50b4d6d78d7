"""Second-stage classifier: two graph convolutions over the conceptual graph
followed by a softmax head and the final argmax decision."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .concept import ConceptualGraph
from .errors import ConfigError, ContractError, DimensionError
from .layers import GcnLayerParams, gcn_layer_node
from .linalg import DenseMatrix, SparseMatrixCSR
from .stage1 import SoftPrediction

__all__ = ["Stage2Model", "fuse_stage2", "stage2_forward", "stage2_graph", "predict"]


@dataclass
class Stage2Model:
    gcn2_a: GcnLayerParams
    gcn2_b: GcnLayerParams
    head2: GcnLayerParams
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.gcn2_b.W.rows != self.gcn2_a.W.cols or self.head2.W.rows != self.gcn2_b.W.cols:
            raise DimensionError("stage-2 dimension chain broken between layers")

    @property
    def class_count(self) -> int:
        return self.head2.W.cols

    @classmethod
    def initialize(cls, d_in: int, hidden: int, c: int, negative_slope: float,
                   rng: np.random.Generator) -> "Stage2Model":
        return cls(
            gcn2_a=GcnLayerParams.initialize(d_in, hidden, rng),
            gcn2_b=GcnLayerParams.initialize(hidden, hidden, rng),
            head2=GcnLayerParams.initialize(hidden, c, rng),
            negative_slope=negative_slope,
        )

    def params(self) -> dict[str, DenseMatrix]:
        return {
            "gcn2_a.W": self.gcn2_a.W,
            "gcn2_a.bias": self.gcn2_a.bias,
            "gcn2_b.W": self.gcn2_b.W,
            "gcn2_b.bias": self.gcn2_b.bias,
            "head2.W": self.head2.W,
            "head2.bias": self.head2.bias,
        }

    def with_params(self, p: dict[str, DenseMatrix]) -> "Stage2Model":
        return Stage2Model(
            gcn2_a=GcnLayerParams(p["gcn2_a.W"], p["gcn2_a.bias"]),
            gcn2_b=GcnLayerParams(p["gcn2_b.W"], p["gcn2_b.bias"]),
            head2=GcnLayerParams(p["head2.W"], p["head2.bias"]),
            negative_slope=self.negative_slope,
        )


def fuse_stage2(X: DenseMatrix, H_high: DenseMatrix, P: SoftPrediction) -> DenseMatrix:
    """Column-wise concatenation [X | H_high | P]."""
    p = P.P if isinstance(P, SoftPrediction) else P
    for name, part in (("H_high", H_high), ("P", p)):
        if part.rows != X.rows:
            raise DimensionError(
                f"fuse_stage2: {name} has {part.rows} rows, features have {X.rows}"
            )
    return DenseMatrix._wrap(np.hstack([X.array, H_high.array, p.array]))


def stage2_graph(tape: Tape, model: Stage2Model, c_norm: SparseMatrixCSR, blocks,
                 dropout_rate: float, mode: str,
                 rng: np.random.Generator | None = None,
                 trainable: bool = True) -> dict:
    """Differentiable stage-2 stack over the conceptual propagation matrix.
    ``blocks`` are the fused input columns (nodes, matrices, or constant CSR)."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not 0.0 <= dropout_rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {dropout_rate}")
    if mode == "train" and dropout_rate > 0.0 and rng is None:
        raise ConfigError("train mode with dropout needs a random generator")
    bind = tape.param if trainable else tape.const
    pn = {name: bind(mat) for name, mat in model.params().items()}
    slope = model.negative_slope
    h1 = gcn_layer_node(tape, c_norm, blocks, pn["gcn2_a.W"], pn["gcn2_a.bias"],
                        "leaky_relu", slope)
    if mode == "train" and dropout_rate > 0.0:
        h1 = tape.dropout(h1, dropout_rate, rng)
    h2 = gcn_layer_node(tape, c_norm, h1, pn["gcn2_b.W"], pn["gcn2_b.bias"],
                        "leaky_relu", slope)
    if mode == "train" and dropout_rate > 0.0:
        h2 = tape.dropout(h2, dropout_rate, rng)
    logits = gcn_layer_node(tape, c_norm, h2, pn["head2.W"], pn["head2.bias"], "identity")
    probs = tape.row_softmax(logits)
    return {"params": pn, "logits": logits, "probs": probs}


def stage2_forward(model: Stage2Model, C: ConceptualGraph, fused2: DenseMatrix,
                   dropout_rate: float, mode: str,
                   rng: np.random.Generator | None = None) -> DenseMatrix:
    """Final class probabilities (rows sum to 1)."""
    tape = Tape()
    out = stage2_graph(tape, model, C.normalized, [tape.const(fused2)],
                       dropout_rate, mode, rng, trainable=False)
    return out["probs"].matrix()


def predict(probs: DenseMatrix) -> np.ndarray:
    """Per-row argmax; ties go to the lowest class index."""
    arr = probs.array if isinstance(probs, DenseMatrix) else np.asarray(probs)
    if arr.size == 0:
        raise ContractError("predict needs at least one row of probabilities")
    return np.argmax(arr, axis=1).astype(np.int64)
