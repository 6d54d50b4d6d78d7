"""First-stage feature extractor: fusion, two graph convolutions, and a soft
class-distribution head. Its output is never collapsed to hard labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DiffNode, Tape
from .errors import ConfigError, ContractError, DimensionError
from .graph_data import AttributedGraph
from .layers import (
    AttentionParams,
    EncoderParams,
    GcnLayerParams,
    attention_node,
    encoder_node,
    gcn_layer_node,
)
from .linalg import DenseMatrix, SparseMatrixCSR

__all__ = ["Stage1Model", "SoftPrediction", "fuse_inputs", "stage1_forward", "stage1_graph"]


@dataclass
class SoftPrediction:
    """Row-stochastic class distributions. Deliberately carries no label
    accessor: collapsing to classes is the second stage's job."""

    P: DenseMatrix

    def __post_init__(self):
        arr = self.P.array
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ContractError("soft predictions must lie in [0, 1]")
        sums = arr.sum(axis=1)
        if arr.size and np.max(np.abs(sums - 1.0)) > 1e-9:
            raise ContractError("soft prediction rows must sum to 1 within 1e-9")

    @property
    def n(self) -> int:
        return self.P.rows

    @property
    def class_count(self) -> int:
        return self.P.cols


@dataclass
class Stage1Model:
    attention: AttentionParams
    encoder: EncoderParams
    gcn1_a: GcnLayerParams
    gcn1_b: GcnLayerParams
    head1: GcnLayerParams

    def __post_init__(self):
        fused = self.attention.W.rows + self.encoder.z + self.attention.W.cols
        if self.gcn1_a.W.rows != fused:
            raise DimensionError(
                f"gcn1_a expects fused width {fused}, has {self.gcn1_a.W.rows} rows"
            )
        hidden = self.gcn1_a.W.cols
        if self.gcn1_b.W.rows != hidden or self.head1.W.rows != self.gcn1_b.W.cols:
            raise DimensionError("stage-1 dimension chain broken between layers")

    @property
    def class_count(self) -> int:
        return self.head1.W.cols

    @classmethod
    def initialize(cls, m: int, z: int, d_att: int, hidden: int, c: int,
                   negative_slope: float, rng: np.random.Generator) -> "Stage1Model":
        return cls(
            attention=AttentionParams.initialize(m, d_att, rng, negative_slope),
            encoder=EncoderParams.initialize(d_att, z, rng),
            gcn1_a=GcnLayerParams.initialize(m + z + d_att, hidden, rng),
            gcn1_b=GcnLayerParams.initialize(hidden, hidden, rng),
            head1=GcnLayerParams.initialize(hidden, c, rng),
        )

    def params(self) -> dict[str, DenseMatrix]:
        return {
            "att.W": self.attention.W,
            "att.att_l": self.attention.att_l,
            "att.att_r": self.attention.att_r,
            "enc.W1": self.encoder.W1,
            "enc.b1": self.encoder.b1,
            "gcn1_a.W": self.gcn1_a.W,
            "gcn1_a.bias": self.gcn1_a.bias,
            "gcn1_b.W": self.gcn1_b.W,
            "gcn1_b.bias": self.gcn1_b.bias,
            "head1.W": self.head1.W,
            "head1.bias": self.head1.bias,
        }

    def with_params(self, p: dict[str, DenseMatrix]) -> "Stage1Model":
        return Stage1Model(
            attention=AttentionParams(p["att.W"], p["att.att_l"], p["att.att_r"],
                                      self.attention.negative_slope),
            encoder=EncoderParams(p["enc.W1"], p["enc.b1"], self.encoder.z),
            gcn1_a=GcnLayerParams(p["gcn1_a.W"], p["gcn1_a.bias"]),
            gcn1_b=GcnLayerParams(p["gcn1_b.W"], p["gcn1_b.bias"]),
            head1=GcnLayerParams(p["head1.W"], p["head1.bias"]),
        )


def fuse_inputs(X: DenseMatrix, code: DenseMatrix, emb: DenseMatrix) -> DenseMatrix:
    """Column-wise concatenation [X | code | emb]."""
    for name, part in (("code", code), ("emb", emb)):
        if part.rows != X.rows:
            raise DimensionError(
                f"fuse_inputs: {name} has {part.rows} rows, features have {X.rows}"
            )
    return DenseMatrix._wrap(np.hstack([X.array, code.array, emb.array]))


def _check_mode(mode: str, rate: float, rng) -> None:
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "train" and rate > 0.0 and rng is None:
        raise ConfigError("train mode with dropout needs a random generator")


def _stage1_tail(tape: Tape, a_hat: SparseMatrixCSR, blocks, pn: dict[str, DiffNode],
                 negative_slope: float, dropout_rate: float, mode: str,
                 rng) -> tuple[DiffNode, DiffNode, DiffNode]:
    """Two convolutions then the soft head; dropout between layers when
    training. Returns (h_high, logits, probabilities)."""
    h1 = gcn_layer_node(tape, a_hat, blocks, pn["gcn1_a.W"], pn["gcn1_a.bias"],
                        "leaky_relu", negative_slope)
    if mode == "train" and dropout_rate > 0.0:
        h1 = tape.dropout(h1, dropout_rate, rng)
    h_high = gcn_layer_node(tape, a_hat, h1, pn["gcn1_b.W"], pn["gcn1_b.bias"],
                            "leaky_relu", negative_slope)
    h_in = h_high
    if mode == "train" and dropout_rate > 0.0:
        h_in = tape.dropout(h_high, dropout_rate, rng)
    logits = gcn_layer_node(tape, a_hat, h_in, pn["head1.W"], pn["head1.bias"], "identity")
    probs = tape.row_softmax(logits)
    return h_high, logits, probs


def stage1_graph(tape: Tape, model: Stage1Model, g: AttributedGraph,
                 a_hat: SparseMatrixCSR, dropout_rate: float, mode: str,
                 rng: np.random.Generator | None = None, x_block=None,
                 trainable: bool = True) -> dict:
    """Build the full differentiable stage-1 computation (attention, encoder,
    fusion, convolutions, head) on one tape. ``x_block`` may be a sparse view
    of the features; it is used both as attention input and as the raw block
    of the fusion. Returns the node dict, including the bound parameters."""
    _check_mode(mode, dropout_rate, rng)
    bind = tape.param if trainable else tape.const
    pn = {name: bind(mat) for name, mat in model.params().items()}
    x = g.features if x_block is None else x_block
    emb = attention_node(tape, g, x, pn["att.W"], pn["att.att_l"], pn["att.att_r"],
                         model.attention.negative_slope)
    code = encoder_node(tape, emb, pn["enc.W1"], pn["enc.b1"])
    blocks = [x, code, emb]
    h_high, logits, probs = _stage1_tail(
        tape, a_hat, blocks, pn, model.attention.negative_slope, dropout_rate, mode, rng
    )
    return {"params": pn, "emb": emb, "code": code, "h_high": h_high,
            "logits": logits, "probs": probs}


def stage1_forward(model: Stage1Model, a_hat: SparseMatrixCSR, fused: DenseMatrix,
                   dropout_rate: float, mode: str,
                   rng: np.random.Generator | None = None) -> tuple[DenseMatrix, SoftPrediction]:
    """Run the convolutional tail on an already-fused input. Emits the
    penultimate representation and the soft class distributions; no hard
    labels are produced anywhere on this path."""
    _check_mode(mode, dropout_rate, rng)
    tape = Tape()
    pn = {name: tape.const(mat) for name, mat in model.params().items()}
    h_high, _, probs = _stage1_tail(
        tape, a_hat, tape.const(fused), pn, model.attention.negative_slope,
        dropout_rate, mode, rng,
    )
    return h_high.matrix(), SoftPrediction(probs.matrix())
