"""Differentiable building blocks: graph convolution, split additive
attention, encoder, dropout, and the classification loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DiffNode, Tape
from .errors import ConfigError, ContractError, DimensionError
from .graph_data import AttributedGraph
from .linalg import DenseMatrix, SparseMatrixCSR

__all__ = [
    "GcnLayerParams",
    "AttentionParams",
    "EncoderParams",
    "glorot",
    "gcn_layer",
    "gcn_layer_node",
    "attention_layer",
    "attention_node",
    "encoder",
    "encoder_node",
    "dropout",
    "softmax_cross_entropy",
    "apply_activation",
]

ACTIVATIONS = ("relu", "leaky_relu", "identity")


def glorot(d_in: int, d_out: int, rng: np.random.Generator, gain: float = 1.0) -> DenseMatrix:
    bound = gain * np.sqrt(6.0 / (d_in + d_out))
    return DenseMatrix._wrap(rng.uniform(-bound, bound, size=(d_in, d_out)))


@dataclass
class GcnLayerParams:
    W: DenseMatrix
    bias: DenseMatrix

    @classmethod
    def initialize(cls, d_in: int, d_out: int, rng: np.random.Generator,
                   gain: float = 1.0) -> "GcnLayerParams":
        return cls(W=glorot(d_in, d_out, rng, gain), bias=DenseMatrix.zeros(1, d_out))


@dataclass
class AttentionParams:
    W: DenseMatrix            # m x d_att projection
    att_l: DenseMatrix        # d_att x 1, source-side score vector
    att_r: DenseMatrix        # d_att x 1, target-side score vector
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.negative_slope <= 0:
            raise ConfigError(f"negative_slope must be > 0, got {self.negative_slope}")

    @classmethod
    def initialize(cls, m: int, d_att: int, rng: np.random.Generator,
                   negative_slope: float = 0.2, gain: float = 1.0) -> "AttentionParams":
        return cls(
            W=glorot(m, d_att, rng, gain),
            att_l=glorot(d_att, 1, rng, gain),
            att_r=glorot(d_att, 1, rng, gain),
            negative_slope=negative_slope,
        )


@dataclass
class EncoderParams:
    W1: DenseMatrix           # d_att x z
    b1: DenseMatrix           # 1 x z
    z: int

    def __post_init__(self):
        if self.z <= 0:
            raise ConfigError(f"encoder code dimension must be positive, got {self.z}")
        if self.W1.cols != self.z or self.b1.shape != (1, self.z):
            raise DimensionError("encoder parameter shapes disagree with z")

    @classmethod
    def initialize(cls, d_att: int, z: int, rng: np.random.Generator,
                   gain: float = 1.0) -> "EncoderParams":
        return cls(W1=glorot(d_att, z, rng, gain), b1=DenseMatrix.zeros(1, z), z=z)


def apply_activation(tape: Tape, node: DiffNode, activation: str, negative_slope: float) -> DiffNode:
    if activation == "identity":
        return node
    if activation == "relu":
        return tape.relu(node)
    if activation == "leaky_relu":
        return tape.leaky_relu(node, negative_slope)
    raise ConfigError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


# ------------------------------------------------------------------ gcn layer


def gcn_layer_node(tape: Tape, a_hat: SparseMatrixCSR, h_blocks, w: DiffNode, bias: DiffNode,
                   activation: str, negative_slope: float = 0.2) -> DiffNode:
    """act(a_hat @ (H @ W) + bias) where H may be one node/matrix or a list of
    column blocks that are never concatenated explicitly."""
    blocks = h_blocks if isinstance(h_blocks, (list, tuple)) else [h_blocks]
    pre = tape.linear_blocks(list(blocks), w)
    return tape.gcn_propagate(a_hat, pre, bias, activation, negative_slope)


def gcn_layer(a_hat: SparseMatrixCSR, h: DenseMatrix, p: GcnLayerParams,
              activation: str, negative_slope: float = 0.2) -> DenseMatrix:
    tape = Tape()
    out = gcn_layer_node(tape, a_hat, tape.const(h), tape.const(p.W), tape.const(p.bias),
                         activation, negative_slope)
    return out.matrix()


# ------------------------------------------------------------------- attention


def attention_node(tape: Tape, g: AttributedGraph, x, w: DiffNode,
                   att_l: DiffNode, att_r: DiffNode, negative_slope: float) -> DiffNode:
    return tape.attention(g.closed_neighborhood(), x, w, att_l, att_r, negative_slope)


def attention_layer(g: AttributedGraph, X: DenseMatrix, p: AttentionParams) -> DenseMatrix:
    """Additive attention over each node's closed neighborhood; rows of the
    attention coefficients sum to one."""
    tape = Tape()
    out = attention_node(tape, g, X, tape.const(p.W), tape.const(p.att_l),
                         tape.const(p.att_r), p.negative_slope)
    return out.matrix()


# --------------------------------------------------------------------- encoder


def encoder_node(tape: Tape, emb: DiffNode, w1: DiffNode, b1: DiffNode) -> DiffNode:
    return tape.relu(tape.linear_blocks([emb], w1, bias=b1))


def encoder(emb: DenseMatrix, p: EncoderParams) -> DenseMatrix:
    """Single dense layer: relu(emb @ W1 + b1)."""
    tape = Tape()
    return encoder_node(tape, tape.const(emb), tape.const(p.W1), tape.const(p.b1)).matrix()


# --------------------------------------------------------------------- dropout


def dropout(h: DenseMatrix, rate: float, mode: str, rng: np.random.Generator | None = None) -> DenseMatrix:
    """Inverted dropout: zero entries with probability ``rate`` and scale the
    survivors by 1/(1-rate) in train mode; eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return h
    if rng is None:
        raise ConfigError("train-mode dropout needs a random generator")
    tape = Tape()
    return tape.dropout(tape.const(h), rate, rng).matrix()


# ------------------------------------------------------------------------ loss


def softmax_cross_entropy(logits, labels, mask, tape: Tape | None = None) -> DiffNode:
    """Masked mean cross-entropy; returns the scalar loss node. When ``logits``
    is already a tape node its own tape must be supplied."""
    if isinstance(logits, DiffNode):
        if tape is None:
            raise ContractError("pass the tape that owns the logits node")
        return tape.softmax_cross_entropy(logits, labels, mask)
    t = tape or Tape()
    return t.softmax_cross_entropy(t.const(logits), labels, mask)
