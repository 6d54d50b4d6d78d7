"""Reverse-mode differentiation over 2-D float64 matrices.

A Tape records operations in construction order, which is already a
topological order (parents are created before children), so the backward
sweep is a single reversed pass. Sparse matrices participate as constants
only; gradients never flow into CSR operands.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericError
from .linalg import DenseMatrix, SparseMatrixCSR, _spmm_array

__all__ = ["DiffNode", "Tape", "finite_diff_check"]


class DiffNode:
    """One entry of the tape: an operation tag, parent handles, the computed
    value, and (after backward) the gradient of the loss w.r.t. the value."""

    __slots__ = ("id", "op", "parents", "value", "grad", "requires_grad", "_backward",
                 "kink_margin")

    def __init__(self, node_id, op, parents, value, requires_grad, backward_fn):
        self.id = node_id
        self.op = op
        self.parents = parents
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = backward_fn
        # distance of the nearest pre-activation to a piecewise-linear kink;
        # finite-difference checks are only meaningful away from it
        self.kink_margin = None

    @property
    def shape(self):
        return self.value.shape

    def matrix(self) -> DenseMatrix:
        return DenseMatrix._wrap(self.value)

    def __repr__(self):
        return f"DiffNode(id={self.id}, op={self.op}, shape={self.value.shape})"


def _as_array(x) -> np.ndarray:
    if isinstance(x, DenseMatrix):
        return x.array
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return arr


class Tape:
    """Single-owner recording of a differentiable computation."""

    def __init__(self):
        self.nodes: list[DiffNode] = []
        self.params: list[DiffNode] = []

    # ------------------------------------------------------------------ leaves

    def _new(self, op, parents, value, requires_grad, backward_fn) -> DiffNode:
        node = DiffNode(len(self.nodes), op, tuple(parents), value, requires_grad, backward_fn)
        self.nodes.append(node)
        return node

    def const(self, value) -> DiffNode:
        return self._new("const", (), _as_array(value), False, None)

    def param(self, value) -> DiffNode:
        node = self._new("param", (), _as_array(value), True, None)
        self.params.append(node)
        return node

    def as_node(self, x) -> DiffNode:
        return x if isinstance(x, DiffNode) else self.const(x)

    @staticmethod
    def _accum(node: DiffNode, g: np.ndarray) -> None:
        # grads are accumulated out-of-place, so sharing g between nodes is safe
        if not node.requires_grad:
            return
        node.grad = g if node.grad is None else node.grad + g

    # -------------------------------------------------------------- arithmetic

    def add(self, a: DiffNode, b: DiffNode) -> DiffNode:
        if a.shape != b.shape:
            raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
        out = self._new("add", (a, b), a.value + b.value, a.requires_grad or b.requires_grad, None)

        def backward(g):
            self._accum(a, g)
            self._accum(b, g)

        out._backward = backward
        return out

    def scale(self, a: DiffNode, alpha: float) -> DiffNode:
        out = self._new("scale", (a,), alpha * a.value, a.requires_grad, None)
        out._backward = lambda g: self._accum(a, alpha * g)
        return out

    def mul(self, a: DiffNode, b: DiffNode) -> DiffNode:
        if a.shape != b.shape:
            raise DimensionError(f"mul shape mismatch: {a.shape} vs {b.shape}")
        out = self._new("mul", (a, b), a.value * b.value, a.requires_grad or b.requires_grad, None)

        def backward(g):
            self._accum(a, g * b.value)
            self._accum(b, g * a.value)

        out._backward = backward
        return out

    def add_bias(self, h: DiffNode, bias: DiffNode) -> DiffNode:
        if bias.shape != (1, h.shape[1]):
            raise DimensionError(f"bias shape {bias.shape} incompatible with {h.shape}")
        out = self._new("add_bias", (h, bias), h.value + bias.value,
                        h.requires_grad or bias.requires_grad, None)

        def backward(g):
            self._accum(h, g)
            self._accum(bias, g.sum(axis=0, keepdims=True))

        out._backward = backward
        return out

    def sum_all(self, a: DiffNode) -> DiffNode:
        out = self._new("sum", (a,), np.array([[a.value.sum()]]), a.requires_grad, None)
        out._backward = lambda g: self._accum(a, np.full_like(a.value, g[0, 0]))
        return out

    # ---------------------------------------------------------------- products

    def matmul(self, a: DiffNode, b: DiffNode) -> DiffNode:
        if a.shape[1] != b.shape[0]:
            raise DimensionError(
                f"matmul shape mismatch: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
            )
        out = self._new("matmul", (a, b), a.value @ b.value,
                        a.requires_grad or b.requires_grad, None)

        def backward(g):
            if a.requires_grad:
                self._accum(a, g @ b.value.T)
            if b.requires_grad:
                self._accum(b, a.value.T @ g)

        out._backward = backward
        return out

    def spmm(self, s: SparseMatrixCSR, d: DiffNode) -> DiffNode:
        if s.cols != d.shape[0]:
            raise DimensionError(
                f"spmm shape mismatch: {s.rows}x{s.cols} @ {d.shape[0]}x{d.shape[1]}"
            )
        out = self._new("spmm", (d,), _spmm_array(s, d.value), d.requires_grad, None)

        def backward(g):
            self._accum(d, _spmm_array(s.transpose(), g))

        out._backward = backward
        return out

    def gcn_propagate(self, s: SparseMatrixCSR, x: DiffNode, bias: DiffNode,
                      activation: str, negative_slope: float = 0.2) -> DiffNode:
        """Fused act(s @ x + bias): one node instead of three, for the hot
        training path. Semantics match spmm -> add_bias -> activation."""
        if s.cols != x.shape[0]:
            raise DimensionError(
                f"spmm shape mismatch: {s.rows}x{s.cols} @ {x.shape[0]}x{x.shape[1]}"
            )
        if bias.shape != (1, x.shape[1]):
            raise DimensionError(f"bias shape {bias.shape} incompatible with {x.shape}")
        pre = _spmm_array(s, x.value)
        pre += bias.value
        if activation == "identity":
            value, factor = pre, None
        elif activation == "relu":
            factor = (pre > 0).astype(np.float64)
            value = pre * factor
        elif activation == "leaky_relu":
            factor = np.where(pre > 0, 1.0, negative_slope)
            value = pre * factor
        else:
            raise ConfigError(f"unknown activation {activation!r}")
        out = self._new("gcn_propagate", (x, bias), value,
                        x.requires_grad or bias.requires_grad, None)
        if factor is not None:
            out.kink_margin = float(np.min(np.abs(pre))) if pre.size else np.inf

        def backward(g):
            ga = g if factor is None else g * factor
            self._accum(bias, ga.sum(axis=0, keepdims=True))
            if x.requires_grad:
                self._accum(x, _spmm_array(s.transpose(), ga))

        out._backward = backward
        return out

    def linear_blocks(self, blocks: Sequence, w: DiffNode, bias: DiffNode | None = None) -> DiffNode:
        """Product [B0 | B1 | ...] @ w (+ bias) without materializing the
        concatenation. Blocks may be tape nodes, DenseMatrix, or constant CSR;
        gradients reach node blocks and w/bias."""
        prepared = []
        row0 = 0
        n_rows = None
        for b in blocks:
            if isinstance(b, DiffNode):
                width, rows = b.shape[1], b.shape[0]
            elif isinstance(b, SparseMatrixCSR):
                width, rows = b.cols, b.rows
            else:
                b = _as_array(b)
                width, rows = b.shape[1], b.shape[0]
            if n_rows is None:
                n_rows = rows
            elif rows != n_rows:
                raise DimensionError(f"block row counts differ: {rows} vs {n_rows}")
            prepared.append((b, row0, row0 + width))
            row0 += width
        if w.shape[0] != row0:
            raise DimensionError(f"weight rows {w.shape[0]} != total block width {row0}")
        if bias is not None and bias.shape != (1, w.shape[1]):
            raise DimensionError(f"bias shape {bias.shape} incompatible with output width {w.shape[1]}")

        acc = np.zeros((n_rows, w.shape[1]))
        for b, lo, hi in prepared:
            w_slice = w.value[lo:hi]
            if isinstance(b, DiffNode):
                acc += b.value @ w_slice
            elif isinstance(b, SparseMatrixCSR):
                acc += _spmm_array(b, w_slice)
            else:
                acc += b @ w_slice
        if bias is not None:
            acc += bias.value

        requires = w.requires_grad or (bias is not None and bias.requires_grad) or any(
            isinstance(b, DiffNode) and b.requires_grad for b, _, _ in prepared
        )
        parents = tuple(b for b, _, _ in prepared if isinstance(b, DiffNode)) + (w,) + (
            (bias,) if bias is not None else ()
        )
        out = self._new("linear_blocks", parents, acc, requires, None)

        def backward(g):
            if w.requires_grad:
                gw = np.empty_like(w.value)
                for b, lo, hi in prepared:
                    if isinstance(b, DiffNode):
                        gw[lo:hi] = b.value.T @ g
                    elif isinstance(b, SparseMatrixCSR):
                        gw[lo:hi] = _spmm_array(b.transpose(), g)
                    else:
                        gw[lo:hi] = b.T @ g
                self._accum(w, gw)
            if bias is not None:
                self._accum(bias, g.sum(axis=0, keepdims=True))
            for b, lo, hi in prepared:
                if isinstance(b, DiffNode) and b.requires_grad:
                    self._accum(b, g @ w.value[lo:hi].T)

        out._backward = backward
        return out

    # ------------------------------------------------------------- activations

    def relu(self, x: DiffNode) -> DiffNode:
        pos = x.value > 0
        out = self._new("relu", (x,), np.where(pos, x.value, 0.0), x.requires_grad, None)
        out.kink_margin = float(np.min(np.abs(x.value))) if x.value.size else np.inf
        out._backward = lambda g: self._accum(x, np.where(pos, g, 0.0))
        return out

    def leaky_relu(self, x: DiffNode, negative_slope: float) -> DiffNode:
        # the kink at exactly 0 uses the negative-slope branch
        pos = x.value > 0
        out = self._new("leaky_relu", (x,),
                        np.where(pos, x.value, negative_slope * x.value), x.requires_grad, None)
        out.kink_margin = float(np.min(np.abs(x.value))) if x.value.size else np.inf
        out._backward = lambda g: self._accum(x, np.where(pos, g, negative_slope * g))
        return out

    def row_softmax(self, x: DiffNode) -> DiffNode:
        shifted = x.value - x.value.max(axis=1, keepdims=True)
        ex = np.exp(shifted)
        p = ex / ex.sum(axis=1, keepdims=True)
        out = self._new("row_softmax", (x,), p, x.requires_grad, None)

        def backward(g):
            inner = (g * p).sum(axis=1, keepdims=True)
            self._accum(x, p * (g - inner))

        out._backward = backward
        return out

    def dropout(self, x: DiffNode, rate: float, rng: np.random.Generator) -> DiffNode:
        """Training-mode dropout; eval mode is handled by not calling this."""
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        if rate == 0.0:
            return x
        keep = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
        out = self._new("dropout", (x,), x.value * keep, x.requires_grad, None)
        out._backward = lambda g: self._accum(x, g * keep)
        return out

    # -------------------------------------------------------------------- loss

    def softmax_cross_entropy(self, logits: DiffNode, labels, mask) -> DiffNode:
        """Mean negative log-likelihood over masked rows; row-max stabilized."""
        labels = np.asarray(labels, dtype=np.int64)
        idx = np.flatnonzero(np.asarray(mask, dtype=bool))
        if idx.size == 0:
            raise ContractError("softmax_cross_entropy needs a non-empty mask")
        lg = logits.value[idx]
        shifted = lg - lg.max(axis=1, keepdims=True)
        ex = np.exp(shifted)
        z = ex.sum(axis=1, keepdims=True)
        logp = shifted - np.log(z)
        picked = logp[np.arange(idx.size), labels[idx]]
        value = np.array([[-picked.mean()]])
        out = self._new("softmax_cross_entropy", (logits,), value, logits.requires_grad, None)

        def backward(g):
            p = ex / z
            p[np.arange(idx.size), labels[idx]] -= 1.0
            full = np.zeros_like(logits.value)
            full[idx] = (g[0, 0] / idx.size) * p
            self._accum(logits, full)

        out._backward = backward
        return out

    # --------------------------------------------------------------- attention

    def attention(self, closed: SparseMatrixCSR, x, w: DiffNode,
                  att_l: DiffNode, att_r: DiffNode, negative_slope: float) -> DiffNode:
        """Additive attention over the rows of a closed-neighborhood pattern.

        Per stored entry (i, j): score = LeakyReLU(att_l.(w.T xi) + att_r.(w.T xj)),
        normalized by softmax within row i; output row i is the score-weighted
        sum of the projected neighbor features.
        """
        n = closed.rows
        x_is_sparse = isinstance(x, SparseMatrixCSR)
        x_arr = None if x_is_sparse else _as_array(x)
        if (x.cols if x_is_sparse else x_arr.shape[1]) != w.shape[0]:
            raise DimensionError("attention: feature width does not match projection rows")
        if att_l.shape != (w.shape[1], 1) or att_r.shape != (w.shape[1], 1):
            raise DimensionError("attention: score vectors must be d_att x 1")

        rp, dst = closed.row_ptr, closed.col_idx
        counts = np.diff(rp)
        if np.any(counts == 0):
            raise ContractError("attention pattern must include a self-loop on every row")
        src = np.repeat(np.arange(n), counts)

        wx = _spmm_array(x, w.value) if x_is_sparse else x_arr @ w.value
        sl = (wx @ att_l.value).reshape(-1)
        sr = (wx @ att_r.value).reshape(-1)
        z = sl[src] + sr[dst]
        s = np.where(z > 0, z, negative_slope * z)
        row_max = np.maximum.reduceat(s, rp[:-1])
        e = np.exp(s - row_max[src])
        row_sum = np.add.reduceat(e, rp[:-1])
        alpha = e / row_sum[src]
        alpha_mat = SparseMatrixCSR(n, n, rp, dst, alpha, validate=False)
        out_val = _spmm_array(alpha_mat, wx)

        requires = w.requires_grad or att_l.requires_grad or att_r.requires_grad
        out = self._new("attention", (w, att_l, att_r), out_val, requires, None)
        out.kink_margin = float(np.min(np.abs(z))) if z.size else np.inf

        def backward(g):
            # note: a uniform shift of one row's scores cancels in the softmax,
            # so att_l only receives gradient through rows whose scores mix
            # both leaky branches
            dwx = _spmm_array(alpha_mat.transpose(), g)
            dalpha = np.einsum("ed,ed->e", g[src], wx[dst])
            row_dot = np.add.reduceat(alpha * dalpha, rp[:-1])
            ds = alpha * (dalpha - row_dot[src])
            dz = np.where(z > 0, ds, negative_slope * ds)
            dsl = np.add.reduceat(dz, rp[:-1])
            dsr = np.bincount(dst, weights=dz, minlength=n)
            dwx += np.outer(dsl, att_l.value.reshape(-1))
            dwx += np.outer(dsr, att_r.value.reshape(-1))
            self._accum(att_l, wx.T @ dsl.reshape(-1, 1))
            self._accum(att_r, wx.T @ dsr.reshape(-1, 1))
            if w.requires_grad:
                gw = _spmm_array(x.transpose(), dwx) if x_is_sparse else x_arr.T @ dwx
                self._accum(w, gw)

        out._backward = backward
        return out

    # ---------------------------------------------------------------- backward

    def backward(self, loss: DiffNode) -> dict[DiffNode, np.ndarray]:
        """Populate gradients of every reachable node; returns the gradient of
        each registered parameter (zeros when the loss does not reach it)."""
        if loss.value.shape != (1, 1):
            raise ContractError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        if loss.id >= len(self.nodes) or self.nodes[loss.id] is not loss:
            raise ContractError("loss node does not belong to this tape")
        loss.grad = np.ones((1, 1))
        for node in reversed(self.nodes[: loss.id + 1]):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)
        grads = {}
        for p in self.params:
            if p.grad is None:
                p.grad = np.zeros_like(p.value)
            grads[p] = p.grad
        return grads


def finite_diff_check(f: Callable[[Tape, DiffNode], DiffNode], point: DenseMatrix,
                      epsilon: float) -> float:
    """Compare the tape gradient of ``f`` against central finite differences.

    ``f`` receives a fresh tape and the input node and must return a scalar
    loss node. Returns the max over entries of |a-b| / max(|a|, |b|, 1e-8).
    """
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    base = _as_array(point)

    tape = Tape()
    x = tape.param(base.copy())
    loss = f(tape, x)
    if loss.value.shape != (1, 1):
        raise ContractError("finite_diff_check: f must produce a scalar loss")
    tape.backward(loss)
    analytic = x.grad

    def eval_at(arr):
        t = Tape()
        out = f(t, t.param(arr))
        v = out.value[0, 0]
        if not np.isfinite(v):
            raise NumericError("finite_diff_check: non-finite value at perturbed point")
        return v

    numeric = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        plus = base.copy()
        plus[i] += epsilon
        minus = base.copy()
        minus[i] -= epsilon
        numeric[i] = (eval_at(plus) - eval_at(minus)) / (2 * epsilon)
        it.iternext()

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
