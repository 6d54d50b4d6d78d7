"""Optimization and the two-phase training pipeline, plus the plain GCN
baseline and evaluation helpers."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, asdict

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - optional speed/determinism knob
    import contextlib

    def threadpool_limits(limits=None):
        return contextlib.nullcontext()

from .autodiff import Tape
from .concept import ConceptParams, ConceptualGraph, build_conceptual_graph
from .errors import ConfigError, ContractError, DimensionError, NumericError
from .graph_data import AttributedGraph, DataSplit, normalize_adjacency
from .layers import glorot
from .linalg import DenseMatrix, SparseMatrixCSR
from .stage1 import SoftPrediction, Stage1Model, stage1_graph
from .stage2 import Stage2Model, stage2_graph

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "EpochRecord",
    "MetricsLog",
    "BaselineGcn",
    "PipelineResult",
    "weight_decay_of",
    "sgd_momentum_step",
    "evaluate",
    "train_pipeline",
    "train_baseline_gcn",
    "stage1_eval_forward",
    "stage2_eval_forward",
    "baseline_eval_forward",
    "save_params_binary",
    "load_params_binary",
    "DATASET_DEFAULTS",
]

# Per-dataset hyperparameter defaults for the three citation benchmarks.
DATASET_DEFAULTS: dict[str, dict] = {
    "cora": dict(learning_rate=0.1, epochs=230, batch_size=20, dropout=0.2, hidden=16,
                 sigma=2.0, ratio_node=0.33, graph_size=40, negative_slope=0.2,
                 weight_decay_override=0.0004),
    "citeseer": dict(learning_rate=0.1, epochs=260, batch_size=40, dropout=0.4, hidden=32,
                     sigma=4.0, ratio_node=0.56, graph_size=100, negative_slope=0.2,
                     weight_decay_override=0.00035),
    "pubmed": dict(learning_rate=0.1, epochs=300, batch_size=80, dropout=0.6, hidden=64,
                   sigma=6.0, ratio_node=0.75, graph_size=150, negative_slope=0.2,
                   weight_decay_override=0.00029),
}


def weight_decay_of(learning_rate: float, epochs: int) -> float:
    """L2 coefficient tied to the schedule: learning_rate / epochs."""
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    return learning_rate / epochs


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    batch_size: int = 20
    momentum: float = 0.9
    gamma: float = 0.99
    dropout: float = 0.2
    hidden: int = 16
    negative_slope: float = 0.2
    weight_decay_override: float | None = None
    sigma: float = 2.0
    ratio_node: float = 0.33
    graph_size: int = 40
    seed: int = 0
    phase1_epochs: int | None = None
    include_original_edges: bool = True
    alpha: float = 0.5
    stochastic_concept_pass: bool = False
    finetune_stage1: bool = False
    row_normalize: bool = True
    train_ratio: float = 0.6
    val_ratio: float = 0.2

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.hidden < 1:
            raise ConfigError(f"hidden must be >= 1, got {self.hidden}")
        if self.resolved_phase1() >= self.epochs:
            raise ConfigError(
                f"phase1_epochs ({self.resolved_phase1()}) must be < epochs ({self.epochs})"
            )
        ConceptParams(self.sigma, self.ratio_node, self.graph_size,
                      self.include_original_edges, self.alpha)

    def resolved_phase1(self) -> int:
        return self.phase1_epochs if self.phase1_epochs is not None else max(1, self.epochs // 2)

    def weight_decay(self) -> float:
        if self.weight_decay_override is not None:
            return self.weight_decay_override
        return weight_decay_of(self.learning_rate, self.epochs)

    def concept_params(self) -> ConceptParams:
        return ConceptParams(self.sigma, self.ratio_node, self.graph_size,
                             self.include_original_edges, self.alpha)

    @classmethod
    def for_dataset(cls, name: str, **overrides) -> "TrainConfig":
        base = DATASET_DEFAULTS.get(name.lower(), {})
        merged = {**base, **overrides}
        return cls(**merged)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    current_lr: float = 0.0


def sgd_momentum_step(params: dict[str, DenseMatrix], grads: dict[str, np.ndarray],
                      state: OptimizerState, lr: float, momentum: float,
                      weight_decay: float) -> dict[str, DenseMatrix]:
    """v <- momentum*v - lr*(g + wd*w); w <- w + v. Returns new parameters."""
    updated = {}
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape {w.shape} for {name!r}"
            )
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(w.array)
        v = momentum * v - lr * (g + weight_decay * w.array)
        state.velocity[name] = v
        updated[name] = DenseMatrix._wrap(w.array + v)
    state.current_lr = lr
    return updated


def evaluate(probs: DenseMatrix, labels, mask) -> float:
    """Fraction of masked nodes whose argmax matches the label."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractError("evaluate needs a non-empty mask")
    arr = probs.array if isinstance(probs, DenseMatrix) else np.asarray(probs)
    pred = np.argmax(arr[mask], axis=1)
    return float(np.mean(pred == np.asarray(labels)[mask]))


# --------------------------------------------------------------------- metrics


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float
    lr: float
    wall_ms: float


@dataclass
class MetricsLog:
    records: list[EpochRecord] = field(default_factory=list)

    CSV_HEADER = ["epoch", "train_loss", "val_loss", "train_acc", "val_acc", "lr", "wall_ms"]

    def add(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ContractError("epochs must be strictly increasing")
        self.records.append(record)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER)
            for r in self.records:
                writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss),
                                 repr(r.train_acc), repr(r.val_acc), repr(r.lr),
                                 repr(r.wall_ms)])

    @classmethod
    def from_csv(cls, path) -> "MetricsLog":
        log = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                log.add(EpochRecord(
                    epoch=int(row["epoch"]),
                    train_loss=float(row["train_loss"]),
                    val_loss=float(row["val_loss"]),
                    train_acc=float(row["train_acc"]),
                    val_acc=float(row["val_acc"]),
                    lr=float(row["lr"]),
                    wall_ms=float(row["wall_ms"]),
                ))
        return log


# ----------------------------------------------------------------- eval passes


def stage1_eval_forward(model: Stage1Model, g: AttributedGraph, a_hat: SparseMatrixCSR,
                        x_block=None) -> dict:
    tape = Tape()
    out = stage1_graph(tape, model, g, a_hat, 0.0, "eval",
                       x_block=x_block, trainable=False)
    return {
        "h_high": out["h_high"].matrix(),
        "logits": out["logits"].matrix(),
        "P": SoftPrediction(out["probs"].matrix()),
    }


def stage2_eval_forward(model: Stage2Model, c_norm: SparseMatrixCSR, blocks) -> dict:
    tape = Tape()
    out = stage2_graph(tape, model, c_norm, blocks, 0.0, "eval", trainable=False)
    return {"logits": out["logits"].matrix(), "probs": out["probs"].matrix()}


# -------------------------------------------------------------------- baseline


@dataclass
class BaselineGcn:
    W0: DenseMatrix
    W1: DenseMatrix

    @classmethod
    def initialize(cls, m: int, hidden: int, c: int, rng: np.random.Generator) -> "BaselineGcn":
        return cls(W0=glorot(m, hidden, rng), W1=glorot(hidden, c, rng))

    def params(self) -> dict[str, DenseMatrix]:
        return {"W0": self.W0, "W1": self.W1}

    def with_params(self, p: dict[str, DenseMatrix]) -> "BaselineGcn":
        return BaselineGcn(W0=p["W0"], W1=p["W1"])


def _baseline_graph(tape: Tape, model: BaselineGcn, a_hat: SparseMatrixCSR, x_block,
                    trainable: bool = True) -> dict:
    bind = tape.param if trainable else tape.const
    pn = {name: bind(mat) for name, mat in model.params().items()}
    h = tape.relu(tape.spmm(a_hat, tape.linear_blocks([x_block], pn["W0"])))
    logits = tape.spmm(a_hat, tape.linear_blocks([h], pn["W1"]))
    probs = tape.row_softmax(logits)
    return {"params": pn, "logits": logits, "probs": probs}


def baseline_eval_forward(model: BaselineGcn, a_hat: SparseMatrixCSR, x_block) -> dict:
    tape = Tape()
    out = _baseline_graph(tape, model, a_hat, x_block, trainable=False)
    return {"logits": out["logits"].matrix(), "probs": out["probs"].matrix()}


# --------------------------------------------------------------- training loop


def _masked_loss_value(logits: DenseMatrix, labels, mask) -> float:
    tape = Tape()
    node = tape.softmax_cross_entropy(tape.const(logits), labels, mask)
    return float(node.value[0, 0])


def _batch_masks(labeled: np.ndarray, batch_size: int, n: int,
                 rng: np.random.Generator):
    """Shuffled minibatch masks covering every labeled node once per epoch.
    Losses reduce over boolean masks, so only batch membership matters."""
    perm = rng.permutation(labeled)
    for lo in range(0, len(perm), batch_size):
        mask = np.zeros(n, dtype=bool)
        mask[perm[lo:lo + batch_size]] = True
        yield mask


def _check_finite_loss(value: float) -> None:
    if not np.isfinite(value):
        raise NumericError(f"training loss became non-finite ({value})")


@dataclass
class PipelineResult:
    stage1: Stage1Model
    concept: ConceptualGraph
    stage2: Stage2Model
    metrics: MetricsLog


def _prepare(config: TrainConfig, g: AttributedGraph, split: DataSplit):
    config.validate()
    split.validate()
    if len(split.train_mask) != g.n:
        raise ContractError("split masks do not match the graph size")
    if not split.train_mask.any():
        raise ContractError("train mask is empty")
    gg = g.with_row_normalized_features() if config.row_normalize else g
    return gg, normalize_adjacency(gg), gg.features_csr()


def train_pipeline(config: TrainConfig, g: AttributedGraph, split: DataSplit) -> PipelineResult:
    """Phase A trains the soft-prediction extractor; its eval-mode output
    builds the conceptual graph; phase B trains the final classifier on it.
    Fully deterministic for a fixed config and seed."""
    with threadpool_limits(limits=1):
        return _train_pipeline(config, g, split)


def _train_pipeline(config: TrainConfig, g: AttributedGraph, split: DataSplit) -> PipelineResult:
    gg, a_hat, x_sparse = _prepare(config, g, split)
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    rng_init = np.random.default_rng(seeds[0])
    rng_shuffle = np.random.default_rng(seeds[1])
    rng_dropout = np.random.default_rng(seeds[2])

    m, c = gg.num_features, gg.class_count
    hidden = config.hidden
    stage1 = Stage1Model.initialize(m, hidden, hidden, hidden, c,
                                    config.negative_slope, rng_init)
    stage2 = Stage2Model.initialize(m + hidden + c, hidden, c,
                                    config.negative_slope, rng_init)

    labeled = np.flatnonzero(split.train_mask)
    wd = config.weight_decay()
    phase1 = config.resolved_phase1()
    lr = config.learning_rate
    log = MetricsLog()
    state = OptimizerState()

    for epoch in range(1, phase1 + 1):
        t0 = time.perf_counter()
        for mask in _batch_masks(labeled, config.batch_size, gg.n, rng_shuffle):
            tape = Tape()
            out = stage1_graph(tape, stage1, gg, a_hat, config.dropout, "train",
                               rng_dropout, x_block=x_sparse)
            loss = tape.softmax_cross_entropy(out["logits"], gg.labels, mask)
            _check_finite_loss(loss.value[0, 0])
            grads = tape.backward(loss)
            by_name = {name: grads[node] for name, node in out["params"].items()}
            stage1 = stage1.with_params(
                sgd_momentum_step(stage1.params(), by_name, state, lr,
                                  config.momentum, wd)
            )
        ev = stage1_eval_forward(stage1, gg, a_hat, x_block=x_sparse)
        log.add(EpochRecord(
            epoch=epoch,
            train_loss=_masked_loss_value(ev["logits"], gg.labels, split.train_mask),
            val_loss=_masked_loss_value(ev["logits"], gg.labels, split.val_mask),
            train_acc=evaluate(ev["P"].P, gg.labels, split.train_mask),
            val_acc=evaluate(ev["P"].P, gg.labels, split.val_mask),
            lr=lr,
            wall_ms=(time.perf_counter() - t0) * 1000.0,
        ))
        lr *= config.gamma

    # conceptual graph from the frozen extractor; stage-2 inputs always come
    # from the eval-mode pass
    eval_stage1 = stage1_eval_forward(stage1, gg, a_hat, x_block=x_sparse)
    if config.stochastic_concept_pass:
        tape = Tape()
        out = stage1_graph(tape, stage1, gg, a_hat, config.dropout, "train",
                           rng_dropout, x_block=x_sparse, trainable=False)
        p_concept = SoftPrediction(out["probs"].matrix())
    else:
        p_concept = eval_stage1["P"]
    concept = build_conceptual_graph(
        p_concept, config.concept_params(),
        original=gg.adjacency if config.include_original_edges else None,
    )
    fixed_blocks = [x_sparse, eval_stage1["h_high"], eval_stage1["P"].P]

    opt_state2 = OptimizerState()
    for epoch in range(phase1 + 1, config.epochs + 1):
        t0 = time.perf_counter()
        for mask in _batch_masks(labeled, config.batch_size, gg.n, rng_shuffle):
            tape = Tape()
            if config.finetune_stage1:
                s1 = stage1_graph(tape, stage1, gg, a_hat, config.dropout, "train",
                                  rng_dropout, x_block=x_sparse)
                blocks = [x_sparse, s1["h_high"], s1["probs"]]
            else:
                blocks = fixed_blocks
            out = stage2_graph(tape, stage2, concept.normalized, blocks,
                               config.dropout, "train", rng_dropout)
            loss = tape.softmax_cross_entropy(out["logits"], gg.labels, mask)
            _check_finite_loss(loss.value[0, 0])
            grads = tape.backward(loss)
            by_name2 = {name: grads[node] for name, node in out["params"].items()}
            stage2 = stage2.with_params(
                sgd_momentum_step(stage2.params(), by_name2, opt_state2, lr,
                                  config.momentum, wd)
            )
            if config.finetune_stage1:
                by_name1 = {name: grads[node] for name, node in s1["params"].items()}
                stage1 = stage1.with_params(
                    sgd_momentum_step(stage1.params(), by_name1, state, lr,
                                      config.momentum, wd)
                )
        if config.finetune_stage1:
            ev1 = stage1_eval_forward(stage1, gg, a_hat, x_block=x_sparse)
            fixed_blocks = [x_sparse, ev1["h_high"], ev1["P"].P]
        ev2 = stage2_eval_forward(stage2, concept.normalized, fixed_blocks)
        log.add(EpochRecord(
            epoch=epoch,
            train_loss=_masked_loss_value(ev2["logits"], gg.labels, split.train_mask),
            val_loss=_masked_loss_value(ev2["logits"], gg.labels, split.val_mask),
            train_acc=evaluate(ev2["probs"], gg.labels, split.train_mask),
            val_acc=evaluate(ev2["probs"], gg.labels, split.val_mask),
            lr=lr,
            wall_ms=(time.perf_counter() - t0) * 1000.0,
        ))
        lr *= config.gamma

    return PipelineResult(stage1=stage1, concept=concept, stage2=stage2, metrics=log)


def train_baseline_gcn(config: TrainConfig, g: AttributedGraph,
                       split: DataSplit) -> tuple[BaselineGcn, MetricsLog]:
    """Two-layer renormalized GCN trained with the same optimizer and
    schedule; the comparison point for the staged pipeline."""
    with threadpool_limits(limits=1):
        return _train_baseline_gcn(config, g, split)


def _train_baseline_gcn(config: TrainConfig, g: AttributedGraph,
                        split: DataSplit) -> tuple[BaselineGcn, MetricsLog]:
    gg, a_hat, x_sparse = _prepare(config, g, split)
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    rng_init = np.random.default_rng(seeds[0])
    rng_shuffle = np.random.default_rng(seeds[1])

    model = BaselineGcn.initialize(gg.num_features, config.hidden, gg.class_count, rng_init)
    labeled = np.flatnonzero(split.train_mask)
    wd = config.weight_decay()
    lr = config.learning_rate
    state = OptimizerState()
    log = MetricsLog()

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        for mask in _batch_masks(labeled, config.batch_size, gg.n, rng_shuffle):
            tape = Tape()
            out = _baseline_graph(tape, model, a_hat, x_sparse)
            loss = tape.softmax_cross_entropy(out["logits"], gg.labels, mask)
            _check_finite_loss(loss.value[0, 0])
            grads = tape.backward(loss)
            by_name = {name: grads[node] for name, node in out["params"].items()}
            model = model.with_params(
                sgd_momentum_step(model.params(), by_name, state, lr,
                                  config.momentum, wd)
            )
        ev = baseline_eval_forward(model, a_hat, x_sparse)
        log.add(EpochRecord(
            epoch=epoch,
            train_loss=_masked_loss_value(ev["logits"], gg.labels, split.train_mask),
            val_loss=_masked_loss_value(ev["logits"], gg.labels, split.val_mask),
            train_acc=evaluate(ev["probs"], gg.labels, split.train_mask),
            val_acc=evaluate(ev["probs"], gg.labels, split.val_mask),
            lr=lr,
            wall_ms=(time.perf_counter() - t0) * 1000.0,
        ))
        lr *= config.gamma
    return model, log


# ----------------------------------------------------------------- persistence


def save_params_binary(path, params: dict[str, DenseMatrix]) -> dict:
    """Concatenated little-endian float64 blob; returns the shape manifest."""
    order = list(params)
    with open(path, "wb") as fh:
        for name in order:
            fh.write(params[name].array.astype("<f8").tobytes())
    return {"order": order, "shapes": {name: list(params[name].shape) for name in order}}


def load_params_binary(path, manifest: dict) -> dict[str, DenseMatrix]:
    out = {}
    raw = np.fromfile(path, dtype="<f8")
    offset = 0
    for name in manifest["order"]:
        r, c = manifest["shapes"][name]
        size = r * c
        if offset + size > raw.size:
            raise ContractError(f"parameter file too short for {name!r}")
        out[name] = DenseMatrix(raw[offset:offset + size].reshape(r, c).astype(np.float64))
        offset += size
    if offset != raw.size:
        raise ContractError("parameter file holds trailing bytes beyond the manifest")
    return out
