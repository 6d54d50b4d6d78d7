"""Two-stage graph convolutional node classifier with a similarity-graph
intermediate stage, built on an in-package autodiff and CSR sparse core."""

from .autodiff import DiffNode, Tape, finite_diff_check
from .concept import ConceptParams, ConceptualGraph, build_conceptual_graph, kernel_weight
from .errors import (
    ConceptGcnError,
    ConfigError,
    ContractError,
    DimensionError,
    NumericError,
    ParseError,
    SchemaError,
    SplitError,
)
from .graph_data import (
    AttributedGraph,
    DataSplit,
    DatasetStats,
    load_json_graph,
    make_splits,
    normalize_adjacency,
    parse_linqs,
    save_json_graph,
    sym_normalize,
)
from .layers import (
    AttentionParams,
    EncoderParams,
    GcnLayerParams,
    attention_layer,
    dropout,
    encoder,
    gcn_layer,
    softmax_cross_entropy,
)
from .linalg import DenseMatrix, SparseMatrixCSR, matmul, spmm
from .stage1 import SoftPrediction, Stage1Model, fuse_inputs, stage1_forward
from .stage2 import Stage2Model, fuse_stage2, predict, stage2_forward
from .synthetic import make_synthetic_graph
from .training import (
    BaselineGcn,
    MetricsLog,
    OptimizerState,
    PipelineResult,
    TrainConfig,
    evaluate,
    sgd_momentum_step,
    train_baseline_gcn,
    train_pipeline,
    weight_decay_of,
)

__version__ = "0.1.0"
