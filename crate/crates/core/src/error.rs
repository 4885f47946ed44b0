use std::path::PathBuf;

use thiserror::Error;

/// Failures raised by tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("index {index} out of range for extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },

    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("empty reduction along axis {axis}")]
    EmptyReduction { axis: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("degenerate projection vector (norm {0:e})")]
    DegenerateProjection(f64),

    #[error("tape was consumed by a previous backward pass")]
    TapeConsumed,

    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
}

/// Failures raised while loading, generating, or splitting graphs.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },

    #[error("{file}:{line}: node {id} does not exist (graph has {nodes} nodes)")]
    DanglingNode {
        file: String,
        line: usize,
        id: usize,
        nodes: usize,
    },

    #[error("nodes.tsv:{line}: duplicate node id {id}")]
    DuplicateNode { line: usize, id: usize },

    #[error("node ids must be dense 0..N-1; node {0} is missing")]
    MissingNode(usize),

    #[error("features.tsv: no feature row for node {0}")]
    MissingFeatures(usize),

    #[error("unknown relation id {0}")]
    UnknownRelation(usize),

    #[error("node {node} out of range for {nodes} nodes")]
    NodeOutOfRange { node: usize, nodes: usize },

    #[error("invalid generator parameters: {0}")]
    InvalidGenerator(String),

    #[error("invalid split ratios {0:?}: must be positive and sum to 1")]
    InvalidRatios((f64, f64, f64)),

    #[error("need at least 3 labeled nodes to split, found {0}")]
    TooFewLabeled(usize),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Crate-level error covering model construction, training, and persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error("non-finite {what} at epoch {epoch} in parameter {param}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        param: String,
    },

    #[error("non-finite training loss at epoch {0}")]
    NonFiniteLoss(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model does not fit this graph: {0}")]
    Incompatible(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("xavier initialization needs positive fan-in and fan-out, got ({0}, {1})")]
    ZeroFan(usize, usize),

    #[error("metric input: {0}")]
    Metric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
