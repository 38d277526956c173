use crate::trajectory::Violation;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{file} line {line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("edge {edge} references unknown node {node}")]
    DanglingEndpoint { edge: u64, node: u64 },
    #[error("edge {edge}: length must be positive, got {length}")]
    NonPositiveLength { edge: u64, length: f64 },
    #[error("edge {edge}: self-loop on node {node}")]
    SelfLoop { edge: u64, node: u64 },
    #[error("duplicate node id {0}")]
    DuplicateNode(u64),
    #[error("duplicate edge id {0}")]
    DuplicateEdgeId(u64),
    #[error("duplicate edge {src} -> {dst} (edges {first} and {second})")]
    DuplicateEdge {
        src: u64,
        dst: u64,
        first: u64,
        second: u64,
    },
    #[error("node {node}: coordinate out of range ({what})")]
    CoordinateRange { node: u64, what: String },
    #[error("unknown node {0}")]
    UnknownNode(u64),
    #[error("unknown edge {0}")]
    UnknownEdge(u64),
    #[error("time of day {0} outside [0, 86400)")]
    TimeRange(i64),
    #[error("parameter {name}: {msg}")]
    Param { name: &'static str, msg: String },
    #[error(
        "trajectory {id} invalid: {}",
        crate::trajectory::describe_violations(violations)
    )]
    InvalidTrajectory {
        id: String,
        violations: Vec<Violation>,
    },
    #[error("trajectory database is empty")]
    EmptyDatabase,
    #[error("history {history:?} is not anchored at node {expected}")]
    AnchorMismatch { history: Vec<u64>, expected: u64 },
    #[error("observation pair {from} -> {to} is unreachable under the model")]
    UnreachablePair { from: u64, to: u64 },
    #[error("sampling for pair {from} -> {to} exhausted {attempts} attempts")]
    AttemptsExhausted { from: u64, to: u64, attempts: usize },
    #[error("no historical trajectory supports the query")]
    NoSupport,
    #[error("enumeration budget exceeded ({0})")]
    BudgetExceeded(String),
    #[error("model file corrupt: {0}")]
    CorruptModel(String),
    #[error("unsupported model file version {0}")]
    ModelVersion(u8),
    #[error("model fingerprint {model:#018x} does not match network {network:#018x}")]
    FingerprintMismatch { model: u64, network: u64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("node {0} is not part of the uncertain trajectory")]
    NodeNotInResult(u64),
    #[error("path is not a source-to-destination path of the uncertain trajectory: {0}")]
    PathNotInResult(String),
    #[error("no arrival-time samples retained")]
    NoTimeSamples,
    #[error("uncertain trajectory is empty or has no source-to-destination path")]
    EmptyResult,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
