use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("network graph contains a cycle through node {0}")]
    CycleDetected(usize),
    #[error("parent {parent} of node {node} has no assigned value")]
    UnassignedParent { node: usize, parent: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("network has {nodes} nodes, exact inference is limited to {limit}")]
    TooLarge { nodes: usize, limit: usize },
    #[error("evidence has zero probability under the network")]
    ImpossibleEvidence,
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite gradient at iteration {iteration}: {detail}")]
    NonFiniteGradient { iteration: usize, detail: String },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("proposal requires a trained model but none was supplied")]
    ModelMissing,
    #[error("every importance weight is zero")]
    AllZeroWeights,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("input has zero variance")]
    DegenerateInput,
    #[error("unknown node name `{0}`")]
    UnknownNode(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
