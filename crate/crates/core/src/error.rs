use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidOp { op: &'static str, msg: String },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("function value is not finite at coordinate {coordinate}")]
    NonFinite { coordinate: usize },
    #[error("utterance too short: {len} samples, need at least {needed}")]
    UtteranceTooShort { len: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient at attack iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
    #[error("empty score set")]
    EmptyScores,
    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),
    #[error("insufficient utterances: short by {target_shortfall} target and {nontarget_shortfall} non-target pairs")]
    InsufficientUtterances {
        target_shortfall: usize,
        nontarget_shortfall: usize,
    },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("class index {index} out of range for {classes} classes")]
    InvalidClass { index: usize, classes: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
