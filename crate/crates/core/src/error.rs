use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite sample: {0}")]
    NonFinite(f64),
    #[error("invalid quantizer: {0}")]
    InvalidQuantizer(String),
    #[error("index {index} out of range for {bits}-bit quantizer")]
    IndexOutOfRange { index: u64, bits: u32 },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("singular subchannel {index}: |h| = {magnitude:e}")]
    SingularSubchannel { index: usize, magnitude: f64 },
    #[error("invalid probability {0}")]
    InvalidProbability(f64),
    #[error("budget {budget} cannot give every one of {count} semantics a bit")]
    InsufficientBudget { budget: usize, count: usize },
    #[error("{0}")]
    Infeasible(String),
    #[error("non-finite value in {0}")]
    Divergence(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("knowledge base: {0}")]
    KnowledgeBase(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("episode failed at stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// True for errors that come from bad user configuration rather than a
    /// failure during a run.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::InvalidQuantizer(_)
            | Error::InsufficientBudget { .. }
            | Error::KnowledgeBase(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
