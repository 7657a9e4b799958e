use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{operand}`: expected {expected}, got {got}")]
    Dimension {
        operand: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value at time index {index}")]
    NonFinite { index: usize },

    #[error("non-finite input at time index {index}")]
    NonFiniteInput { index: usize },

    #[error("simulation of sequence {sequence} blew up: non-finite output at time index {index}")]
    SequenceBlowup { sequence: usize, index: usize },

    #[error("non-finite activation in {layer} at time index {time}")]
    NonFiniteActivation { layer: String, time: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unknown system `{name}`; valid names: {valid}")]
    UnknownPreset { name: String, valid: String },

    #[error("unknown layer `{name}`; valid layers: {valid}")]
    UnknownLayer { name: String, valid: String },

    #[error("malformed file at byte {offset}: expected {expected}")]
    Format { offset: u64, expected: String },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u16, supported: u16 },

    #[error("forward cache does not match the network or labels: {0}")]
    StaleCache(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("threshold mismatch: baseline uses {baseline}, transferred uses {transferred}")]
    ThresholdMismatch { baseline: f64, transferred: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(operand: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            operand,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
