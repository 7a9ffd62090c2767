use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed for field `{0}`")]
    Validation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("waveform too short: {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("batch contains a single class; mixup needs at least two")]
    SingleClass,
    #[error("target index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("backbone layer {0} not present")]
    MissingLayer(usize),
    #[error("utterance id `{0}` missing from embedding map")]
    MissingUtterance(String),
    #[error("trial list needs at least one target and one nontarget")]
    DegenerateTrials,
    #[error("checkpoint format mismatch: {0}")]
    Version(String),
    #[error("wav error: {0}")]
    Wav(String),
}

pub type Result<T> = std::result::Result<T, Error>;
