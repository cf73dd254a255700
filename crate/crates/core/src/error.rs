use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("zero-norm vector in {0}")]
    ZeroNorm(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("labels contain a single class; both classes are required ({0})")]
    SingleClass(&'static str),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("training diverged at epoch {epoch}, step {step}: non-finite {what}")]
    Diverged {
        epoch: usize,
        step: usize,
        what: String,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, expected: impl core::fmt::Display, got: impl core::fmt::Display) -> Self {
        use alloc::string::ToString;
        Error::Dimension {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
