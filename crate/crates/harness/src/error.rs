use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] ttrec_core::Error),

    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("config [{section}] {key}: {message}")]
    ConfigValue {
        section: String,
        key: String,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("criteo line {line}: expected {expected} fields, found {found}")]
    CriteoColumns {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("criteo line {line}: {message}")]
    CriteoMalformed { line: usize, message: String },

    #[error("training diverged at iteration {iter}: loss {loss} ({detail})")]
    Diverged {
        iter: usize,
        loss: f64,
        detail: String,
    },

    #[error("data source exhausted after {0} batches")]
    Exhausted(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
