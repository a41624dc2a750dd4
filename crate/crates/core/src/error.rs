use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("row index {index} out of range for table '{table}' (limit {limit})")]
    IndexOutOfRange {
        table: String,
        index: u64,
        limit: u64,
    },

    #[error("bag {bag}, position {position}: row index {index} out of range (table has {num_rows} rows)")]
    LookupOutOfRange {
        bag: usize,
        position: usize,
        index: u64,
        num_rows: u64,
    },

    #[error("invalid index batch: {0}")]
    InvalidBatch(String),

    #[error("per-sample weights have length {got}, expected {expected}")]
    WeightLengthMismatch { expected: usize, got: usize },

    #[error("stale or mismatched forward context: {0}")]
    StaleContext(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dense reconstruction needs {elements} elements, limit is {limit}")]
    TooLarge { elements: u128, limit: u128 },

    #[error("invalid initializer: {0}")]
    InvalidInit(String),

    #[error("rejection sampling exceeded {cap} redraws in core {core}")]
    RejectionCapExceeded { core: usize, cap: usize },

    #[error("cache slot {0} is not resident")]
    SlotNotResident(usize),

    #[error("cache state: {0}")]
    CacheState(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
