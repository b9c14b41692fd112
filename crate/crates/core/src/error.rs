use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {pre} is full (capacity {capacity})")]
    RowFull { pre: usize, capacity: usize },
    #[error("synapse {pre} -> {post} already exists")]
    DuplicateEdge { pre: usize, post: usize },
    #[error("slot {slot} out of range for row {pre} (length {len})")]
    SlotOutOfRange { pre: usize, slot: usize, len: usize },
    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("cannot draw {k} distinct values from {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("unresolved reference `{0}`")]
    UnresolvedReference(String),
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("unknown update group `{0}`")]
    UnknownGroup(String),
    #[error("transpose of `{0}` is stale")]
    StaleTranspose(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("rule `{rule}` failed: {message}")]
    Rule { rule: String, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training diverged at batch {0}")]
    Diverged(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
