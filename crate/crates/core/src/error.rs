use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("no records")]
    NoRecords,

    #[error("bad header: expected `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate cell at ({instance}, c={checkpoint})")]
    DuplicateCell { instance: String, checkpoint: u64 },

    #[error("unbalanced panel at ({instance}, c={checkpoint})")]
    Unbalanced { instance: String, checkpoint: u64 },

    #[error("instance {instance} carries conflicting groups {first} and {second}")]
    ConflictingGroup {
        instance: String,
        first: String,
        second: String,
    },

    #[error("duplicate instance id {0}")]
    DuplicateInstance(String),

    #[error("non-finite outcome at ({instance}, c={checkpoint})")]
    NonFiniteOutcome { instance: String, checkpoint: u64 },

    #[error("panel has no validation (group = inf) instances")]
    NoValidation,

    #[error("treatment step {0} has no earlier checkpoint to anchor on")]
    NoBaseline(u64),

    #[error("group {0} has no instances")]
    EmptyGroup(String),

    #[error("checkpoint {0} is not in the checkpoint grid")]
    UnknownCheckpoint(u64),

    #[error("treatment step {0} is not in the treatment grid")]
    UnknownTreatment(u64),

    #[error("cell (g={g}, c={c}) is inadmissible: c < g")]
    Inadmissible { g: u64, c: u64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("extractability outcome {0} outside [0, 1]")]
    OutcomeOutOfRange(f64),

    #[error("run ensemble has an empty {0} list")]
    EmptyEnsemble(&'static str),

    #[error("degenerate: no sampling variation")]
    Degenerate,

    #[error("invalid bootstrap request: {0}")]
    Bootstrap(String),

    #[error("cell sets differ: {0}")]
    CellMismatch(String),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("invalid config: {0}")]
    Config(String),
}
