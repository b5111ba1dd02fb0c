use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer {layer}: {detail}")]
    Layer { layer: usize, detail: String },

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("non-finite gradient in parameter {param} at index {index}")]
    NonFiniteGradient { param: usize, index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("every maskable weight would be pruned")]
    AllPruned,

    #[error("precision {requested} exceeds the enumeration cap of {cap} bits")]
    PrecisionCap { requested: u32, cap: u32 },

    #[error("value {0} is not representable within the enumeration cap")]
    NotRepresentable(f64),

    #[error("zero-precision allocation needs per-parameter precisions, got {0}")]
    Granularity(String),

    #[error("layer {0} has an all-zero coefficient vector; similarity is undefined")]
    ZeroCoefficients(usize),

    #[error("grid generation failed after {0} attempts")]
    ResampleBudget(usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("checkpoint version mismatch: file has v{found}, reader supports v{expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint holds a `{found}` payload, expected `{expected}`")]
    CheckpointKind { found: String, expected: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
