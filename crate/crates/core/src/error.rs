//! Error types shared across the workspace.

/// All failure modes surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rank-deficient matrix: smallest singular value {sigma_min:.3e} at or below tolerance {tol:.3e}")]
    RankDeficient { sigma_min: f64, tol: f64 },

    #[error("ML search space too large: Nt={nt} exceeds the exhaustive-search limit of {limit}")]
    SearchSpaceTooLarge { nt: usize, limit: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("anchor mismatch: {0}")]
    AnchorMismatch(String),

    #[error("checkpoint format version mismatch: expected {expected}, found {found}")]
    FormatVersionMismatch { expected: u32, found: u32 },

    #[error("corrupt blob: {0}")]
    CorruptBlob(String),

    #[error("empty gradient-significance log")]
    EmptyLog,

    #[error("expansion strategy unavailable: {0}")]
    StrategyUnavailable(String),

    #[error("incompatible geometry: {0}")]
    IncompatibleGeometry(String),

    #[error("transfer scheme requires a source task")]
    MissingSource,

    #[error("learngene scheme requires an extracted unit")]
    MissingUnit,

    #[error("zero variance input to correlation")]
    ZeroVariance,

    #[error("degenerate SER: matched SER is zero for task {0}")]
    DegenerateSer(u64),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
