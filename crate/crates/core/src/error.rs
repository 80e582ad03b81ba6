use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error("line {line}: expected {expected} columns, found {found}")]
    InconsistentColumns {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-monotonic grid: wavenumbers must be strictly increasing (at index {index})")]
    NonMonotonicGrid { index: usize },

    #[error("grid needs at least 2 samples, got {0}")]
    GridTooShort(usize),

    #[error("non-finite intensity at index {index}")]
    NonFinite { index: usize },

    #[error("negative intensity {value} in library entry `{name}`")]
    NegativeReference { name: String, value: f64 },

    #[error("duplicate name `{0}`")]
    DuplicateName(String),

    #[error("unknown substance `{0}`")]
    UnknownSubstance(String),

    #[error("grids do not overlap")]
    NoOverlap,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("index {index} out of range for {len} columns")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("duplicate index {0}")]
    DuplicateIndex(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is rank deficient")]
    RankDeficient,

    #[error("zero-norm spectrum cannot be compared")]
    ZeroNorm,

    #[error("linearized Bregman diverged at iteration {iteration} (relative fit {fit:.3e}, best {best:.3e}); reduce the step size")]
    Diverged {
        iteration: usize,
        fit: f64,
        best: f64,
    },

    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("infeasible generator configuration: {0}")]
    InfeasibleConfig(String),

    #[error("candidate {candidate} does not exist ({count} candidates)")]
    UnknownCandidate { candidate: usize, count: usize },

    #[error("candidate {0} is already decided")]
    AlreadyDecided(usize),

    #[error("`{0}` is already a known component")]
    AlreadyKnown(String),

    #[error("candidates {0:?} are undecided")]
    UndecidedCandidates(Vec<usize>),

    #[error("session is {0}; no further iterations")]
    SessionFinished(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
