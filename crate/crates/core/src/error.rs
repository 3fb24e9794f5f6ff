use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not Hermitian (defect {defect:.3e} at grid point {point})")]
    NotHermitian { point: usize, defect: f64 },

    #[error("not a projection (defect {defect:.3e} at grid point {point})")]
    NotProjection { point: usize, defect: f64 },

    #[error("not positive: minimum eigenvalue {min_eig:.3e} at grid point {point}")]
    NotPositive { point: usize, min_eig: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cutoff hypothesis violated: trace {trace:.6} does not exceed {bound:.6}")]
    CutoffHypothesis { trace: f64, bound: f64 },

    #[error("rank condition violated at grid point {point}: {detail}")]
    RankCondition { point: usize, detail: String },

    #[error("generators are not orthonormalized (defect {defect:.3e})")]
    NotOrthonormal { defect: f64 },

    #[error("insufficient residual rank: {0}")]
    InsufficientRank(String),

    #[error("uncertified input: {0}")]
    Uncertified(String),

    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),

    #[error("rational approximation of theta = {theta} needs a denominator above q_max = {q_max}")]
    DenominatorOverflow { theta: f64, q_max: u64 },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
