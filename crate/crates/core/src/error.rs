use thiserror::Error;

/// Errors raised by validation, the numerical kernels and the conversions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("noise variance must be positive, got {0}")]
    NoiseVariance(f64),

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("invalid user permutation: {0}")]
    Permutation(String),

    #[error("matrix is not Hermitian: asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NotHermitian { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min:e}, largest {max:e}")]
    NotPositiveSemidefinite { min: f64, max: f64 },

    #[error("nonpositive pivot {value:e} at row {index}")]
    NonPositivePivot { index: usize, value: f64 },

    #[error("matrix is not upper triangular: entry ({row}, {col}) is {value:e}")]
    NotTriangular { row: usize, col: usize, value: f64 },

    #[error("singular linear system")]
    Singular,

    #[error("determinant argument {0:e} below the representable floor")]
    DeterminantUnderflow(f64),

    #[error("error covariance is not in (0, 1]: eigenvalue {0:e}")]
    InvalidErrorCovariance(f64),

    #[error("SINR of stream ({user}, {stream}) is undefined: zero receive filter on a nonzero transmit filter")]
    UndefinedSinr { user: usize, stream: usize },

    #[error("scaling factor of active stream ({user}, {stream}) is zero")]
    ZeroScaling { user: usize, stream: usize },

    #[error("scaling solve produced a negative factor {0:e}")]
    NegativeScaling(f64),

    #[error("receive filters of user {user} do not decorrelate its link: off-diagonal {off_diagonal:e} vs diagonal {diagonal:e}")]
    NotDecorrelated {
        user: usize,
        off_diagonal: f64,
        diagonal: f64,
    },

    #[error("dual power {dual:e} exceeds primal power {primal:e}")]
    PowerExceeded { primal: f64, dual: f64 },

    #[error("missing {0}")]
    Missing(&'static str),

    #[error("cross-validation mismatch for user {user}: filter path {filter:.12} vs covariance path {covariance:.12}")]
    CrossValidation {
        user: usize,
        filter: f64,
        covariance: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
