use thiserror::Error;

/// Errors raised by model validation and the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} is not Hermitian (‖A − A†‖ = {residual:.3e})")]
    NotHermitian { what: String, residual: f64 },

    #[error("collapse operator is not a contraction (min eigenvalue of I − C†C = {min_eig:.3e})")]
    NotContraction { min_eig: f64 },

    #[error("dilation is not unitary: ‖S†S − I‖ = {residual:.3e}")]
    NotUnitary { residual: f64 },

    #[error("intensity lambda must be finite and non-negative, got {0}")]
    NegativeIntensity(f64),

    #[error("rate operator R is inconsistent with C: ‖(I − R/λ) − C‖ = {residual:.3e}")]
    InconsistentR { residual: f64 },

    #[error("matrix has eigenvalue {min_eig:.3e} below the PSD floor")]
    TooNegative { min_eig: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("model has no rate operator R")]
    MissingRate,

    #[error("R + R† is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotDissipative { min_eig: f64 },

    #[error("test function is not admissible: |1 + λ^(-1/2) f| = {modulus:.6} > 1 on cell {cell}")]
    InadmissibleTestFunction { cell: usize, modulus: f64 },

    #[error("test functions do not share a grid and lambda")]
    GridMismatch,

    #[error("time tuple is not strictly increasing inside [0, t)")]
    UnorderedTuple,

    #[error("Dyson truncation order {needed} exceeds the cap {cap}")]
    TruncationBudgetExceeded { needed: usize, cap: usize },

    #[error("dilated state would carry {needed} meters, cap is {cap}")]
    MeterBudgetExceeded { needed: usize, cap: usize },

    #[error("Hermiticity drift {drift:.3e} exceeds 1e-8; reduce the step")]
    StepTooLarge { drift: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
