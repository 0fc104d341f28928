use thiserror::Error;

/// Errors produced by the simulation, signal, and estimation layers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("SoC {z} outside guarded OCV domain [{lo}, {hi}]")]
    OcvDomain { z: f64, lo: f64, hi: f64 },

    #[error("invalid SoC interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("frequency {f_hz} Hz violates Nyquist limit {nyquist_hz} Hz")]
    NyquistViolation { f_hz: f64, nyquist_hz: f64 },

    #[error("profile mismatch: {0}")]
    ProfileMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("innovation covariance is singular or ill-conditioned")]
    SingularInnovation,

    #[error("degenerate excitation: max |i| = {max_abs} below threshold {threshold}")]
    DegenerateExcitation { max_abs: f64, threshold: f64 },

    #[error("estimator diverged at sample {sample}: |innovation| > {sigma_multiple} sigma for {consecutive} consecutive steps")]
    Diverged {
        sample: usize,
        sigma_multiple: f64,
        consecutive: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("csv schema error: {0}")]
    CsvSchema(String),

    #[error("non-uniform sampling at row {row}: expected t = {expected}, got {actual}")]
    NonUniformSampling {
        row: usize,
        expected: f64,
        actual: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
