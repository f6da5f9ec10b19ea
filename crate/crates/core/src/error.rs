use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bandwidth {0}: must be finite and positive")]
    InvalidBandwidth(f64),

    #[error("sample too small: need at least {required} observations, got {actual}")]
    SampleTooSmall { required: usize, actual: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error in row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("treatment arm {0} has no observations")]
    DegenerateArm(u8),

    #[error("basis error: {0}")]
    Basis(String),

    #[error("design matrix is singular")]
    SingularDesign,

    #[error("perfect separation detected in propensity model (max |coefficient| {0:.1})")]
    Separation(f64),

    #[error("no grid point has local support in both arms")]
    EmptySupport,

    #[error("no overlap: control-arm density has no mass where P0 is positive")]
    NoOverlap,

    #[error("transformed surrogate supports of the two arms do not overlap")]
    DisjointSupport,

    #[error("treatment effect estimate {0:e} is too close to zero for a stable PTE")]
    UnstablePte(f64),

    #[error("index model requires at least one covariate")]
    NoCovariates,

    #[error("all surrogate values in arm are tied")]
    DegenerateRanks,

    #[error("arm {arm} has {actual} records, at least {required} required")]
    TooFewRecords {
        arm: u8,
        required: usize,
        actual: usize,
    },

    #[error("varying-coefficient fit failed at every grid point")]
    VglmFailure,

    #[error("resampling unstable: {failed} of {total} replicates failed")]
    ResamplingUnstable { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors a perturbation replicate may hit without invalidating the run.
    pub fn is_recoverable(&self) -> bool {
        matches!(
            self,
            Error::Separation(_)
                | Error::SingularDesign
                | Error::EmptySupport
                | Error::NoOverlap
                | Error::UnstablePte(_)
                | Error::VglmFailure
                | Error::DegenerateRanks
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
