use crate::model::ValidationReport;

/// Crate-wide error type.
///
/// `exit_code` groups the variants the way the command-line tool reports
/// them: 2 for bad input, 3 for a complete-resource-pooling violation,
/// 4 for a numerical abort.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid system specification: {0}")]
    InvalidSpec(ValidationReport),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("complete resource pooling violated: optimal routing rate on edge ({class}, {pool}) is {rate} <= 0; the given tree is not basic for these arrival rates")]
    CrpViolation {
        class: String,
        pool: String,
        rate: f64,
    },

    #[error("regime error: {0}")]
    Regime(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("integrator abort at t={t}: {reason}")]
    IntegratorAbort { t: f64, reason: String },
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSpec(_) | Error::InvalidArgument(_) | Error::Regime(_) => 2,
            Error::CrpViolation { .. } => 3,
            Error::DegenerateSpectrum(_) | Error::Numerical(_) | Error::IntegratorAbort { .. } => {
                4
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
