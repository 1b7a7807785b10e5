use thiserror::Error;

use crate::codec::CodecError;

/// Harness-level failures, split by CLI exit code: validation problems exit
/// with 2, numerical/runtime failures with 3.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Classifies a core error: bad inputs are validation, everything else is
    /// a numerical/runtime failure.
    pub fn from_core(err: kernelguard_core::Error) -> Self {
        use kernelguard_core::Error as E;
        match &err {
            E::DimensionMismatch { .. }
            | E::InvalidArgument(_)
            | E::AttackInfeasible { .. }
            | E::ZerosUnsupported { .. }
            | E::IndefiniteCovariance { .. } => HarnessError::Validation(err.to_string()),
            _ => HarnessError::Numerical(err.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) => 2,
            _ => 3,
        }
    }
}

impl From<CodecError> for HarnessError {
    fn from(e: CodecError) -> Self {
        HarnessError::Transport(e.to_string())
    }
}

impl From<kernelguard_core::Error> for HarnessError {
    fn from(e: kernelguard_core::Error) -> Self {
        HarnessError::from_core(e)
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
