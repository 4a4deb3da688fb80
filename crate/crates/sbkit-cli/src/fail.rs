//! Failure classification for the process exit code contract: 0 success,
//! 2 validation error, 3 numeric divergence, 4 I/O failure.

use sbkit_core::csbi::CsbiError;
use sbkit_core::data::DataError;
use sbkit_core::eot::EotError;
use sbkit_core::metrics::MetricError;
use sbkit_core::neural::NeuralError;
use sbkit_core::sde::SdeError;
use std::fmt;

/// A command failure, labeled by how a harness should triage it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    /// Bad arguments, configs, or input file contents. Exit code 2.
    Validation(String),
    /// Non-finite numerics during a solve, training run, or sampler. Exit
    /// code 3.
    Divergence(String),
    /// Filesystem failures reading inputs or writing artifacts. Exit code 4.
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Divergence(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Failure::Validation(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        Failure::Io(msg.into())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "validation error: {m}"),
            Failure::Divergence(m) => write!(f, "numeric divergence: {m}"),
            Failure::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(inner) => Failure::Io(inner.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<EotError> for Failure {
    fn from(e: EotError) -> Self {
        match e {
            EotError::Domain(_) | EotError::AbsoluteContinuity { .. } => {
                Failure::Divergence(e.to_string())
            }
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<SdeError> for Failure {
    fn from(e: SdeError) -> Self {
        match e {
            SdeError::Divergence { .. } => Failure::Divergence(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<NeuralError> for Failure {
    fn from(e: NeuralError) -> Self {
        match e {
            NeuralError::NonFiniteGradient { .. } => Failure::Divergence(e.to_string()),
            NeuralError::Io(inner) => Failure::Io(inner.to_string()),
            NeuralError::Json(inner) => Failure::from(inner),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<CsbiError> for Failure {
    fn from(e: CsbiError) -> Self {
        match e {
            CsbiError::Divergence { .. } | CsbiError::NonFiniteSample { .. } => {
                Failure::Divergence(e.to_string())
            }
            CsbiError::Neural(inner) => Failure::from(inner),
            CsbiError::Sde(inner) => Failure::from(inner),
            CsbiError::Data(inner) => Failure::from(inner),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::NonFinite(_) => Failure::Divergence(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}
