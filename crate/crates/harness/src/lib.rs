//! Batch driver around `csahomog-core`: configuration, runs with full output
//! trees, run-to-run comparison and benchmark matrices.

pub mod bench;
pub mod compare;
pub mod config;
pub mod metrics;
pub mod run;
pub mod setup;

use std::path::Path;

use csahomog_core::backend::BackendError;
use csahomog_core::macroscale::MacroError;
use thiserror::Error;

pub use config::{ConfigError, Method, RawConfig, RunConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Setup(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Incompatible(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error("{0}")]
    MicroFailure(String),
}

impl HarnessError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::Io { path: path.display().to_string(), message: err.to_string() }
    }

    /// 2 for anything wrong with the inputs, 3 when the macroscopic Newton
    /// loop fails, 4 when a cell problem cannot be solved.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Setup(_) | Self::Io { .. } | Self::Incompatible(_) => 2,
            Self::NonConvergence(_) => 3,
            Self::MicroFailure(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Setup(_) => "setup",
            Self::Io { .. } => "io",
            Self::Incompatible(_) => "incompatible",
            Self::NonConvergence(_) => "non_convergence",
            Self::MicroFailure(_) => "micro_failure",
        }
    }

    /// One line, `key=value` pairs, the message quoted.
    pub fn reason_line(&self) -> String {
        let message = self.to_string().replace(['\n', '\r'], " ").replace('"', "'");
        format!("error={} code={} reason=\"{message}\"", self.kind(), self.exit_code())
    }
}

impl From<MacroError> for HarnessError {
    fn from(e: MacroError) -> Self {
        match e {
            MacroError::Backend(b) => b.into(),
            MacroError::UnknownTag(_) | MacroError::OverlappingTags(_) | MacroError::Unconstrained => {
                HarnessError::Setup(e.to_string())
            }
            other => HarnessError::NonConvergence(other.to_string()),
        }
    }
}

impl From<BackendError> for HarnessError {
    fn from(e: BackendError) -> Self {
        HarnessError::MicroFailure(e.to_string())
    }
}

/// Lower-case hex of a digest.
pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
