use dualfuse_core::decoder::FormatError;
use dualfuse_core::scene::SceneError;
use dualfuse_core::{DecoderError, FusionError};
use dualfuse_eval::EvalError;
use thiserror::Error;

/// Failure classes, each with a fixed process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Compatibility(String),
    #[error("{0}")]
    Decode(String),
    #[error("{0}")]
    Network(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Compatibility(_) => 3,
            CliError::Decode(_) => 4,
            CliError::Network(_) => 5,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DecoderError> for CliError {
    fn from(e: DecoderError) -> Self {
        match e {
            DecoderError::Format(f) => f.into(),
            other => CliError::Decode(other.to_string()),
        }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::Incompatible(_) => CliError::Compatibility(e.to_string()),
            FusionError::Config(_) => CliError::Input(e.to_string()),
            FusionError::Decoder(d) => d.into(),
            other => CliError::Decode(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Fusion(f) => f.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}
