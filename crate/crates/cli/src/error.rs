use kl_core::chain::ChainError;
use kl_core::kernel::KernelError;
use kl_core::skle::SkleError;
use kl_core::slit_ode::SlitOdeError;
use kl_core::transform::TransformError;
use kl_verify::VerifyError;
use std::path::PathBuf;

/// Failures of a run. Errors from the numerical modules carry the module name.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config invalid: {0}")]
    ConfigInvalid(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checksum mismatch for artifact `{0}`")]
    Checksum(String),
    #[error("[bmd_kernel] {0}")]
    Kernel(#[from] KernelError),
    #[error("[slit_ode] {0}")]
    SlitOde(#[from] SlitOdeError),
    #[error("[kl_chain] {0}")]
    Chain(#[from] ChainError),
    #[error("[skle] {0}")]
    Skle(#[from] SkleError),
    #[error("[transform] {0}")]
    Transform(#[from] TransformError),
    #[error("[verify] {0}")]
    Verify(#[from] VerifyError),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::ConfigInvalid(msg.into())
    }
}
