use std::path::PathBuf;

use spi_engine::EngineError;

pub type Result<T, E = SpiError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum SpiError {
    #[error(transparent)]
    Engine(#[from] EngineError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not an {format} file (bad magic at byte {offset})")]
    BadMagic { format: &'static str, offset: u64 },

    #[error("unsupported version {version} in {format} file (byte {offset})")]
    UnsupportedVersion { format: &'static str, version: u8, offset: u64 },

    #[error("truncated {format} file: needed {needed} more bytes at byte {offset}")]
    Truncated { format: &'static str, offset: u64, needed: usize },

    #[error("corrupt {format} file at byte {offset}: {reason}")]
    Corrupt { format: &'static str, offset: u64, reason: String },

    #[error("{what}: expected {expected}, got {got}")]
    SizeMismatch { what: &'static str, expected: String, got: String },

    #[error("hadamard-subset patterns need H*W to be a power of two, got {n_pix}; pad the scene to {padded} pixels")]
    HadamardSize { n_pix: usize, padded: usize },

    #[error("degenerate ensemble: all patterns are identical, so the differential term cancels")]
    DegenerateEnsemble,

    #[error("degenerate background: zero variance under the background mask")]
    DegenerateBackground,

    #[error("ISTA diverged at iteration {iteration} (residual {residual:.3e} vs initial {initial:.3e}); use a smaller step size")]
    Divergence { iteration: usize, residual: f64, initial: f64 },

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },

    #[error("non-finite loss at iteration {iteration}; {}", match last {
        Some(r) => format!("last finite record: iteration {} total {:.6e} (fidelity {:.6e}, sparsity {:.6e}, proximal {:.6e})", r.iteration, r.total, r.fidelity, r.sparsity, r.proximal),
        None => "no finite iteration recorded".to_string(),
    })]
    NonFiniteLoss { iteration: usize, last: Option<Box<crate::train::IterRecord>> },

    #[error("unknown ablation tag '{0}'; valid tags are a, b, c, d, e, f, g")]
    UnknownAblation(String),

    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl SpiError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpiError::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SpiError::Invalid(msg.into())
    }
}
