//! Configuration, orchestration and artifact writing for the `bridgeflow` binary.

pub mod classical;
pub mod config;
pub mod output;
pub mod simulate;
pub mod solve;

pub use config::Config;
pub use output::RunManifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("did not converge: {0}")]
    NotConverged(String),
    #[error("missing or unreadable solution: {0}")]
    MissingSolution(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Solver(bridgeflow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl From<bridgeflow::Error> for CliError {
    fn from(e: bridgeflow::Error) -> Self {
        use bridgeflow::Error as E;
        match e {
            E::BridgeNotConverged { .. } | E::FixedPointNotConverged { .. } | E::ProxNotConverged { .. } => {
                CliError::NotConverged(e.to_string())
            }
            E::InvalidParameter { .. } | E::InvalidMixture(_) | E::DegenerateMixture { .. } => CliError::Config(e.to_string()),
            other => CliError::Solver(other),
        }
    }
}

/// Caps the global rayon pool from `BRIDGEFLOW_THREADS`, if set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("BRIDGEFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("BRIDGEFLOW_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("BRIDGEFLOW_THREADS: {e}")))
}
