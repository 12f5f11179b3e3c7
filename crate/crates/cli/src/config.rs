//! Run configuration read from a TOML file.

use std::path::{Path, PathBuf};

use bridgeflow::recovery::TensorGrid;
use bridgeflow::{DriftModel, GaussianMixture, SbpConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub drift: Option<DriftModel>,
    pub endpoints: Option<Endpoints>,
    pub solver: Option<SbpConfig>,
    pub classical: Option<ClassicalSection>,
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    pub rho0: GaussianMixture,
    pub rho1: GaussianMixture,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalSection {
    pub epsilon: f64,
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
    #[serde(default = "default_classical_tol")]
    pub tol: f64,
    #[serde(default = "default_classical_iter")]
    pub max_iter: usize,
}

fn default_classical_tol() -> f64 {
    1e-10
}

fn default_classical_iter() -> usize {
    500
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// Number of closed-loop sample paths.
    pub paths: usize,
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_times")]
    pub snapshot_times: Vec<f64>,
    pub grid: Option<TensorGrid>,
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { snapshot_times: default_times(), grid: None, directory: default_directory() }
    }
}

fn default_times() -> Vec<f64> {
    (0..=5).map(|i| i as f64 * 0.2).collect()
}

fn default_directory() -> PathBuf {
    PathBuf::from("bridgeflow-out")
}

impl Config {
    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config = Self::parse(&text)?;
        Ok((config, text))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn require_drift(&self) -> Result<&DriftModel, CliError> {
        let d = self.drift.as_ref().ok_or_else(|| missing("drift"))?;
        d.validate().map_err(|e| CliError::Config(format!("drift: {e}")))?;
        Ok(d)
    }

    pub fn require_endpoints(&self, dim: usize) -> Result<&Endpoints, CliError> {
        let e = self.endpoints.as_ref().ok_or_else(|| missing("endpoints"))?;
        for (name, gm) in [("endpoints.rho0", &e.rho0), ("endpoints.rho1", &e.rho1)] {
            if gm.dim() != dim {
                return Err(CliError::Config(format!("{name}: dimension {} does not match the state dimension {dim}", gm.dim())));
            }
        }
        Ok(e)
    }

    pub fn require_solver(&self) -> Result<&SbpConfig, CliError> {
        let s = self.solver.as_ref().ok_or_else(|| missing("solver"))?;
        s.validate().map_err(|e| CliError::Config(format!("solver: {e}")))?;
        Ok(s)
    }

    pub fn require_classical(&self) -> Result<&ClassicalSection, CliError> {
        let c = self.classical.as_ref().ok_or_else(|| missing("classical"))?;
        if !(c.epsilon.is_finite() && c.epsilon > 0.0) {
            return Err(CliError::Config(format!("classical: `epsilon` must be positive, got {}", c.epsilon)));
        }
        if !(c.lower < c.upper) || c.points < 3 {
            return Err(CliError::Config("classical: need `lower` < `upper` and `points` >= 3".into()));
        }
        Ok(c)
    }

    pub fn require_simulate(&self) -> Result<&SimulateSection, CliError> {
        let s = self.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
        if s.paths == 0 {
            return Err(CliError::Config("simulate: `paths` must be at least 1".into()));
        }
        if !(s.dt.is_finite() && s.dt > 0.0 && s.dt <= 1.0) {
            return Err(CliError::Config(format!("simulate: `dt` must lie in (0, 1], got {}", s.dt)));
        }
        Ok(s)
    }

    pub fn require_grid(&self, dim: usize) -> Result<&TensorGrid, CliError> {
        let g = self.output.grid.as_ref().ok_or_else(|| missing("output.grid"))?;
        g.validate().map_err(|e| CliError::Config(format!("output.grid: {e}")))?;
        if g.dim() != dim {
            return Err(CliError::Config(format!("output.grid: dimension {} does not match the state dimension {dim}", g.dim())));
        }
        Ok(g)
    }

    pub fn check_snapshot_times(&self) -> Result<(), CliError> {
        if let Some(t) = self.output.snapshot_times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(CliError::Config(format!("output.snapshot_times: {t} is outside [0, 1]")));
        }
        Ok(())
    }
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("missing section `{section}`"))
}
