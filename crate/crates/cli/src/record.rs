//! Machine-readable records written by the subcommands.

use qpkron::error_bounds::ErrorCertificate;
use qpkron::operator_bounds::SpectralReport;
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    /// `‖Λ∘⁻¹(Λu_k − f)‖∘` for the fixed-point iteration, `(r, Br)^{1/2}` for PCG.
    pub residual: f64,
    pub rank: Option<usize>,
    pub ratio: Option<f64>,
    pub oracle_error: Option<f64>,
}

/// Output of `solve`; the config echo reproduces the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub config: RunConfig,
    pub spectral: SpectralReport<f64>,
    pub method: Method,
    pub rho: Option<f64>,
    pub q: Option<f64>,
    pub steps: Vec<StepRecord>,
    pub certificates: Vec<ErrorCertificate<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub pcg_restarts: Option<usize>,
    pub final_rank: usize,
    pub final_oracle_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub k: usize,
    pub delta: f64,
    pub majorant: f64,
    pub q: f64,
    pub lower: f64,
    pub upper: f64,
    pub grid_certified: bool,
    pub oracle_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorsRecord {
    pub version: String,
    pub config: RunConfig,
    pub rho: f64,
    pub q: f64,
    pub steps: Vec<ErrorRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsRecord {
    pub version: String,
    pub config: RunConfig,
    pub spectral: SpectralReport<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckReport {
    pub version: String,
    pub config: RunConfig,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}
