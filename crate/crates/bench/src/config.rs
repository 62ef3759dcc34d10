use std::path::PathBuf;

use iama::certify::DecreaseRate;
use iama::pgm::ErrorSchedule;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmChoice {
    /// Inexact PGM on the dual of the network split.
    Pgm,
    /// Inexact accelerated PGM on the dual.
    Apgm,
    /// Centralized inexact AMA on the network split.
    Ama,
    /// Centralized inexact FAMA on the network split.
    Fama,
    /// Distributed inexact AMA.
    DistAma,
    /// Distributed inexact FAMA.
    DistFama,
}

impl AlgorithmChoice {
    pub fn is_distributed(self) -> bool {
        matches!(self, AlgorithmChoice::DistAma | AlgorithmChoice::DistFama)
    }

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmChoice::Pgm => "pgm",
            AlgorithmChoice::Apgm => "apgm",
            AlgorithmChoice::Ama => "ama",
            AlgorithmChoice::Fama => "fama",
            AlgorithmChoice::DistAma => "dist-ama",
            AlgorithmChoice::DistFama => "dist-fama",
        }
    }
}

/// How the inner (local or x-step) problems are solved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum InnerMode {
    /// Exact solves perturbed by errors of prescribed magnitude. For PGM and
    /// APGM `delta` is the gradient error and `theta` the prox error.
    Schedule { delta: ErrorSchedule, theta: ErrorSchedule },
    /// Projected-gradient local solves sized by the certificate for `α^k`.
    Certified {
        /// `None` picks the smallest value covering the first warm start.
        alpha0: Option<f64>,
        rate: DecreaseRate,
        compare_exact: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: PathBuf,
    pub algorithm: AlgorithmChoice,
    pub inner: InnerMode,
    pub iterations: usize,
    pub seed: u64,
    /// Step size; `None` uses 0.99 times the step limit.
    pub tau: Option<f64>,
    /// Iterations of the exact reference run; `None` uses 50 K within [500, 20000].
    pub reference_iterations: Option<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        match &self.inner {
            InnerMode::Certified { alpha0, .. } => {
                if !self.algorithm.is_distributed() {
                    return Err(CliError::Config(format!(
                        "certified local solves need dist-ama or dist-fama, not {}",
                        self.algorithm.name()
                    )));
                }
                if let Some(a) = alpha0 {
                    if !(*a > 0.0 && a.is_finite()) {
                        return Err(CliError::Config(format!("alpha0 must be positive, got {a}")));
                    }
                }
            }
            InnerMode::Schedule { delta, theta } => {
                delta.validate()?;
                theta.validate()?;
                if self.algorithm.is_distributed() && !theta.is_zero() {
                    return Err(CliError::Config("distributed runs have no z-step error; use --theta zero".into()));
                }
            }
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CliError::Config(format!("step size must be positive, got {t}")));
            }
        }
        Ok(())
    }

    pub fn reference_iterations(&self) -> usize {
        self.reference_iterations.unwrap_or((50 * self.iterations).clamp(500, 20_000))
    }
}

/// Parses `power:p` or `geom:r`.
pub fn parse_rate(s: &str) -> Result<DecreaseRate, String> {
    let (kind, value) = s.split_once(':').ok_or_else(|| format!("rate `{s}` must look like power:p or geom:r"))?;
    let v: f64 = value.trim().parse().map_err(|e| format!("rate `{s}`: {e}"))?;
    match kind.trim() {
        "power" => Ok(DecreaseRate::Power { p: v }),
        "geom" => Ok(DecreaseRate::Geometric { r: v }),
        _ => Err(format!("unknown rate `{s}`")),
    }
}
