use std::fs;
use std::path::{Path, PathBuf};

use iama::ama::compute_reference;
use iama::distributed::NetworkProblem;
use iama::dmpc::{active_fraction, monolithic_solution};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

/// Overrides the directory of cached reference solutions.
pub const CACHE_ENV: &str = "IAMA_CACHE_DIR";

pub const REFERENCE_VERSION: u32 = 1;

/// Ground truth of an instance at one step size.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Reference {
    pub version: u32,
    pub instance_sha256: String,
    pub tau: f64,
    pub iterations: usize,
    pub lambda_star: Vec<f64>,
    pub d_star: f64,
    pub u_star: Vec<f64>,
    pub fixed_point_residual: f64,
    /// Share of `u⋆` entries at a box bound.
    pub active_fraction: f64,
}

impl Reference {
    pub fn lambda_star(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.lambda_star)
    }

    pub fn u_star(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u_star)
    }

    /// No box is active at `u⋆`, so the optimal multiplier is unique.
    pub fn multiplier_unique(&self) -> bool {
        self.active_fraction == 0.0
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `$IAMA_CACHE_DIR` when set, else the directory holding the instance.
pub fn cache_dir(instance: &Path) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => instance.parent().map(Path::to_path_buf).unwrap_or_default(),
    }
}

pub fn cache_path(instance: &Path, hash: &str, tau: f64, iterations: usize) -> PathBuf {
    // the exact bits of τ keep different step sizes apart
    let name = format!("{}.ref-{:016x}-{iterations}.json", &hash[..16], tau.to_bits());
    cache_dir(instance).join(name)
}

pub fn compute(problem: &NetworkProblem<f64>, hash: &str, tau: f64, iterations: usize) -> CliResult<Reference> {
    let split = problem.build_split()?;
    let dual = compute_reference(&split, tau, iterations)?;
    let u = monolithic_solution(problem, None)?;
    let (lo, hi) = problem.global_box();
    Ok(Reference {
        version: REFERENCE_VERSION,
        instance_sha256: hash.to_string(),
        tau,
        iterations,
        lambda_star: dual.lambda_star.iter().copied().collect(),
        d_star: dual.d_star,
        fixed_point_residual: dual.fixed_point_residual,
        active_fraction: active_fraction(&u, &lo, &hi, 1e-9),
        u_star: u.iter().copied().collect(),
    })
}

/// Loads the cached reference or computes and stores it. Returns whether the cache was hit.
pub fn load_or_compute(
    problem: &NetworkProblem<f64>,
    instance: &Path,
    hash: &str,
    tau: f64,
    iterations: usize,
) -> CliResult<(Reference, bool)> {
    let path = cache_path(instance, hash, tau, iterations);
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(r) = serde_json::from_str::<Reference>(&text) {
            if r.version == REFERENCE_VERSION && r.instance_sha256 == hash && r.tau == tau && r.iterations == iterations {
                return Ok((r, true));
            }
        }
    }
    let r = compute(problem, hash, tau, iterations)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cache directory {}: {e}", dir.display())))?;
        }
    }
    fs::write(&path, serde_json::to_string(&r)?)?;
    Ok((r, false))
}
