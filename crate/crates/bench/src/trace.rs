//! Trace CSV schema, its metadata sidecar, and the bound columns.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use iama::ama::{
    ama_bounded_error_bound, ama_dual_bound, ama_linear_bound, fama_bound, BoundedErrors, ErrorNorms, LinearRateConstants,
};
use iama::distributed::{distributed_bound, DistributedBound, DistributedConstants};
use iama::pgm::{apgm_bound, pgm_bound_convex, pgm_bound_strongly_convex};
use serde::{Deserialize, Serialize};

use crate::config::{AlgorithmChoice, ExperimentConfig};
use crate::{CliError, CliResult};

pub const TRACE_SCHEMA: &str = "iama.trace.v1";
pub const CERT_LOG_SCHEMA: &str = "iama.certification-log.v1";
pub const J_STATS_SCHEMA: &str = "iama.j-stats.v1";

/// One iteration. Measured columns come first, bound columns after; cells that
/// do not apply to the algorithm are empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    /// `‖u^k − u⋆‖` of the consensus input sequence.
    pub u_err: Option<f64>,
    pub dist_lambda: Option<f64>,
    pub dual_gap_avg: Option<f64>,
    pub dual_gap_last: Option<f64>,
    /// `‖Σ_i E_iᵀλ_i‖∞`, zero while the multiplier stays in the domain of ψ.
    pub null_residual: Option<f64>,
    pub delta_norm: Option<f64>,
    pub theta_norm: Option<f64>,
    /// `‖Aδ^k‖`, or the gradient error `‖e^k‖` for PGM and APGM.
    pub a_delta_norm: Option<f64>,
    pub b_theta_norm: Option<f64>,
    /// Prox error on `τψ(u) + ½‖u − v‖²` (PGM and APGM).
    pub prox_eps: Option<f64>,
    pub bound_p1: Option<f64>,
    pub bound_p2: Option<f64>,
    pub bound_p3: Option<f64>,
    pub bound_thm1: Option<f64>,
    pub bound_thm2: Option<f64>,
    pub bound_thm4: Option<f64>,
    pub bound_cor5: Option<f64>,
    pub bound_cor6: Option<f64>,
    pub bound_cor7: Option<f64>,
    pub bound_cor8: Option<f64>,
    pub bound_fama_gap_unscaled: Option<f64>,
}

pub const TRACE_COLUMNS: [&str; 22] = [
    "k",
    "u_err",
    "dist_lambda",
    "dual_gap_avg",
    "dual_gap_last",
    "null_residual",
    "delta_norm",
    "theta_norm",
    "a_delta_norm",
    "b_theta_norm",
    "prox_eps",
    "bound_p1",
    "bound_p2",
    "bound_p3",
    "bound_thm1",
    "bound_thm2",
    "bound_thm4",
    "bound_cor5",
    "bound_cor6",
    "bound_cor7",
    "bound_cor8",
    "bound_fama_gap_unscaled",
];

/// Writes the header even when there are no rows.
pub fn write_csv<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
    let mut f = fs::File::create(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> CliResult<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_COLUMNS {
        return Err(CliError::Config(format!("{} does not follow schema {TRACE_SCHEMA}", path.display())));
    }
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Sidecar `<trace>.meta.json` written next to every trace.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TraceMeta {
    pub schema: String,
    pub config: ExperimentConfig,
    pub instance_sha256: String,
    pub tau: f64,
    pub reference_iterations: usize,
}

pub fn meta_path(trace: &Path) -> PathBuf {
    let mut s = trace.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Constants the bound calculators need beyond the measured columns.
#[derive(Clone, Copy, Debug)]
pub struct BoundContext {
    pub algorithm: AlgorithmChoice,
    pub tau: f64,
    pub agents: usize,
    /// `‖λ⁰ − λ⋆‖`; runs start from `λ⁰ = 0`.
    pub dist0: f64,
    pub d_star: f64,
    /// `γ = τ/max_i L_i`, the contraction of the dual step.
    pub gamma: f64,
    /// Distance bounds need a unique `λ⋆`.
    pub multiplier_unique: bool,
    pub a_norm: f64,
    pub b_norm: f64,
}

impl BoundContext {
    fn l(&self) -> f64 {
        1.0 / self.tau
    }
}

fn column(rows: &[TraceRow], f: impl Fn(&TraceRow) -> Option<f64>) -> Vec<f64> {
    rows.iter().map(|r| f(r).unwrap_or(0.0)).collect()
}

/// Recomputes every applicable bound column from the measured error columns.
pub fn fill_bounds(rows: &mut [TraceRow], c: &BoundContext) {
    let l = c.l();
    let in_domain = rows.iter().all(|r| r.null_residual.is_none_or(|x| x <= 1e-9));
    // L(ψ) of the network split: ‖c‖ = 0 inside the domain of ψ
    let l_psi = if in_domain { 0.0 } else { f64::INFINITY };
    let a_delta = column(rows, |r| r.a_delta_norm);
    let b_theta = column(rows, |r| r.b_theta_norm);
    let delta = column(rows, |r| r.delta_norm);
    let theta = column(rows, |r| r.theta_norm);
    // prox errors enter the bounds on the objective ψ + (1/2τ)‖·‖²
    let eps: Vec<f64> = column(rows, |r| r.prox_eps).iter().map(|e| e / c.tau).collect();
    let norms = ErrorNorms { a_delta: a_delta.clone(), b_theta: b_theta.clone() };
    let linear = LinearRateConstants { gamma: c.gamma, l };
    let dc = DistributedConstants { l, gamma: c.gamma, agents: c.agents, dist0: c.dist0 };
    let (mut dmax, mut tmax) = (0.0f64, 0.0f64);
    for (n, row) in rows.iter_mut().enumerate() {
        let k = n + 1;
        dmax = dmax.max(delta[n]);
        tmax = tmax.max(theta[n]);
        let unique = c.multiplier_unique;
        let mut b = TraceRow { k: row.k, ..TraceRow::default() };
        match c.algorithm {
            AlgorithmChoice::Pgm => {
                b.bound_p1 = pgm_bound_convex(k, l, c.dist0, &a_delta, &eps).ok();
                if unique {
                    b.bound_p3 = pgm_bound_strongly_convex(k, l, c.gamma * l, c.dist0, &a_delta, &eps).ok();
                }
            }
            AlgorithmChoice::Apgm => b.bound_p2 = apgm_bound(k, l, c.dist0, &a_delta, &eps).ok(),
            AlgorithmChoice::Ama => {
                b.bound_thm1 = ama_dual_bound(k, l, c.dist0, c.tau, l_psi, &norms).ok();
                if unique {
                    b.bound_thm2 = ama_linear_bound(k, &linear, c.tau, l_psi, c.dist0, &norms).ok();
                    let bounded = BoundedErrors { a_norm: c.a_norm, b_norm: c.b_norm, delta_bar: dmax, theta_bar: tmax };
                    b.bound_cor5 = Some(ama_bounded_error_bound(k, &linear, c.tau, l_psi, c.dist0, &bounded));
                }
            }
            AlgorithmChoice::Fama => b.bound_thm4 = fama_bound(k, l, c.dist0, c.tau, l_psi, &norms).ok(),
            AlgorithmChoice::DistAma => {
                b.bound_cor6 = distributed_bound(k, DistributedBound::AmaGap, &dc, &delta).ok();
                if unique {
                    b.bound_cor7 = distributed_bound(k, DistributedBound::AmaDistance, &dc, &delta).ok();
                }
            }
            AlgorithmChoice::DistFama => {
                b.bound_cor8 = distributed_bound(k, DistributedBound::FamaGap, &dc, &delta).ok();
                b.bound_fama_gap_unscaled = distributed_bound(k, DistributedBound::FamaGapUnscaled, &dc, &delta).ok();
            }
        }
        let finite = |x: Option<f64>| x.filter(|v| v.is_finite());
        row.bound_p1 = finite(b.bound_p1);
        row.bound_p2 = finite(b.bound_p2);
        row.bound_p3 = finite(b.bound_p3);
        row.bound_thm1 = finite(b.bound_thm1);
        row.bound_thm2 = finite(b.bound_thm2);
        row.bound_thm4 = finite(b.bound_thm4);
        row.bound_cor5 = finite(b.bound_cor5);
        row.bound_cor6 = finite(b.bound_cor6);
        row.bound_cor7 = finite(b.bound_cor7);
        row.bound_cor8 = finite(b.bound_cor8);
        row.bound_fama_gap_unscaled = finite(b.bound_fama_gap_unscaled);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub k: usize,
    pub column: &'static str,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Verdict {
    pub checks: usize,
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Compares each bound with the quantity it bounds. `bound_fama_gap_unscaled` is
/// reported but not checked.
pub fn verdict(rows: &[TraceRow], d_star: f64) -> Verdict {
    let gap_slack = 1e-9 * (1.0 + d_star.abs());
    let dist_slack = 1e-9;
    let mut v = Verdict::default();
    for r in rows {
        let pairs: [(&'static str, Option<f64>, Option<f64>, f64); 10] = [
            ("bound_p1", r.dual_gap_avg, r.bound_p1, gap_slack),
            ("bound_p2", r.dual_gap_last, r.bound_p2, gap_slack),
            ("bound_p3", r.dist_lambda, r.bound_p3, dist_slack),
            ("bound_thm1", r.dual_gap_avg, r.bound_thm1, gap_slack),
            ("bound_thm2", r.dist_lambda, r.bound_thm2, dist_slack),
            ("bound_thm4", r.dual_gap_last, r.bound_thm4, gap_slack),
            ("bound_cor5", r.dist_lambda, r.bound_cor5, dist_slack),
            ("bound_cor6", r.dual_gap_avg, r.bound_cor6, gap_slack),
            ("bound_cor7", r.dist_lambda, r.bound_cor7, dist_slack),
            ("bound_cor8", r.dual_gap_last, r.bound_cor8, gap_slack),
        ];
        for (column, measured, bound, slack) in pairs {
            let (Some(m), Some(b)) = (measured, bound) else { continue };
            v.checks += 1;
            if m > b + slack {
                v.violations.push(Violation { k: r.k, column, measured: m, bound: b });
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_row_fields() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(TraceRow::default()).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRACE_COLUMNS.join(","));
    }

    fn ctx(algorithm: AlgorithmChoice) -> BoundContext {
        BoundContext {
            algorithm,
            tau: 0.5,
            agents: 3,
            dist0: 1.0,
            d_star: 0.0,
            gamma: 0.25,
            multiplier_unique: true,
            a_norm: 1.0,
            b_norm: 1.0,
        }
    }

    #[test]
    fn exact_linear_bound_column_is_geometric() {
        let mut rows: Vec<TraceRow> = (1..=5)
            .map(|k| TraceRow { k, a_delta_norm: Some(0.0), b_theta_norm: Some(0.0), delta_norm: Some(0.0), theta_norm: Some(0.0), ..TraceRow::default() })
            .collect();
        fill_bounds(&mut rows, &ctx(AlgorithmChoice::Ama));
        for r in &rows {
            assert!((r.bound_thm2.unwrap() - 0.75f64.powi(r.k as i32)).abs() < 1e-15);
            assert!(r.bound_thm4.is_none() && r.bound_cor6.is_none());
        }
    }

    #[test]
    fn verdict_flags_exceeded_bound() {
        let mut rows = vec![TraceRow { k: 1, delta_norm: Some(0.0), dist_lambda: Some(0.5), ..TraceRow::default() }];
        fill_bounds(&mut rows, &ctx(AlgorithmChoice::DistAma));
        // (1−γ)² · dist0 = 0.5625 with zero errors
        assert!(verdict(&rows, 0.0).pass());
        rows[0].dist_lambda = Some(0.6);
        let v = verdict(&rows, 0.0);
        assert_eq!(v.violations.len(), 1);
        assert_eq!(v.violations[0].column, "bound_cor7");
    }
}
