//! Subcommands of the `iama` tool. Each returns the summary printed on stdout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use iama::ama::{run_ama_with, Algorithm, AmaErrors, AmaOptions, AmaTrace};
use iama::certify::{certification_log, default_alpha0, CertifiedLocal, DecreaseFunction, DecreaseRate};
use iama::distributed::{
    check_null_multiplier, run_distributed, DistributedOptions, DistributedTrace, InstanceFile, LocalSolver, NetworkProblem,
    PerturbedLocal,
};
use iama::dmpc::{generate_random_instance, GeneratorParams};
use iama::pgm::{run_pgm_with, ErrorSchedule, PgmErrors};
use iama::splitting::dual_objectives;
use iama::Split;
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{parse_rate, AlgorithmChoice, ExperimentConfig, InnerMode};
use crate::reference::{load_or_compute, sha256_hex, Reference};
use crate::trace::{
    fill_bounds, meta_path, read_trace, verdict, write_csv, BoundContext, TraceMeta, TraceRow, Verdict, CERT_LOG_SCHEMA,
    J_STATS_SCHEMA, TRACE_COLUMNS, TRACE_SCHEMA,
};
use crate::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "iama", version, about = "Inexact AMA/FAMA experiments on distributed MPC instances")]
pub struct Cli {
    /// Worker threads for the per-agent solves; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random distributed MPC instance.
    Generate(GenerateArgs),
    /// Run one algorithm with scheduled inner errors and write its trace.
    Solve(SolveArgs),
    /// Run distributed AMA/FAMA with certified local solves.
    Certify(CertifyArgs),
    /// Recompute the bound columns of a trace and check them.
    Bounds(BoundsArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of agents.
    #[arg(long = "M")]
    pub agents: usize,
    #[arg(long)]
    pub nx: usize,
    #[arg(long)]
    pub nu: usize,
    /// Prediction horizon.
    #[arg(long = "N")]
    pub horizon: usize,
    /// Input box `lo hi`.
    #[arg(long = "box", num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub u_box: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Neighbour count range `lo hi`.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub neighbors: Option<Vec<usize>>,
    /// Standard deviation of the coupling input matrices.
    #[arg(long)]
    pub gain: Option<f64>,
    /// Scale of the initial states; by default it is tuned so that about 70% of
    /// the optimal inputs sit at a box bound. Small values give inactive boxes.
    #[arg(long)]
    pub activation_scale: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, short = 'K')]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Step size; defaults to 0.99 times the smallest local convexity modulus.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Iterations of the exact reference run.
    #[arg(long)]
    pub reference_iterations: Option<usize>,
    /// Trace CSV; the metadata goes to `<out>.meta.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, value_enum)]
    pub algorithm: AlgorithmChoice,
    #[command(flatten)]
    pub run: RunArgs,
    /// x-step (local) error schedule: zero, const:c, power:c:p or geom:c:r.
    #[arg(long, default_value = "zero")]
    pub delta: ErrorSchedule,
    /// z-step error schedule, centralized algorithms only.
    #[arg(long, default_value = "zero")]
    pub theta: ErrorSchedule,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long, value_enum, default_value = "dist-ama")]
    pub algorithm: AlgorithmChoice,
    #[command(flatten)]
    pub run: RunArgs,
    /// Decrease of the local error bound: power:p or geom:r.
    #[arg(long, default_value = "power:2", value_parser = parse_rate)]
    pub rate: DecreaseRate,
    /// Initial local error bound; defaults to the first warm-start error.
    #[arg(long)]
    pub alpha0: Option<f64>,
    /// Also count the fewest steps that reach the bound.
    #[arg(long)]
    pub compare_exact: bool,
    /// Per-agent certification log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Per-iteration step-count statistics CSV.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Trace CSV with its `.meta.json` sidecar.
    #[arg(long)]
    pub trace: PathBuf,
    /// Instance file; defaults to the one recorded in the sidecar.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn dispatch(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Solve(a) => solve(a),
        Command::Certify(a) => certify(a),
        Command::Bounds(a) => bounds(a),
    }
}

pub struct Loaded {
    pub problem: NetworkProblem<f64>,
    pub sha256: String,
}

pub fn load_instance(path: &Path) -> CliResult<Loaded> {
    let bytes = fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let file: InstanceFile =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(Loaded { problem: file.to_problem()?, sha256: sha256_hex(&bytes) })
}

pub fn generate(a: &GenerateArgs) -> CliResult<String> {
    let defaults = GeneratorParams::default();
    let (lo, hi) = (a.u_box[0], a.u_box[1]);
    if !(lo < hi) {
        return Err(CliError::Config(format!("input box needs lo < hi, got [{lo}, {hi}]")));
    }
    let params = GeneratorParams {
        agents: a.agents,
        nx: a.nx,
        nu: a.nu,
        horizon: a.horizon,
        seed: a.seed,
        neighbor_range: a.neighbors.as_ref().map_or(defaults.neighbor_range, |n| (n[0], n[1])),
        u_box: (lo, hi),
        input_gain: a.gain.unwrap_or(defaults.input_gain),
        activation_scale: a.activation_scale,
        ..defaults
    };
    if params.agents == 0 || params.nx == 0 || params.nu == 0 || params.horizon == 0 {
        return Err(CliError::Config("M, nx, nu and N must be positive".into()));
    }
    let inst = generate_random_instance(&params)?;
    let meta = serde_json::json!({
        "generator": params,
        "activation_scale": inst.activation_scale,
        "active_fraction": inst.active_fraction,
    });
    let file = InstanceFile::from_problem(&inst.problem, Some(meta));
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(&a.out, &text).map_err(|e| CliError::Config(format!("{}: {e}", a.out.display())))?;
    let p = &inst.problem;
    let l_max = p.agents.iter().map(|x| x.lipschitz()).fold(0.0, f64::max);
    let mut s = String::new();
    writeln!(s, "wrote {}", a.out.display()).unwrap();
    writeln!(s, "agents {}, global inputs {}, stacked copies {}", p.len(), p.maps.global_dim(), p.maps.stacked_dim()).unwrap();
    writeln!(s, "min sigma_i {:.6e}, max L_i {:.6e}, gamma {:.6e}", p.sigma_f(), l_max, p.gamma()).unwrap();
    writeln!(s, "active fraction {:.4}", inst.active_fraction).unwrap();
    Ok(s)
}

/// A finished run: the trace rows with bounds and what is needed to check them.
pub struct RunOutput {
    pub rows: Vec<TraceRow>,
    pub meta: TraceMeta,
    pub reference: Reference,
    pub cache_hit: bool,
    pub verdict: Verdict,
    pub distributed: Option<DistributedTrace<f64>>,
}

fn norm_or_none(v: Option<&DVector<f64>>, target: &DVector<f64>) -> Option<f64> {
    v.filter(|x| x.len() == target.len()).map(|x| (x - target).norm())
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Measured columns of a centralized or distributed AMA/FAMA trace.
fn ama_rows(tr: &AmaTrace<f64>, r: &Reference, problem: &NetworkProblem<f64>, null: Option<&[f64]>) -> Vec<TraceRow> {
    let (lambda_star, u_star) = (r.lambda_star(), r.u_star());
    let gap = |d: Option<&iama::Extended<f64>>| d.and_then(|v| v.finite()).map(|v| r.d_star - v);
    (0..tr.len())
        .map(|n| {
            let null_residual = match null {
                Some(v) => v.get(n).copied(),
                None => tr.lambda.get(n).map(|l| check_null_multiplier(&problem.maps.unstack(l), &problem.maps)),
            };
            TraceRow {
                k: n + 1,
                u_err: norm_or_none(tr.z.get(n), &u_star),
                dist_lambda: norm_or_none(tr.lambda.get(n), &lambda_star),
                dual_gap_avg: gap(tr.dual_avg.get(n)),
                dual_gap_last: gap(tr.dual.get(n)),
                null_residual,
                delta_norm: finite(tr.delta_norm[n]),
                theta_norm: finite(tr.theta_norm[n]),
                a_delta_norm: finite(tr.a_delta_norm[n]),
                b_theta_norm: finite(tr.b_theta_norm[n]),
                ..TraceRow::default()
            }
        })
        .collect()
}

fn pgm_rows(split: &Split, problem: &NetworkProblem<f64>, c: &ExperimentConfig, tau: f64, r: &Reference) -> CliResult<Vec<TraceRow>> {
    let InnerMode::Schedule { delta, theta } = c.inner else { unreachable!("validated") };
    let (phi, psi) = dual_objectives(split)?;
    let w0 = DVector::zeros(split.nc());
    let accelerated = c.algorithm == AlgorithmChoice::Apgm;
    let tr = run_pgm_with(&phi, &psi, &w0, tau, c.iterations, &PgmErrors::scheduled(delta, theta, c.seed), accelerated)?;
    let lambda_star = r.lambda_star();
    // PGM minimizes −D, so the gap is the objective plus D⋆
    let gap = |o: &iama::Extended<f64>| o.finite().map(|v| v + r.d_star);
    Ok((0..tr.len())
        .map(|n| TraceRow {
            k: n + 1,
            dist_lambda: Some((&tr.iterates[n] - &lambda_star).norm()),
            dual_gap_avg: gap(&tr.avg_objective[n]),
            dual_gap_last: gap(&tr.objective[n]),
            null_residual: Some(check_null_multiplier(&problem.maps.unstack(&tr.iterates[n]), &problem.maps)),
            a_delta_norm: Some(tr.e_norms[n]),
            prox_eps: finite(tr.eps[n]),
            ..TraceRow::default()
        })
        .collect())
}

pub fn bound_context(c: &ExperimentConfig, problem: &NetworkProblem<f64>, split: &Split, tau: f64, r: &Reference) -> BoundContext {
    BoundContext {
        algorithm: c.algorithm,
        tau,
        agents: problem.len(),
        dist0: r.lambda_star().norm(),
        d_star: r.d_star,
        // τ/max L_i, the rate that matches an iteration with step τ
        gamma: tau * problem.gamma() / problem.sigma_f(),
        multiplier_unique: r.multiplier_unique(),
        a_norm: split.a().spectral_norm(),
        b_norm: split.b().spectral_norm(),
    }
}

fn resolve_tau(c: &ExperimentConfig, problem: &NetworkProblem<f64>) -> CliResult<f64> {
    let limit = problem.sigma_f();
    let tau = c.tau.unwrap_or(0.99 * limit);
    if tau >= limit {
        return Err(CliError::Config(format!("step size {tau} must be below {limit}")));
    }
    Ok(tau)
}

pub fn run(c: &ExperimentConfig) -> CliResult<RunOutput> {
    c.validate()?;
    let loaded = load_instance(&c.instance)?;
    let problem = &loaded.problem;
    let tau = resolve_tau(c, problem)?;
    let ref_iters = c.reference_iterations();
    let (reference, cache_hit) = load_or_compute(problem, &c.instance, &loaded.sha256, tau, ref_iters)?;
    let split = problem.build_split()?;
    let algorithm = match c.algorithm {
        AlgorithmChoice::Fama | AlgorithmChoice::DistFama => Algorithm::Fama,
        _ => Algorithm::Ama,
    };
    let mut distributed = None;
    let mut rows = match (c.algorithm, &c.inner) {
        (AlgorithmChoice::Pgm | AlgorithmChoice::Apgm, _) => pgm_rows(&split, problem, c, tau, &reference)?,
        (AlgorithmChoice::Ama | AlgorithmChoice::Fama, InnerMode::Schedule { delta, theta }) => {
            let opts = AmaOptions { keep_iterates: true, record_dual: true, inner_tol: 1e-10 };
            let errors = AmaErrors::scheduled(*delta, *theta, c.seed);
            let lambda0 = DVector::zeros(split.nc());
            let tr = run_ama_with(&split, &lambda0, tau, c.iterations, &errors, &opts, algorithm)?;
            ama_rows(&tr, &reference, problem, None)
        }
        (_, inner) => {
            let local: Box<dyn LocalSolver<f64>> = match inner {
                InnerMode::Schedule { delta, .. } => Box::new(PerturbedLocal { schedule: *delta, seed: c.seed }),
                InnerMode::Certified { alpha0, rate, compare_exact } => {
                    let a0 = match alpha0 {
                        Some(a) => *a,
                        None => default_alpha0(problem)?,
                    };
                    Box::new(CertifiedLocal::new(problem, DecreaseFunction::new(a0, *rate)?, *compare_exact)?)
                }
            };
            let opts = DistributedOptions { measure_delta: true, record_dual: true, keep_iterates: true, log_access: false };
            let dt = run_distributed(problem, local.as_ref(), tau, c.iterations, algorithm, &opts)?;
            let rows = ama_rows(&dt.trace, &reference, problem, Some(&dt.et_lambda_inf));
            distributed = Some(dt);
            rows
        }
    };
    let ctx = bound_context(c, problem, &split, tau, &reference);
    fill_bounds(&mut rows, &ctx);
    let verdict = verdict(&rows, reference.d_star);
    let meta = TraceMeta {
        schema: TRACE_SCHEMA.to_string(),
        config: c.clone(),
        instance_sha256: loaded.sha256.clone(),
        tau,
        reference_iterations: ref_iters,
    };
    Ok(RunOutput { rows, meta, reference, cache_hit, verdict, distributed })
}

fn write_trace(out: &Path, run: &RunOutput) -> CliResult<()> {
    write_csv(out, &TRACE_COLUMNS, &run.rows)?;
    fs::write(meta_path(out), serde_json::to_string_pretty(&run.meta)? + "\n")?;
    Ok(())
}

fn verdict_line(v: &Verdict) -> String {
    match v.violations.first() {
        None => format!("verdict: pass ({} checks)", v.checks),
        Some(f) => format!(
            "verdict: fail ({} of {} checks violated; first {} at k {}: {:.6e} > {:.6e})",
            v.violations.len(),
            v.checks,
            f.column,
            f.k,
            f.measured,
            f.bound
        ),
    }
}

fn run_summary(run: &RunOutput, out: &Path) -> String {
    let m = &run.meta;
    let mut s = String::new();
    writeln!(s, "{} on {} with tau {:.6e}, {} iterations", m.config.algorithm.name(), m.config.instance.display(), m.tau, m.config.iterations)
        .unwrap();
    writeln!(
        s,
        "reference {} ({} iterations, fixed-point residual {:.3e}, D* {:.12e})",
        if run.cache_hit { "from cache" } else { "computed" },
        m.reference_iterations,
        run.reference.fixed_point_residual,
        run.reference.d_star
    )
    .unwrap();
    if let Some(last) = run.rows.last() {
        let show = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6e}"));
        writeln!(
            s,
            "final dist_lambda {}, dual_gap_last {}, u_err {}",
            show(last.dist_lambda),
            show(last.dual_gap_last),
            show(last.u_err)
        )
        .unwrap();
    }
    writeln!(s, "wrote {}", out.display()).unwrap();
    writeln!(s, "{}", verdict_line(&run.verdict)).unwrap();
    s
}

pub fn solve(a: &SolveArgs) -> CliResult<String> {
    let config = ExperimentConfig {
        instance: a.run.instance.clone(),
        algorithm: a.algorithm,
        inner: InnerMode::Schedule { delta: a.delta, theta: a.theta },
        iterations: a.run.iterations,
        seed: a.run.seed,
        tau: a.run.tau,
        reference_iterations: a.run.reference_iterations,
    };
    let out = run(&config)?;
    write_trace(&a.run.out, &out)?;
    Ok(run_summary(&out, &a.run.out))
}

/// Step counts of one outer iteration over the agents.
#[derive(Clone, Debug, Serialize)]
pub struct JStats {
    pub k: usize,
    pub alpha_k: Option<f64>,
    pub j_certified_mean: f64,
    pub j_certified_min: usize,
    pub j_certified_max: usize,
    pub j_exact_mean: Option<f64>,
    pub j_exact_min: Option<usize>,
    pub j_exact_max: Option<usize>,
}

const CERT_LOG_COLUMNS: [&str; 7] = ["k", "agent", "beta_k", "alpha_k", "j_certified", "j_exact", "delta_measured"];
const J_STATS_COLUMNS: [&str; 8] =
    ["k", "alpha_k", "j_certified_mean", "j_certified_min", "j_certified_max", "j_exact_mean", "j_exact_min", "j_exact_max"];

fn stats_of(values: &[usize]) -> Option<(f64, usize, usize)> {
    let min = *values.iter().min()?;
    let max = *values.iter().max()?;
    Some((values.iter().sum::<usize>() as f64 / values.len() as f64, min, max))
}

pub fn j_stats(dt: &DistributedTrace<f64>) -> Vec<JStats> {
    (0..dt.len())
        .map(|n| {
            let cert: Vec<usize> = dt.iterations[n].iter().flatten().copied().collect();
            let exact: Vec<usize> = dt.exact_iterations[n].iter().flatten().copied().collect();
            let (cm, cmin, cmax) = stats_of(&cert).unwrap_or((0.0, 0, 0));
            let e = stats_of(&exact);
            JStats {
                k: n + 1,
                alpha_k: dt.alpha[n],
                j_certified_mean: cm,
                j_certified_min: cmin,
                j_certified_max: cmax,
                j_exact_mean: e.map(|x| x.0),
                j_exact_min: e.map(|x| x.1),
                j_exact_max: e.map(|x| x.2),
            }
        })
        .collect()
}

pub fn certify(a: &CertifyArgs) -> CliResult<String> {
    let config = ExperimentConfig {
        instance: a.run.instance.clone(),
        algorithm: a.algorithm,
        inner: InnerMode::Certified { alpha0: a.alpha0, rate: a.rate, compare_exact: a.compare_exact },
        iterations: a.run.iterations,
        seed: a.run.seed,
        tau: a.run.tau,
        reference_iterations: a.run.reference_iterations,
    };
    let out = run(&config)?;
    write_trace(&a.run.out, &out)?;
    let dt = out.distributed.as_ref().expect("certified runs are distributed");
    let log = certification_log(dt);
    if let Some(p) = &a.log {
        write_csv(p, &CERT_LOG_COLUMNS, &log)?;
    }
    let stats = j_stats(dt);
    if let Some(p) = &a.stats {
        write_csv(p, &J_STATS_COLUMNS, &stats)?;
    }
    let ratio = log
        .iter()
        .filter_map(|r| r.delta_measured.map(|d| d / r.alpha_k))
        .fold(0.0f64, f64::max);
    let cert: Vec<usize> = log.iter().map(|r| r.j_certified).collect();
    let mut s = run_summary(&out, &a.run.out);
    if let Some((mean, _, max)) = stats_of(&cert) {
        writeln!(s, "local solves {}: certified steps mean {mean:.3}, max {max}", cert.len()).unwrap();
    }
    let exact: Vec<usize> = log.iter().filter_map(|r| r.j_exact).collect();
    if let Some((mean, _, max)) = stats_of(&exact) {
        writeln!(s, "fewest sufficient steps mean {mean:.3}, max {max}").unwrap();
    }
    writeln!(s, "max local error over its bound {ratio:.6e}").unwrap();
    for (p, schema) in [(&a.log, CERT_LOG_SCHEMA), (&a.stats, J_STATS_SCHEMA)] {
        if let Some(p) = p {
            writeln!(s, "wrote {} ({schema})", p.display()).unwrap();
        }
    }
    Ok(s)
}

pub fn bounds(a: &BoundsArgs) -> CliResult<String> {
    let meta_file = meta_path(&a.trace);
    let text = fs::read_to_string(&meta_file).map_err(|e| CliError::Config(format!("{}: {e}", meta_file.display())))?;
    let meta: TraceMeta = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", meta_file.display())))?;
    if meta.schema != TRACE_SCHEMA {
        return Err(CliError::Config(format!("unsupported trace schema {}", meta.schema)));
    }
    let instance = a.instance.clone().unwrap_or_else(|| meta.config.instance.clone());
    let loaded = load_instance(&instance)?;
    if loaded.sha256 != meta.instance_sha256 {
        return Err(CliError::Config(format!("{} is not the instance this trace was run on", instance.display())));
    }
    let mut rows = read_trace(&a.trace)?;
    let (reference, _) = load_or_compute(&loaded.problem, &instance, &loaded.sha256, meta.tau, meta.reference_iterations)?;
    let split = loaded.problem.build_split()?;
    let ctx = bound_context(&meta.config, &loaded.problem, &split, meta.tau, &reference);
    fill_bounds(&mut rows, &ctx);
    let v = verdict(&rows, reference.d_star);
    write_csv(&a.out, &TRACE_COLUMNS, &rows)?;
    Ok(format!("wrote {}\n{}\n", a.out.display(), verdict_line(&v)))
}
