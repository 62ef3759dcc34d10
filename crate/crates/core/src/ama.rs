//! Inexact AMA and FAMA on a [`SplitProblem`], the dual-PGM equivalence check,
//! the dual complexity bounds, the schedule classifier and the geometric-harmonic
//! series used by the linear-rate analysis.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::random_direction;
use crate::pgm::{run_pgm_with, ErrorSchedule, PgmErrors};
use crate::scalar::{from_usize, real, to_f64, Real};
use crate::splitting::{dual_objectives, dual_value, ConvexSet, Extended, ProxFn, SplitProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ama,
    Fama,
}

/// Source of the errors `δ^k` (x-step) and `θ^k` (z-step).
#[derive(Clone, Debug)]
pub enum AmaErrors<T: Real> {
    /// Magnitudes from schedules in seeded random directions. With
    /// `feasible_only` the perturbation is restricted to the tangent of the
    /// constraint sets and re-projected; the realized error is recorded.
    Scheduled { delta: ErrorSchedule, theta: ErrorSchedule, seed: u64, feasible_only: bool },
    Explicit { delta: Vec<DVector<T>>, theta: Vec<DVector<T>> },
}

impl<T: Real> AmaErrors<T> {
    pub fn none() -> Self {
        AmaErrors::Scheduled { delta: ErrorSchedule::Zero, theta: ErrorSchedule::Zero, seed: 0, feasible_only: true }
    }

    pub fn scheduled(delta: ErrorSchedule, theta: ErrorSchedule, seed: u64) -> Self {
        AmaErrors::Scheduled { delta, theta, seed, feasible_only: true }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AmaOptions {
    /// Store the iterate vectors, not only their norms.
    pub keep_iterates: bool,
    /// Evaluate `D(λ^k)` and `D(λ̄^k)` at every iteration.
    pub record_dual: bool,
    pub inner_tol: f64,
}

impl Default for AmaOptions {
    fn default() -> Self {
        AmaOptions { keep_iterates: true, record_dual: false, inner_tol: 1e-10 }
    }
}

#[derive(Clone, Debug)]
pub struct AmaTrace<T: Real> {
    pub algorithm: Algorithm,
    pub tau: T,
    pub seed: Option<u64>,
    pub lambda0: DVector<T>,
    pub lambda: Vec<DVector<T>>,
    pub lambda_hat: Vec<DVector<T>>,
    pub x: Vec<DVector<T>>,
    pub z: Vec<DVector<T>>,
    pub delta: Vec<DVector<T>>,
    pub theta: Vec<DVector<T>>,
    pub delta_norm: Vec<T>,
    pub theta_norm: Vec<T>,
    pub a_delta_norm: Vec<T>,
    pub b_theta_norm: Vec<T>,
    pub x_feasible: Vec<bool>,
    pub z_feasible: Vec<bool>,
    /// Whether `λ^k` lies in the domain of `ψ`.
    pub lambda_in_domain: Vec<bool>,
    pub dual: Vec<Extended<T>>,
    pub dual_avg: Vec<Extended<T>>,
    pub last_lambda: DVector<T>,
    pub last_x: DVector<T>,
    pub last_z: DVector<T>,
}

impl<T: Real> AmaTrace<T> {
    pub fn len(&self) -> usize {
        self.delta_norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_norm.is_empty()
    }

    pub fn error_norms(&self) -> ErrorNorms<T> {
        ErrorNorms { a_delta: self.a_delta_norm.clone(), b_theta: self.b_theta_norm.clone() }
    }

    /// L(ψ) regime observed on this trace, see [`psi_lipschitz`].
    pub fn all_in_domain(&self) -> bool {
        self.lambda_in_domain.iter().all(|&b| b)
    }
}

fn feasibility_tol<T: Real>() -> T {
    T::eps().sqrt() * real(1e-2)
}

fn perturb<T: Real>(
    exact: &DVector<T>,
    magnitude: T,
    rng: &mut ChaCha8Rng,
    feasible_only: bool,
    tangent: impl Fn(&DVector<T>, DVector<T>) -> DVector<T>,
    restore: impl Fn(&DVector<T>) -> DVector<T>,
) -> DVector<T> {
    if magnitude <= T::zero() || exact.is_empty() {
        return exact.clone();
    }
    let mut dir = random_direction(rng, exact.len(), magnitude);
    if feasible_only {
        dir = tangent(exact, dir);
        let n = dir.norm();
        if n <= T::zero() {
            return exact.clone();
        }
        dir *= magnitude / n;
        restore(&(exact + dir))
    } else {
        exact + dir
    }
}

fn z_in_set<T: Real>(g: &ProxFn<T>, z: &DVector<T>) -> bool {
    match g.as_set() {
        Some(s) => s.contains(z, feasibility_tol()),
        None => true,
    }
}

/// Runs inexact AMA or FAMA with full control over the error source and the recording.
pub fn run_ama_with<T: Real>(
    p: &SplitProblem<T>,
    lambda0: &DVector<T>,
    tau: T,
    k_max: usize,
    errors: &AmaErrors<T>,
    opts: &AmaOptions,
    algorithm: Algorithm,
) -> Result<AmaTrace<T>> {
    let limit = p.step_limit();
    if !(tau > T::zero() && tau < limit) {
        return Err(Error::StepSize { tau: to_f64(tau), limit: to_f64(limit) });
    }
    if lambda0.len() != p.nc() {
        return Err(Error::Dimension(format!("λ0 has length {}, expected {}", lambda0.len(), p.nc())));
    }
    let mut rng = match errors {
        AmaErrors::Scheduled { delta, theta, seed, .. } => {
            delta.validate()?;
            theta.validate()?;
            Some(ChaCha8Rng::seed_from_u64(*seed))
        }
        AmaErrors::Explicit { delta, theta } => {
            if delta.len() < k_max || theta.len() < k_max {
                return Err(Error::Dimension("explicit error series shorter than the horizon".into()));
            }
            None
        }
    };
    let zs = p.z_solver(tau)?;
    let inner_tol = real::<T>(opts.inner_tol);
    let mut tr = AmaTrace {
        algorithm,
        tau,
        seed: match errors {
            AmaErrors::Scheduled { seed, .. } => Some(*seed),
            _ => None,
        },
        lambda0: lambda0.clone(),
        lambda: Vec::new(),
        lambda_hat: Vec::new(),
        x: Vec::new(),
        z: Vec::new(),
        delta: Vec::new(),
        theta: Vec::new(),
        delta_norm: Vec::with_capacity(k_max),
        theta_norm: Vec::with_capacity(k_max),
        a_delta_norm: Vec::with_capacity(k_max),
        b_theta_norm: Vec::with_capacity(k_max),
        x_feasible: Vec::with_capacity(k_max),
        z_feasible: Vec::with_capacity(k_max),
        lambda_in_domain: Vec::with_capacity(k_max),
        dual: Vec::new(),
        dual_avg: Vec::new(),
        last_lambda: lambda0.clone(),
        last_x: DVector::zeros(p.nx()),
        last_z: DVector::zeros(p.nz()),
    };
    let mut lambda_prev = lambda0.clone();
    let mut lambda_hat = lambda0.clone();
    let mut lambda_sum = DVector::zeros(p.nc());
    let mut x_warm: Option<DVector<T>> = None;
    for k in 1..=k_max {
        let x_exact = p.x_step(&lambda_hat, x_warm.as_ref())?;
        let x = match errors {
            AmaErrors::Scheduled { delta, feasible_only, .. } => perturb(
                &x_exact,
                real::<T>(delta.magnitude(k)),
                rng.as_mut().unwrap(),
                *feasible_only,
                |at, d| p.tangent_x(at, d),
                |v| p.project_x(v),
            ),
            AmaErrors::Explicit { delta, .. } => &x_exact + &delta[k - 1],
        };
        let r = p.c() - p.a().apply(&x);
        let z_exact = zs.solve(&p.b().apply_t(&(&lambda_hat + &r * tau)))?;
        let z = match errors {
            AmaErrors::Scheduled { theta, feasible_only, .. } => {
                let set = p.g().as_set();
                perturb(
                    &z_exact,
                    real::<T>(theta.magnitude(k)),
                    rng.as_mut().unwrap(),
                    *feasible_only && set.is_some(),
                    |at, d| set.map_or(d.clone(), |s| s.tangent(at, d)),
                    |v| set.map_or(v.clone(), |s| s.project(v)),
                )
            }
            AmaErrors::Explicit { theta, .. } => &z_exact + &theta[k - 1],
        };
        let lambda = &lambda_hat + (&r - p.b().apply(&z)) * tau;
        let delta = &x - &x_exact;
        let theta = &z - &z_exact;
        tr.delta_norm.push(delta.norm());
        tr.theta_norm.push(theta.norm());
        tr.a_delta_norm.push(p.a().apply(&delta).norm());
        tr.b_theta_norm.push(p.b().apply(&theta).norm());
        tr.x_feasible.push(p.x_feasible(&x, feasibility_tol()));
        tr.z_feasible.push(z_in_set(p.g(), &z));
        tr.lambda_in_domain.push(
            p.g().inf_linear(&p.b().apply_t(&lambda), real(1e-9)).map(|v| v.is_finite()).unwrap_or(true),
        );
        lambda_sum += &lambda;
        if opts.record_dual {
            tr.dual.push(dual_value(p, &lambda, inner_tol)?);
            tr.dual_avg.push(dual_value(p, &(&lambda_sum / from_usize::<T>(k)), inner_tol)?);
        }
        lambda_hat = match algorithm {
            Algorithm::Ama => lambda.clone(),
            Algorithm::Fama => {
                let beta = from_usize::<T>(k - 1) / from_usize::<T>(k + 2);
                &lambda + (&lambda - &lambda_prev) * beta
            }
        };
        if opts.keep_iterates {
            tr.lambda.push(lambda.clone());
            tr.lambda_hat.push(lambda_hat.clone());
            tr.x.push(x.clone());
            tr.z.push(z.clone());
            tr.delta.push(delta);
            tr.theta.push(theta);
        }
        x_warm = Some(x_exact);
        tr.last_x = x;
        tr.last_z = z;
        lambda_prev = lambda;
    }
    tr.last_lambda = lambda_prev;
    Ok(tr)
}

/// Default step `0.99·σ_f/ρ(A)`.
pub fn default_tau<T: Real>(p: &SplitProblem<T>) -> T {
    p.step_limit() * real(0.99)
}

pub fn run_inexact_ama<T: Real>(
    p: &SplitProblem<T>,
    lambda0: &DVector<T>,
    tau: T,
    k_max: usize,
    delta_sched: ErrorSchedule,
    theta_sched: ErrorSchedule,
    rng_seed: u64,
) -> Result<AmaTrace<T>> {
    let errors = AmaErrors::scheduled(delta_sched, theta_sched, rng_seed);
    run_ama_with(p, lambda0, tau, k_max, &errors, &AmaOptions::default(), Algorithm::Ama)
}

pub fn run_inexact_fama<T: Real>(
    p: &SplitProblem<T>,
    lambda0: &DVector<T>,
    tau: T,
    k_max: usize,
    delta_sched: ErrorSchedule,
    theta_sched: ErrorSchedule,
    rng_seed: u64,
) -> Result<AmaTrace<T>> {
    let errors = AmaErrors::scheduled(delta_sched, theta_sched, rng_seed);
    run_ama_with(p, lambda0, tau, k_max, &errors, &AmaOptions::default(), Algorithm::Fama)
}

/// Runs AMA (FAMA) and inexact PGM (APGM) on the dual with matched errors
/// (`e^k = Aδ^k`, prox output shifted by `−τBθ^k`) and returns
/// `max_k ‖λ^k − w^k‖`.
pub fn verify_dual_equivalence<T: Real>(
    p: &SplitProblem<T>,
    lambda0: &DVector<T>,
    tau: T,
    k_max: usize,
    errors: &AmaErrors<T>,
    algorithm: Algorithm,
) -> Result<T> {
    let tr = run_ama_with(p, lambda0, tau, k_max, errors, &AmaOptions::default(), algorithm)?;
    let grad: Vec<DVector<T>> = tr.delta.iter().map(|d| p.a().apply(d)).collect();
    let shift: Vec<DVector<T>> = tr.theta.iter().map(|t| -p.b().apply(t) * tau).collect();
    let (phi, psi) = dual_objectives(p)?;
    let pg = run_pgm_with(
        &phi,
        &psi,
        lambda0,
        tau,
        k_max,
        &PgmErrors::Explicit { grad, prox_shift: shift },
        algorithm == Algorithm::Fama,
    )?;
    Ok(tr
        .lambda
        .iter()
        .zip(pg.iterates.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(T::zero(), |a, b| a.max(b)))
}

/// Long exact FAMA run used as ground truth for `λ⋆` and `D(λ⋆)`.
#[derive(Clone, Debug)]
pub struct DualReference<T: Real> {
    pub lambda_star: DVector<T>,
    pub d_star: T,
    pub x_star: DVector<T>,
    pub z_star: DVector<T>,
    /// `‖λ − prox_{τψ}(λ − τ∇φ(λ))‖` at the returned point.
    pub fixed_point_residual: T,
}

pub fn compute_reference<T: Real>(p: &SplitProblem<T>, tau: T, iters: usize) -> Result<DualReference<T>> {
    let opts = AmaOptions { keep_iterates: false, ..AmaOptions::default() };
    let lambda0 = DVector::zeros(p.nc());
    let fama = run_ama_with(p, &lambda0, tau, iters, &AmaErrors::none(), &opts, Algorithm::Fama)?;
    // a short plain AMA tail removes the momentum oscillation
    let tail = run_ama_with(p, &fama.last_lambda, tau, iters / 10 + 10, &AmaErrors::none(), &opts, Algorithm::Ama)?;
    let lambda_star = tail.last_lambda.clone();
    let d_star = dual_value(p, &lambda_star, real(1e-10))?
        .finite()
        .ok_or_else(|| Error::InvalidParameter("reference multiplier has −∞ dual value".into()))?;
    let (phi, psi) = dual_objectives(p)?;
    use crate::splitting::{Proximable, Smooth};
    let step = psi.prox(&(&lambda_star - phi.gradient(&lambda_star)? * tau), tau)?;
    Ok(DualReference {
        fixed_point_residual: (&step - &lambda_star).norm(),
        lambda_star,
        d_star,
        x_star: tail.last_x,
        z_star: tail.last_z,
    })
}

/// Norms `‖Aδ^p‖` and `‖Bθ^p‖` fed to the bound calculators.
#[derive(Clone, Debug, Default)]
pub struct ErrorNorms<T> {
    pub a_delta: Vec<T>,
    pub b_theta: Vec<T>,
}

impl<T: Real> ErrorNorms<T> {
    pub fn from_vectors(p: &SplitProblem<T>, delta: &[DVector<T>], theta: &[DVector<T>]) -> Self {
        ErrorNorms {
            a_delta: delta.iter().map(|d| p.a().apply(d).norm()).collect(),
            b_theta: theta.iter().map(|t| p.b().apply(t).norm()).collect(),
        }
    }

    /// Operator-norm upper bounds `‖A‖‖δ‖`, `‖B‖‖θ‖` from plain norms.
    pub fn from_norms(a_norm: T, b_norm: T, delta: &[T], theta: &[T]) -> Self {
        ErrorNorms {
            a_delta: delta.iter().map(|&d| a_norm * d).collect(),
            b_theta: theta.iter().map(|&t| b_norm * t).collect(),
        }
    }

    pub fn zeros(k: usize) -> Self {
        ErrorNorms { a_delta: vec![T::zero(); k], b_theta: vec![T::zero(); k] }
    }

    fn check(&self, k: usize) -> Result<()> {
        if self.a_delta.len() < k || self.b_theta.len() < k {
            return Err(Error::Dimension(format!("error norms shorter than k = {k}")));
        }
        Ok(())
    }
}

/// `c·L(ψ)‖Bθ‖ + ‖Bθ‖²`, zero when `θ = 0` even if `L(ψ)` is infinite.
fn theta_term<T: Real>(c: T, l_psi: T, bt: T) -> T {
    if bt == T::zero() {
        T::zero()
    } else {
        c * l_psi * bt + bt * bt
    }
}

/// Averaged-multiplier dual gap bound of inexact AMA.
pub fn ama_dual_bound<T: Real>(k: usize, l: T, dist0: T, tau: T, l_psi: T, e: &ErrorNorms<T>) -> Result<T> {
    e.check(k)?;
    if k == 0 {
        return Err(Error::InvalidParameter("bound needs k ≥ 1".into()));
    }
    let two = real::<T>(2.0);
    let (mut gamma, mut lambda) = (T::zero(), T::zero());
    for p in 0..k {
        let t = theta_term(two, l_psi, e.b_theta[p]);
        gamma += e.a_delta[p] / l + tau * (t / l).sqrt();
        lambda += tau * tau * t / (two * l);
    }
    let inner = dist0 + two * gamma + (two * lambda).sqrt();
    Ok(l / (two * from_usize::<T>(k)) * inner * inner)
}

/// Constants of the linear-rate analysis: `γ` and `L(∇φ)`.
#[derive(Clone, Copy, Debug)]
pub struct LinearRateConstants<T> {
    pub gamma: T,
    pub l: T,
}

impl<T: Real> LinearRateConstants<T> {
    /// `γ = λ_min/λ_max(AH⁻¹Aᵀ)`, `L = λ_max(AH⁻¹Aᵀ)`; needs unconstrained quadratic `f` and `A` of full row rank.
    pub fn from_problem(p: &SplitProblem<T>) -> Result<Self> {
        if !p.is_quadratic() {
            return Err(Error::UnsupportedObjective("linear rate needs an unconstrained quadratic f".into()));
        }
        if !p.a().has_full_row_rank() {
            return Err(Error::RankDeficient);
        }
        let (lo, hi) = p.dual_hessian_extremes();
        Ok(LinearRateConstants { gamma: lo / hi, l: hi })
    }

    /// `L = 1/τ` and `γ = τ·σ_φ`, the constants that match an iteration run with step `τ`.
    pub fn step_consistent(p: &SplitProblem<T>, tau: T) -> Result<Self> {
        let sharp = Self::from_problem(p)?;
        Ok(LinearRateConstants { gamma: tau * sharp.gamma * sharp.l, l: T::one() / tau })
    }
}

/// Multiplier distance bound `(1−γ)^k(d0 + Γ)` of inexact AMA under the quadratic assumption.
pub fn ama_linear_bound<T: Real>(
    k: usize,
    c: &LinearRateConstants<T>,
    tau: T,
    l_psi: T,
    dist0: T,
    e: &ErrorNorms<T>,
) -> Result<T> {
    e.check(k)?;
    let q = (T::one() - c.gamma).max(T::zero());
    let mut acc = T::zero();
    for p in 1..=k {
        let t = theta_term(T::one(), l_psi, e.b_theta[p - 1]);
        acc += q.powi((k - p) as i32) * (e.a_delta[p - 1] / c.l + tau * (t / c.l).sqrt());
    }
    Ok(q.powi(k as i32) * dist0 + acc)
}

/// Dual gap bound of inexact FAMA at the last multiplier.
pub fn fama_bound<T: Real>(k: usize, l: T, dist0: T, tau: T, l_psi: T, e: &ErrorNorms<T>) -> Result<T> {
    e.check(k)?;
    let two = real::<T>(2.0);
    let (mut gamma, mut lambda) = (T::zero(), T::zero());
    for p in 1..=k {
        let pf = from_usize::<T>(p);
        let t = theta_term(two, l_psi, e.b_theta[p - 1]);
        gamma += pf * (e.a_delta[p - 1] / l + tau * (t / l).sqrt());
        lambda += pf * pf * tau * tau * t / (two * l);
    }
    let inner = dist0 + two * gamma + (two * lambda).sqrt();
    let kp1 = from_usize::<T>(k + 1);
    Ok(two * l / (kp1 * kp1) * inner * inner)
}

/// Operator norms and error bounds for the bounded-error results.
#[derive(Clone, Copy, Debug)]
pub struct BoundedErrors<T> {
    pub a_norm: T,
    pub b_norm: T,
    pub delta_bar: T,
    pub theta_bar: T,
}

/// `(1−γ)^k d0 + Δ` with `Δ = (1/γ)(‖A‖δ̄/L + τ√((L(ψ)‖B‖θ̄ + ‖B‖²θ̄²)/L))`.
pub fn ama_bounded_error_bound<T: Real>(
    k: usize,
    c: &LinearRateConstants<T>,
    tau: T,
    l_psi: T,
    dist0: T,
    b: &BoundedErrors<T>,
) -> T {
    let bt = b.b_norm * b.theta_bar;
    let delta = (b.a_norm * b.delta_bar / c.l + tau * (theta_term(T::one(), l_psi, bt) / c.l).sqrt()) / c.gamma;
    (T::one() - c.gamma).max(T::zero()).powi(k as i32) * dist0 + delta
}

#[derive(Clone, Copy, Debug)]
pub struct DivergentBound<T> {
    pub value: T,
    /// The bound grows without limit in `k` whenever `Δ > 0`.
    pub diverges: bool,
}

/// `(2L·d0/(k+1) + kΔ)²` with `Δ = ‖A‖δ̄/L + (3τ/2)√((2L(ψ)‖B‖θ̄ + ‖B‖θ̄²)/L)`.
pub fn fama_bounded_error_bound<T: Real>(k: usize, l: T, dist0: T, tau: T, l_psi: T, b: &BoundedErrors<T>) -> DivergentBound<T> {
    let two = real::<T>(2.0);
    let th = if b.theta_bar == T::zero() {
        T::zero()
    } else {
        two * l_psi * b.b_norm * b.theta_bar + b.b_norm * b.theta_bar * b.theta_bar
    };
    let delta = b.a_norm * b.delta_bar / l + real::<T>(1.5) * tau * (th / l).sqrt();
    let kf = from_usize::<T>(k);
    let inner = two * l * dist0 / (kf + T::one()) + kf * delta;
    DivergentBound { value: inner * inner, diverges: delta > T::zero() }
}

/// `L(ψ)` for the bound calculators. A bounded box indicator `g` gives a finite
/// constant; for indicator-type `ψ` (`g` zero, `ℓ1` or an affine indicator) it
/// is `‖c‖` while all multipliers stay in the domain and `+∞` otherwise.
pub fn psi_lipschitz<T: Real>(p: &SplitProblem<T>, in_domain: bool) -> T {
    match p.g() {
        ProxFn::Indicator(ConvexSet::Box { lower, upper }) => {
            let r = DVector::from_fn(lower.len(), |i, _| lower[i].abs().max(upper[i].abs()));
            if r.iter().all(|x| x.is_finite()) {
                p.b().spectral_norm() * r.norm() + p.c().norm()
            } else if in_domain {
                p.c().norm()
            } else {
                T::infinity()
            }
        }
        ProxFn::Zero(_) | ProxFn::L1 { .. } | ProxFn::Indicator(ConvexSet::Free(_)) | ProxFn::Indicator(ConvexSet::Affine { .. }) => {
            if in_domain {
                p.c().norm()
            } else {
                T::infinity()
            }
        }
        _ => T::infinity(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convergence {
    Yes,
    YesToNeighborhood,
    NotGuaranteed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleVerdict {
    pub converges: Convergence,
    pub rationale: String,
}

fn classify_one(s: &ErrorSchedule, alg: Algorithm, quadratic: bool) -> (Convergence, String) {
    use Convergence::*;
    if s.is_zero() {
        return (Yes, "exact step".into());
    }
    match (*s, alg) {
        (ErrorSchedule::Geometric { .. }, _) => (Yes, "geometric decrease is finitely summable".into()),
        (ErrorSchedule::Constant { .. }, Algorithm::Ama) if quadratic => {
            (YesToNeighborhood, "bounded errors with quadratic f: linear rate to a Δ-neighbourhood".into())
        }
        (ErrorSchedule::Constant { .. }, Algorithm::Ama) => {
            (NotGuaranteed, "bounded errors without the quadratic assumption".into())
        }
        (ErrorSchedule::Constant { .. }, Algorithm::Fama) => {
            (NotGuaranteed, "bounded errors: the accelerated bound grows like kΔ".into())
        }
        (ErrorSchedule::Power { p, .. }, Algorithm::Ama) if quadratic => {
            if p >= 1.0 {
                let note = if p < 2.0 {
                    " (for exponents below 2 this relies on the O(1/k) series result; the stated integer range of κ is ambiguous)"
                } else {
                    ""
                };
                (Yes, format!("O(1/k^{p}) with quadratic f: the linear-rate bound decays at the error rate{note}"))
            } else if p > 0.0 {
                (YesToNeighborhood, format!("O(1/k^{p}) is bounded but decays slower than 1/k"))
            } else {
                (YesToNeighborhood, "bounded errors with quadratic f".into())
            }
        }
        (ErrorSchedule::Power { p, .. }, Algorithm::Ama) => {
            if p > 1.0 {
                (Yes, format!("O(1/k^{p}) is summable (κ = {} > 0)", p - 1.0))
            } else {
                (NotGuaranteed, format!("O(1/k^{p}) is not summable"))
            }
        }
        (ErrorSchedule::Power { p, .. }, Algorithm::Fama) => {
            if p > 2.0 {
                (Yes, format!("O(1/k^{p}) has summable k-weighted series (κ = {} > 0)", p - 2.0))
            } else {
                (NotGuaranteed, format!("O(1/k^{p}): the accelerated case needs O(1/k^(2+κ)) with κ > 0"))
            }
        }
        (ErrorSchedule::Zero, _) => unreachable!("handled above"),
    }
}

/// Which sufficient condition (if any) guarantees convergence for a pair of schedules.
pub fn classify_schedule(
    delta_sched: &ErrorSchedule,
    theta_sched: &ErrorSchedule,
    algorithm: Algorithm,
    quadratic_case: bool,
    l_psi_finite: bool,
) -> ScheduleVerdict {
    if !l_psi_finite && !theta_sched.is_zero() {
        return ScheduleVerdict {
            converges: Convergence::NotGuaranteed,
            rationale: "L(ψ) is infinite, so z-step errors are not controlled".into(),
        };
    }
    let (cd, rd) = classify_one(delta_sched, algorithm, quadratic_case);
    let (ct, rt) = classify_one(theta_sched, algorithm, quadratic_case);
    let rank = |c: Convergence| match c {
        Convergence::Yes => 0,
        Convergence::YesToNeighborhood => 1,
        Convergence::NotGuaranteed => 2,
    };
    let converges = if rank(cd) >= rank(ct) { cd } else { ct };
    let infinite_note = if l_psi_finite { "" } else { "; L(ψ) infinite but θ ≡ 0" };
    ScheduleVerdict { converges, rationale: format!("δ: {rd}; θ: {rt}{infinite_note}") }
}

/// `S^k = α^k Σ_{p=1}^k α^{−p}/p` and its closed-form upper bound.
#[derive(Clone, Copy, Debug)]
pub struct SeriesBound {
    pub value: f64,
    /// `None` when a logarithm argument of the closed form is not positive.
    pub upper_bound: Option<f64>,
    /// Switch index `k′` after which `α^{−p}/p` increases.
    pub k_switch: usize,
}

/// Smallest `k′` with `α^{−k′}/k′ < α^{−(k′+1)}/(k′+1)`.
pub fn series_switch_index(alpha: f64) -> usize {
    let mut k = 1usize;
    // α^{-k}/k < α^{-(k+1)}/(k+1)  ⇔  α (k+1) < k
    while alpha * (k as f64 + 1.0) >= k as f64 {
        k += 1;
    }
    k
}

pub fn geometric_harmonic_series(alpha: f64, k: usize) -> Result<SeriesBound> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("series ratio must lie in (0,1), got {alpha}")));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("series index starts at 1".into()));
    }
    // α^{k−p} ≤ 1, so summing in this form cannot overflow
    let value: f64 = (1..=k).map(|p| alpha.powi((k - p) as i32) / p as f64).sum();
    let ks = series_switch_index(alpha);
    let la = alpha.ln();
    let head: f64 = (1..=ks.min(k)).map(|p| alpha.powi((k - p) as i32) / p as f64).sum();
    let arg1 = 1.0 + 2.0 / (k as f64 * la);
    let arg2 = 1.0 + 1.0 / (ks as f64 * la);
    let upper_bound = (arg1 > 0.0 && arg2 > 0.0).then(|| {
        head + 1.0 / k as f64 - 0.5 * arg1.ln() + alpha.powi(k as i32 - ks as i32) * arg2.ln()
    });
    Ok(SeriesBound { value, upper_bound, k_switch: ks })
}

/// One CSV row of an AMA/FAMA run.
#[derive(Clone, Debug, Serialize)]
pub struct AmaRow {
    pub k: usize,
    pub dual_gap_avg: Option<f64>,
    pub dual_gap_last: Option<f64>,
    pub dist_lambda: Option<f64>,
    pub delta_norm: f64,
    pub theta_norm: f64,
    pub bound_thm1: Option<f64>,
    pub bound_thm2: Option<f64>,
    pub bound_thm4: Option<f64>,
    pub bound_cor5: Option<f64>,
}

/// Constants shared by the report columns.
#[derive(Clone, Copy, Debug)]
pub struct BoundConstants<T> {
    pub l: T,
    pub l_psi: T,
    pub linear: Option<LinearRateConstants<T>>,
    pub a_norm: T,
    pub b_norm: T,
}

impl<T: Real> BoundConstants<T> {
    /// Step-consistent constants (`L = 1/τ`, `γ = τσ_φ`) for a trace run with step `tau`.
    pub fn for_trace(p: &SplitProblem<T>, tr: &AmaTrace<T>) -> Self {
        BoundConstants {
            l: T::one() / tr.tau,
            l_psi: psi_lipschitz(p, tr.all_in_domain()),
            linear: LinearRateConstants::step_consistent(p, tr.tau).ok(),
            a_norm: p.a().spectral_norm(),
            b_norm: p.b().spectral_norm(),
        }
    }
}

/// Joins a trace with reference values and evaluates every applicable bound.
pub fn ama_report<T: Real>(tr: &AmaTrace<T>, r: &DualReference<T>, c: &BoundConstants<T>) -> Result<Vec<AmaRow>> {
    let dist0 = (&tr.lambda0 - &r.lambda_star).norm();
    let norms = tr.error_norms();
    let mut rows = Vec::with_capacity(tr.len());
    let (mut dmax, mut tmax) = (T::zero(), T::zero());
    let gap = |d: Option<&Extended<T>>| d.and_then(|v| v.finite()).map(|v| to_f64(r.d_star - v));
    for k in 1..=tr.len() {
        dmax = dmax.max(tr.delta_norm[k - 1]);
        tmax = tmax.max(tr.theta_norm[k - 1]);
        let ama = tr.algorithm == Algorithm::Ama;
        let bounded = BoundedErrors { a_norm: c.a_norm, b_norm: c.b_norm, delta_bar: dmax, theta_bar: tmax };
        rows.push(AmaRow {
            k,
            dual_gap_avg: gap(tr.dual_avg.get(k - 1)),
            dual_gap_last: gap(tr.dual.get(k - 1)),
            dist_lambda: tr.lambda.get(k - 1).map(|l| to_f64((l - &r.lambda_star).norm())),
            delta_norm: to_f64(tr.delta_norm[k - 1]),
            theta_norm: to_f64(tr.theta_norm[k - 1]),
            bound_thm1: ama.then(|| ama_dual_bound(k, c.l, dist0, tr.tau, c.l_psi, &norms).ok().map(to_f64)).flatten(),
            bound_thm2: c
                .linear
                .filter(|_| ama)
                .and_then(|lc| ama_linear_bound(k, &lc, tr.tau, c.l_psi, dist0, &norms).ok().map(to_f64)),
            bound_thm4: (!ama).then(|| fama_bound(k, c.l, dist0, tr.tau, c.l_psi, &norms).ok().map(to_f64)).flatten(),
            bound_cor5: c
                .linear
                .filter(|_| ama)
                .map(|lc| to_f64(ama_bounded_error_bound(k, &lc, tr.tau, c.l_psi, dist0, &bounded))),
        });
    }
    Ok(rows)
}
