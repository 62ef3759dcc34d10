//! Inexact proximal-gradient method and its accelerated variant, with the
//! complexity-bound calculators that take measured error norms.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::random_direction;
use crate::scalar::{from_usize, real, Real};
use crate::splitting::{prox_inexact, Extended, Proximable, Smooth};

/// Magnitudes of injected errors as a function of the iteration counter `k ≥ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ErrorSchedule {
    Zero,
    Constant { c: f64 },
    /// `c / k^p`
    Power { c: f64, p: f64 },
    /// `c · r^k`
    Geometric { c: f64, r: f64 },
}

impl ErrorSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ErrorSchedule::Zero => true,
            ErrorSchedule::Constant { c } => c >= 0.0,
            ErrorSchedule::Power { c, p } => c >= 0.0 && p >= 0.0,
            ErrorSchedule::Geometric { c, r } => c >= 0.0 && (0.0..1.0).contains(&r),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid error schedule {self}")))
        }
    }

    pub fn magnitude(&self, k: usize) -> f64 {
        let kf = k.max(1) as f64;
        match *self {
            ErrorSchedule::Zero => 0.0,
            ErrorSchedule::Constant { c } => c,
            ErrorSchedule::Power { c, p } => c / kf.powf(p),
            ErrorSchedule::Geometric { c, r } => c * r.powf(kf),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            ErrorSchedule::Zero => true,
            ErrorSchedule::Constant { c } | ErrorSchedule::Power { c, .. } | ErrorSchedule::Geometric { c, .. } => c == 0.0,
        }
    }
}

impl fmt::Display for ErrorSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorSchedule::Zero => write!(f, "zero"),
            ErrorSchedule::Constant { c } => write!(f, "const:{c}"),
            ErrorSchedule::Power { c, p } => write!(f, "power:{c}:{p}"),
            ErrorSchedule::Geometric { c, r } => write!(f, "geom:{c}:{r}"),
        }
    }
}

impl FromStr for ErrorSchedule {
    type Err = Error;

    /// Parses `zero`, `const:c`, `power:c:p` or `geom:c:r`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::InvalidParameter(format!("schedule `{s}` is missing a parameter")))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidParameter(format!("schedule `{s}`: {e}")))
        };
        let sched = match (parts[0].trim(), parts.len()) {
            ("zero", 1) => ErrorSchedule::Zero,
            ("const", 2) => ErrorSchedule::Constant { c: num(1)? },
            ("power", 3) => ErrorSchedule::Power { c: num(1)?, p: num(2)? },
            ("geom", 3) => ErrorSchedule::Geometric { c: num(1)?, r: num(2)? },
            _ => return Err(Error::InvalidParameter(format!("unknown schedule `{s}`"))),
        };
        sched.validate()?;
        Ok(sched)
    }
}

/// Source of the gradient errors `e^k` and prox errors `ε^k`.
#[derive(Clone, Debug)]
pub enum PgmErrors<T: Real> {
    /// Magnitudes from schedules, seeded random directions.
    Scheduled { grad: ErrorSchedule, prox: ErrorSchedule, seed: u64, feasible_only: bool },
    /// Prescribed vectors: `e^k = grad[k-1]` and the exact prox output is shifted by `prox_shift[k-1]`.
    Explicit { grad: Vec<DVector<T>>, prox_shift: Vec<DVector<T>> },
}

impl<T: Real> PgmErrors<T> {
    pub fn scheduled(grad: ErrorSchedule, prox: ErrorSchedule, seed: u64) -> Self {
        PgmErrors::Scheduled { grad, prox, seed, feasible_only: true }
    }
}

#[derive(Clone, Debug)]
pub struct PgmTrace<T: Real> {
    pub accelerated: bool,
    pub tau: T,
    pub seed: Option<u64>,
    pub w0: DVector<T>,
    /// `w̃^k` for `k = 1..=K`.
    pub iterates: Vec<DVector<T>>,
    /// `(1/k) Σ_{p≤k} w̃^p`.
    pub averages: Vec<DVector<T>>,
    pub objective: Vec<Extended<T>>,
    pub avg_objective: Vec<Extended<T>>,
    pub e_norms: Vec<T>,
    /// Achieved prox-objective gap at each step (`+∞` if the point left the domain).
    pub eps: Vec<T>,
}

impl<T: Real> PgmTrace<T> {
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }
}

fn composite<T: Real, P: Smooth<T>, Q: Proximable<T>>(phi: &P, psi: &Q, w: &DVector<T>) -> Result<Extended<T>> {
    let s = psi.value(w)?;
    Ok(s.shift(phi.value(w)?))
}

fn check_step<T: Real>(tau: T, l: T) -> Result<()> {
    if !(tau > T::zero() && tau * l < T::one()) {
        return Err(Error::StepSize { tau: crate::scalar::to_f64(tau), limit: crate::scalar::to_f64(T::one() / l) });
    }
    Ok(())
}

/// Runs inexact PGM (`accelerated = false`) or inexact APGM with full control over the error source.
pub fn run_pgm_with<T: Real, P: Smooth<T>, Q: Proximable<T>>(
    phi: &P,
    psi: &Q,
    w0: &DVector<T>,
    tau: T,
    k_max: usize,
    errors: &PgmErrors<T>,
    accelerated: bool,
) -> Result<PgmTrace<T>> {
    check_step(tau, phi.lipschitz())?;
    if w0.len() != phi.dim() || w0.len() != psi.dim() {
        return Err(Error::Dimension(format!("start point {} vs objectives {}/{}", w0.len(), phi.dim(), psi.dim())));
    }
    let (mut rng, seed) = match errors {
        PgmErrors::Scheduled { grad, prox, seed, .. } => {
            grad.validate()?;
            prox.validate()?;
            (Some(ChaCha8Rng::seed_from_u64(*seed)), Some(*seed))
        }
        PgmErrors::Explicit { grad, prox_shift } => {
            if grad.len() < k_max || prox_shift.len() < k_max {
                return Err(Error::Dimension("explicit error series shorter than the horizon".into()));
            }
            (None, None)
        }
    };
    let mut trace = PgmTrace {
        accelerated,
        tau,
        seed,
        w0: w0.clone(),
        iterates: Vec::with_capacity(k_max),
        averages: Vec::with_capacity(k_max),
        objective: Vec::with_capacity(k_max),
        avg_objective: Vec::with_capacity(k_max),
        e_norms: Vec::with_capacity(k_max),
        eps: Vec::with_capacity(k_max),
    };
    let mut w_prev = w0.clone();
    let mut v = w0.clone();
    let mut sum = DVector::zeros(w0.len());
    for k in 1..=k_max {
        let grad = phi.gradient(&v)?;
        let (e, w, eps) = match errors {
            PgmErrors::Scheduled { grad: gs, prox: ps, feasible_only, .. } => {
                let rng = rng.as_mut().expect("scheduled errors carry a generator");
                let e = random_direction(rng, w0.len(), real::<T>(gs.magnitude(k)));
                let point = &v - (&grad + &e) * tau;
                let r = prox_inexact(psi, &point, tau, real::<T>(ps.magnitude(k)), *feasible_only, rng)?;
                (e, r.point, r.epsilon)
            }
            PgmErrors::Explicit { grad: ge, prox_shift } => {
                let e = ge[k - 1].clone();
                let point = &v - (&grad + &e) * tau;
                let exact = psi.prox(&point, tau)?;
                let w = &exact + &prox_shift[k - 1];
                let gap = prox_gap(psi, &w, &exact, &point, tau)?;
                (e, w, gap)
            }
        };
        sum += &w;
        let avg = &sum / from_usize::<T>(k);
        trace.e_norms.push(e.norm());
        trace.eps.push(eps);
        trace.objective.push(composite(phi, psi, &w)?);
        trace.avg_objective.push(composite(phi, psi, &avg)?);
        v = if accelerated {
            let beta = from_usize::<T>(k - 1) / from_usize::<T>(k + 2);
            &w + (&w - &w_prev) * beta
        } else {
            w.clone()
        };
        trace.averages.push(avg);
        trace.iterates.push(w.clone());
        w_prev = w;
    }
    Ok(trace)
}

fn prox_gap<T: Real, Q: Proximable<T>>(psi: &Q, w: &DVector<T>, exact: &DVector<T>, v: &DVector<T>, tau: T) -> Result<T> {
    let obj = |u: &DVector<T>| -> Result<Option<T>> {
        Ok(psi.value(u)?.finite().map(|x| tau * x + (u - v).norm_squared() * real(0.5)))
    };
    Ok(match (obj(w)?, obj(exact)?) {
        (Some(a), Some(b)) => (a - b).max(T::zero()),
        _ => T::infinity(),
    })
}

pub fn run_inexact_pgm<T: Real, P: Smooth<T>, Q: Proximable<T>>(
    phi: &P,
    psi: &Q,
    w0: &DVector<T>,
    tau: T,
    k_max: usize,
    e_sched: ErrorSchedule,
    eps_sched: ErrorSchedule,
    rng_seed: u64,
) -> Result<PgmTrace<T>> {
    run_pgm_with(phi, psi, w0, tau, k_max, &PgmErrors::scheduled(e_sched, eps_sched, rng_seed), false)
}

pub fn run_inexact_apgm<T: Real, P: Smooth<T>, Q: Proximable<T>>(
    phi: &P,
    psi: &Q,
    w0: &DVector<T>,
    tau: T,
    k_max: usize,
    e_sched: ErrorSchedule,
    eps_sched: ErrorSchedule,
    rng_seed: u64,
) -> Result<PgmTrace<T>> {
    run_pgm_with(phi, psi, w0, tau, k_max, &PgmErrors::scheduled(e_sched, eps_sched, rng_seed), true)
}

fn check_len<T>(k: usize, a: &[T], b: &[T]) -> Result<()> {
    if a.len() < k || b.len() < k {
        return Err(Error::Dimension(format!("error series shorter than k = {k}")));
    }
    Ok(())
}

/// Averaged-iterate bound `L/(2k)·(d0 + 2Γ + √(2Λ))²` with
/// `Γ = Σ(‖e‖/L + √(2ε/L))`, `Λ = Σ ε/L`.
/// Prox errors `ε` are measured on `ψ(u) + (L/2)‖u − v‖²` in all three bounds.
pub fn pgm_bound_convex<T: Real>(k: usize, l: T, dist0: T, e_norms: &[T], eps_vals: &[T]) -> Result<T> {
    check_len(k, e_norms, eps_vals)?;
    if k == 0 {
        return Err(Error::InvalidParameter("bound needs k ≥ 1".into()));
    }
    let two = real::<T>(2.0);
    let (mut gamma, mut lambda) = (T::zero(), T::zero());
    for p in 0..k {
        gamma += e_norms[p] / l + (two * eps_vals[p] / l).sqrt();
        lambda += eps_vals[p] / l;
    }
    let inner = dist0 + two * gamma + (two * lambda).sqrt();
    Ok(l / (two * from_usize::<T>(k)) * inner * inner)
}

/// Last-iterate distance bound `(1−γ)^k (d0 + Γ)` with `γ = σ/L` and
/// `Γ = Σ(1−γ)^{−p}(‖e‖/L + √(2/L)√ε)`.
pub fn pgm_bound_strongly_convex<T: Real>(k: usize, l: T, sigma_phi: T, dist0: T, e_norms: &[T], eps_vals: &[T]) -> Result<T> {
    check_len(k, e_norms, eps_vals)?;
    if !(sigma_phi > T::zero() && sigma_phi <= l * (T::one() + T::eps() * real(8.0))) {
        return Err(Error::InvalidParameter(format!("need 0 < σ ≤ L, got σ = {sigma_phi}, L = {l}")));
    }
    let q = (T::one() - sigma_phi / l).max(T::zero());
    let two = real::<T>(2.0);
    // accumulate q^{k-p} directly so that q → 0 stays finite
    let mut acc = T::zero();
    for p in 1..=k {
        let w = q.powi((k - p) as i32);
        acc += w * (e_norms[p - 1] / l + (two / l).sqrt() * eps_vals[p - 1].sqrt());
    }
    Ok(q.powi(k as i32) * dist0 + acc)
}

/// Accelerated bound `2L/(k+1)²·(d0 + 2Γ + √(2Λ))²` with p-weighted `Γ` and p²-weighted `Λ`.
pub fn apgm_bound<T: Real>(k: usize, l: T, dist0: T, e_norms: &[T], eps_vals: &[T]) -> Result<T> {
    check_len(k, e_norms, eps_vals)?;
    let two = real::<T>(2.0);
    let (mut gamma, mut lambda) = (T::zero(), T::zero());
    for p in 1..=k {
        let pf = from_usize::<T>(p);
        gamma += pf * (e_norms[p - 1] / l + (two * eps_vals[p - 1] / l).sqrt());
        lambda += pf * pf * eps_vals[p - 1] / l;
    }
    let inner = dist0 + two * gamma + (two * lambda).sqrt();
    let kp1 = from_usize::<T>(k + 1);
    Ok(two * l / (kp1 * kp1) * inner * inner)
}

/// One CSV row of a PGM run.
#[derive(Clone, Debug, Serialize)]
pub struct PgmRow {
    pub k: usize,
    pub obj_gap: Option<f64>,
    pub dist_to_opt: Option<f64>,
    pub e_norm: f64,
    pub eps: f64,
    pub bound_p1: Option<f64>,
    pub bound_p2: Option<f64>,
    pub bound_p3: Option<f64>,
}

/// Constants used to evaluate the bounds against a trace.
#[derive(Clone, Copy, Debug)]
pub struct PgmReference<T> {
    pub phi_star: T,
    pub l: T,
    pub sigma: T,
}

/// Joins a trace with a reference optimum and the applicable bound columns.
/// The averaged-iterate bound applies to PGM, the accelerated bound to APGM and the
/// linear bound to PGM only when `sigma > 0`.
///
/// The bound calculators measure prox errors on `ψ(u) + (1/2τ)‖u − v‖²`, while
/// the trace records them on `τψ(u) + ½‖u − v‖²`, so `eps` is divided by `τ`
/// before it enters the bounds. The `eps` column keeps the recorded value.
pub fn pgm_report<T: Real>(trace: &PgmTrace<T>, w_star: &DVector<T>, r: &PgmReference<T>) -> Result<Vec<PgmRow>> {
    let dist0 = (&trace.w0 - w_star).norm();
    let eps: Vec<T> = trace.eps.iter().map(|&e| e / trace.tau).collect();
    let mut rows = Vec::with_capacity(trace.len());
    for k in 1..=trace.len() {
        let obj = if trace.accelerated { trace.objective[k - 1] } else { trace.avg_objective[k - 1] };
        let eps_ok = trace.eps[..k].iter().all(|e| e.is_finite());
        let f = crate::scalar::to_f64::<T>;
        rows.push(PgmRow {
            k,
            obj_gap: obj.finite().map(|o| f(o - r.phi_star)),
            dist_to_opt: Some(f((&trace.iterates[k - 1] - w_star).norm())),
            e_norm: f(trace.e_norms[k - 1]),
            eps: f(trace.eps[k - 1]),
            bound_p1: (!trace.accelerated && eps_ok)
                .then(|| pgm_bound_convex(k, r.l, dist0, &trace.e_norms, &eps).ok().map(f))
                .flatten(),
            bound_p2: (trace.accelerated && eps_ok)
                .then(|| apgm_bound(k, r.l, dist0, &trace.e_norms, &eps).ok().map(f))
                .flatten(),
            bound_p3: (!trace.accelerated && eps_ok && r.sigma > T::zero())
                .then(|| pgm_bound_strongly_convex(k, r.l, r.sigma, dist0, &trace.e_norms, &eps).ok().map(f))
                .flatten(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitting::{ProxFn, QuadraticFn};
    use nalgebra::DMatrix;

    fn scalar_half_square() -> QuadraticFn<f64> {
        QuadraticFn::new(DMatrix::from_element(1, 1, 1.0), DVector::zeros(1)).unwrap()
    }

    #[test]
    fn hand_iteration_halves() {
        let phi = scalar_half_square();
        let psi = ProxFn::Zero(1);
        let t = run_inexact_pgm(&phi, &psi, &DVector::from_element(1, 1.0), 0.5, 10, ErrorSchedule::Zero, ErrorSchedule::Zero, 0)
            .unwrap();
        for (k, w) in t.iterates.iter().enumerate() {
            assert_eq!(w[0], 0.5f64.powi(k as i32 + 1));
        }
    }

    #[test]
    fn step_size_rejected() {
        let phi = scalar_half_square();
        let r = run_inexact_pgm(&phi, &ProxFn::Zero(1), &DVector::zeros(1), 1.0, 3, ErrorSchedule::Zero, ErrorSchedule::Zero, 0);
        assert!(matches!(r, Err(Error::StepSize { .. })));
    }

    #[test]
    fn first_accelerated_step_is_plain() {
        let phi = scalar_half_square();
        let psi = ProxFn::Zero(1);
        let w0 = DVector::from_element(1, 1.0);
        let a = run_inexact_pgm(&phi, &psi, &w0, 0.5, 1, ErrorSchedule::Zero, ErrorSchedule::Zero, 0).unwrap();
        let b = run_inexact_apgm(&phi, &psi, &w0, 0.5, 1, ErrorSchedule::Zero, ErrorSchedule::Zero, 0).unwrap();
        assert_eq!(a.iterates, b.iterates);
    }

    #[test]
    fn convex_bound_examples() {
        assert_eq!(pgm_bound_convex(1, 1.0, 1.0, &[1.0], &[0.0]).unwrap(), 4.5);
        // ε = L/2: Γ = √(2·(1/2)) = 1, Λ = 1/2
        assert!((pgm_bound_convex(1, 1.0f64, 0.0, &[0.0], &[0.5]).unwrap() - 4.5).abs() < 1e-15);
        assert_eq!(pgm_bound_convex(4, 2.0, 3.0, &[0.0; 4], &[0.0; 4]).unwrap(), 2.0 * 9.0 / 8.0);
    }

    #[test]
    fn strongly_convex_bound_examples() {
        assert!((pgm_bound_strongly_convex(2, 1.0f64, 0.5, 1.0, &[1.0, 1.0], &[0.0, 0.0]).unwrap() - 1.75).abs() < 1e-15);
        assert_eq!(pgm_bound_strongly_convex(5, 1.0, 1.0, 2.0, &[0.0; 5], &[0.0; 5]).unwrap(), 0.0);
        let got = pgm_bound_strongly_convex(3, 4.0, 1.0, 2.0, &[0.0; 3], &[0.0; 3]).unwrap();
        assert!((got - 0.75f64.powi(3) * 2.0).abs() < 1e-15);
    }

    #[test]
    fn accelerated_bound_examples() {
        assert_eq!(apgm_bound(1, 1.0, 0.0, &[1.0], &[0.0]).unwrap(), 2.0);
        assert_eq!(apgm_bound(1, 3.0, 2.0, &[0.0], &[0.0]).unwrap(), 3.0 * 4.0 / 2.0);
        // e^p = 1/p²: bound decreases monotonically once k ≥ 10
        let e: Vec<f64> = (1..=400).map(|p| 1.0 / (p * p) as f64).collect();
        let z = vec![0.0; 400];
        let mut prev = f64::INFINITY;
        for k in 10..=400 {
            let b = apgm_bound(k, 1.0, 1.0, &e, &z).unwrap();
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn schedules_parse_and_decrease() {
        let s: ErrorSchedule = "power:2:1.5".parse().unwrap();
        assert_eq!(s, ErrorSchedule::Power { c: 2.0, p: 1.5 });
        assert_eq!(s.to_string().parse::<ErrorSchedule>().unwrap(), s);
        assert!("geom:1:1.5".parse::<ErrorSchedule>().is_err());
        assert!("nope".parse::<ErrorSchedule>().is_err());
        for s in [
            ErrorSchedule::Zero,
            ErrorSchedule::Constant { c: 0.3 },
            ErrorSchedule::Power { c: 1.0, p: 2.0 },
            ErrorSchedule::Geometric { c: 2.0, r: 0.9 },
        ] {
            for k in 1..200 {
                assert!(s.magnitude(k) >= 0.0 && s.magnitude(k + 1) <= s.magnitude(k));
            }
        }
    }
}
