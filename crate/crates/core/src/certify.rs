//! Warm-started projected-gradient local solver with an online bound on the
//! number of inner iterations.
//!
//! With contraction factor `1 − γ` of the projected-gradient map, a warm start
//! from the previous output, and `z⋆(λ)` Lipschitz with constant `L_z`, running
//!
//! `J_k = ⌈log_{1−γ}(α^k / (α^{k−1} + L_z β^k))⌉`
//!
//! steps keeps the local error below `α^k` whenever it was below `α^{k−1}` at
//! the previous outer iteration. `β^k` is the change of the local multiplier
//! between two consecutive solves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributed::{AgentProblem, LocalOutput, LocalQuery, LocalSolver, NetworkProblem};
use crate::error::{Error, Result};
use crate::linalg::sym_eig_extremes;
use crate::scalar::{real, to_f64, Real};

/// Cap of [`exact_min_iterations`].
pub const EXACT_ITERATION_CAP: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rate", rename_all = "lowercase")]
pub enum DecreaseRate {
    /// `α^k = α⁰/k^p`.
    Power { p: f64 },
    /// `α^k = α⁰ r^k`.
    Geometric { r: f64 },
}

/// Prescribed bound `α^k` on the local error at outer iteration `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecreaseFunction {
    pub alpha0: f64,
    #[serde(flatten)]
    pub rate: DecreaseRate,
}

impl DecreaseFunction {
    pub fn new(alpha0: f64, rate: DecreaseRate) -> Result<Self> {
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(Error::InvalidParameter(format!("α⁰ must be positive, got {alpha0}")));
        }
        match rate {
            DecreaseRate::Power { p } if !(p >= 0.0 && p.is_finite()) => {
                return Err(Error::InvalidParameter(format!("power exponent must be ≥ 0, got {p}")))
            }
            DecreaseRate::Geometric { r } if !(r > 0.0 && r <= 1.0) => {
                return Err(Error::InvalidParameter(format!("geometric ratio must lie in (0,1], got {r}")))
            }
            _ => {}
        }
        Ok(DecreaseFunction { alpha0, rate })
    }

    /// `α^k`; `k = 0` gives `α⁰`.
    pub fn value(&self, k: usize) -> f64 {
        if k == 0 {
            return self.alpha0;
        }
        match self.rate {
            DecreaseRate::Power { p } => self.alpha0 / (k as f64).powf(p),
            DecreaseRate::Geometric { r } => self.alpha0 * r.powi(k as i32),
        }
    }
}

/// `J` projected-gradient steps `z ← P_C(z − τ(∇f(z) − λ))` from `warm`.
pub fn local_pg<T: Real>(agent: &AgentProblem<T>, lambda: &DVector<T>, warm: &DVector<T>, j: usize, tau: T) -> Result<DVector<T>> {
    check_pg(agent, warm, tau)?;
    let mut z = warm.clone();
    for _ in 0..j {
        z = pg_step(agent, lambda, &z, tau);
    }
    Ok(z)
}

fn check_pg<T: Real>(agent: &AgentProblem<T>, warm: &DVector<T>, tau: T) -> Result<()> {
    let limit = T::one() / agent.lipschitz();
    if !(tau > T::zero() && tau < limit) {
        return Err(Error::StepSize { tau: to_f64(tau), limit: to_f64(limit) });
    }
    if warm.len() != agent.dim() {
        return Err(Error::Dimension(format!("warm start {} vs agent {}", warm.len(), agent.dim())));
    }
    let v = agent.violation(warm);
    if v > real::<T>(1e-12) {
        return Err(Error::InfeasibleWarmStart(to_f64(v)));
    }
    Ok(())
}

fn pg_step<T: Real>(agent: &AgentProblem<T>, lambda: &DVector<T>, z: &DVector<T>, tau: T) -> DVector<T> {
    let g = agent.quad().grad(z) - lambda;
    agent.project(&(z - g * tau))
}

/// Smallest `J ≥ 0` with `(1−γ)^J ≤ α^k/(α^{k−1} + L_z β^k)`.
pub fn certify_iterations(alpha_k: f64, alpha_prev: f64, beta_k: f64, gamma: f64, lz: f64) -> Result<usize> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidParameter(format!("contraction parameter γ must lie in (0,1], got {gamma}")));
    }
    if !(alpha_k > 0.0 && alpha_prev > 0.0) {
        return Err(Error::InvalidParameter("decrease function values must be positive".into()));
    }
    if !(beta_k >= 0.0 && lz >= 0.0) {
        return Err(Error::InvalidParameter("β and L_z must be non-negative".into()));
    }
    let arg = alpha_k / (alpha_prev + lz * beta_k);
    if arg >= 1.0 {
        return Ok(0);
    }
    if gamma >= 1.0 {
        return Ok(1);
    }
    let q = 1.0 - gamma;
    let mut j = (arg.ln() / q.ln()).ceil().max(1.0) as usize;
    // the ceiling of a rounded logarithm can land one above the minimum
    while j > 1 && q.powi(j as i32 - 1) <= arg {
        j -= 1;
    }
    while q.powi(j as i32) > arg {
        j += 1;
    }
    Ok(j)
}

/// `1/λ_min(H)`, a Lipschitz constant of `λ ↦ argmin_{z ∈ C} ½zᵀHz + hᵀz − λᵀz`.
pub fn lipschitz_of_argmin<T: Real>(h: &DMatrix<T>) -> Result<T> {
    let (lo, _) = sym_eig_extremes(h);
    if lo <= T::zero() {
        return Err(Error::NotPositiveDefinite(format!("smallest eigenvalue {lo}")));
    }
    Ok(T::one() / lo)
}

/// Smallest number of projected-gradient steps from `warm` reaching `‖z − z⋆‖ ≤ α^k`.
pub fn exact_min_iterations<T: Real>(
    agent: &AgentProblem<T>,
    lambda: &DVector<T>,
    warm: &DVector<T>,
    alpha_k: T,
    tau: T,
    z_star: Option<&DVector<T>>,
) -> Result<usize> {
    check_pg(agent, warm, tau)?;
    let star = match z_star {
        Some(z) => z.clone(),
        None => agent.solve_exact(lambda, Some(warm))?,
    };
    let mut z = warm.clone();
    for j in 0..=EXACT_ITERATION_CAP {
        if (&z - &star).norm() <= alpha_k {
            return Ok(j);
        }
        z = pg_step(agent, lambda, &z, tau);
    }
    Err(Error::IterationCap(EXACT_ITERATION_CAP))
}

/// Per-agent constants of the certificate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertState<T> {
    pub tau: T,
    /// Contraction parameter `τσ` of the projected-gradient map.
    pub gamma: T,
    /// `σ/L`, the parameter quoted for step sizes close to `1/L`.
    pub gamma_ratio: T,
    pub lz: T,
}

impl<T: Real> CertState<T> {
    /// `τ = 0.99/L`.
    pub fn for_agent(agent: &AgentProblem<T>) -> Result<Self> {
        let tau = real::<T>(0.99) / agent.lipschitz();
        Ok(CertState {
            tau,
            gamma: tau * agent.sigma(),
            gamma_ratio: agent.sigma() / agent.lipschitz(),
            lz: lipschitz_of_argmin(agent.quad().hessian())?,
        })
    }
}

/// Local solver running the certified number of projected-gradient steps.
#[derive(Clone, Debug)]
pub struct CertifiedLocal<T> {
    pub alpha: DecreaseFunction,
    pub states: Vec<CertState<T>>,
    /// Also count the minimal steps reaching `α^k` (needs the exact local optimum).
    pub compare_exact: bool,
}

impl<T: Real> CertifiedLocal<T> {
    pub fn new(problem: &NetworkProblem<T>, alpha: DecreaseFunction, compare_exact: bool) -> Result<Self> {
        let states = problem.agents.iter().map(CertState::for_agent).collect::<Result<_>>()?;
        Ok(CertifiedLocal { alpha, states, compare_exact })
    }
}

impl<T: Real> LocalSolver<T> for CertifiedLocal<T> {
    fn solve(&self, q: &LocalQuery<'_, T>) -> Result<LocalOutput<T>> {
        let s = &self.states[q.agent];
        let beta = (q.lambda - q.lambda_prev).norm();
        let (ak, ap) = (self.alpha.value(q.k), self.alpha.value(q.k - 1));
        let j = certify_iterations(ak, ap, to_f64(beta), to_f64(s.gamma), to_f64(s.lz))?;
        let z = local_pg(q.problem, q.lambda, q.warm, j, s.tau)?;
        let exact_iterations = if self.compare_exact {
            Some(exact_min_iterations(q.problem, q.lambda, q.warm, real(ak), s.tau, q.exact)?)
        } else {
            None
        };
        Ok(LocalOutput { z, iterations: Some(j), exact_iterations, alpha: Some(real(ak)), beta: Some(beta) })
    }

    fn needs_exact(&self) -> bool {
        self.compare_exact
    }
}

/// `max_i ‖P_i(0) − z_i⋆(0)‖`, the smallest `α⁰` covering the first warm start.
pub fn default_alpha0<T: Real>(problem: &NetworkProblem<T>) -> Result<f64> {
    let mut worst = 0.0f64;
    for a in &problem.agents {
        let zero = DVector::zeros(a.dim());
        let start = a.project(&zero);
        let star = a.solve_exact(&zero, Some(&start))?;
        worst = worst.max(to_f64((start - star).norm()));
    }
    // relative slack for the rounding of the two solves being compared
    Ok(worst * (1.0 + 1e-6) + 1e-12)
}

/// One row of the per-agent certification log.
#[derive(Clone, Debug, Serialize)]
pub struct CertRow {
    pub k: usize,
    pub agent: usize,
    pub beta_k: f64,
    pub alpha_k: f64,
    pub j_certified: usize,
    pub j_exact: Option<usize>,
    pub delta_measured: Option<f64>,
}

/// Flattens a certified distributed trace into log rows.
pub fn certification_log<T: Real>(tr: &crate::distributed::DistributedTrace<T>) -> Vec<CertRow> {
    let mut rows = Vec::new();
    for k in 0..tr.len() {
        for (i, j) in tr.iterations[k].iter().enumerate() {
            let Some(j) = j else { continue };
            rows.push(CertRow {
                k: k + 1,
                agent: i,
                beta_k: tr.beta[k][i].map(to_f64).unwrap_or(f64::NAN),
                alpha_k: tr.alpha[k].map(to_f64).unwrap_or(f64::NAN),
                j_certified: *j,
                j_exact: tr.exact_iterations[k][i],
                delta_measured: tr.agent_delta[k].get(i).map(|&d| to_f64(d)),
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitting::QuadraticFn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_agent(lo: f64, hi: f64) -> AgentProblem<f64> {
        let q = QuadraticFn::new(DMatrix::from_element(1, 1, 1.0), DVector::zeros(1)).unwrap();
        AgentProblem::new(q, DVector::from_element(1, lo), DVector::from_element(1, hi)).unwrap()
    }

    fn random_agent(rng: &mut ChaCha8Rng, n: usize) -> AgentProblem<f64> {
        let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &r * r.transpose() + DMatrix::identity(n, n) * 0.5;
        let lin = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let q = QuadraticFn::new(h, lin).unwrap();
        AgentProblem::new(q, DVector::from_element(n, -0.4), DVector::from_element(n, 0.3)).unwrap()
    }

    #[test]
    fn zero_steps_return_warm_start() {
        let a = scalar_agent(-10.0, 10.0);
        let w = DVector::from_element(1, 0.7);
        assert_eq!(local_pg(&a, &DVector::zeros(1), &w, 0, 0.5).unwrap(), w);
    }

    #[test]
    fn hand_iteration_halves() {
        let a = scalar_agent(-10.0, 10.0);
        let z = local_pg(&a, &DVector::zeros(1), &DVector::from_element(1, 1.0), 3, 0.5).unwrap();
        assert!((z[0] - 0.125).abs() < 1e-15);
        let j = exact_min_iterations(&a, &DVector::zeros(1), &DVector::from_element(1, 1.0), 0.2, 0.5, None).unwrap();
        assert_eq!(j, 3);
    }

    #[test]
    fn rejects_bad_step_and_infeasible_warm() {
        let a = scalar_agent(-1.0, 1.0);
        let w = DVector::from_element(1, 0.5);
        assert!(matches!(local_pg(&a, &DVector::zeros(1), &w, 1, 1.0), Err(Error::StepSize { .. })));
        let far = DVector::from_element(1, 2.0);
        assert!(matches!(local_pg(&a, &DVector::zeros(1), &far, 1, 0.5), Err(Error::InfeasibleWarmStart(_))));
    }

    #[test]
    fn certificate_examples() {
        assert_eq!(certify_iterations(0.5, 0.5, 0.0, 0.3, 2.0).unwrap(), 0);
        assert_eq!(certify_iterations(0.25, 0.5, 1.0, 0.5, 0.5).unwrap(), 2);
        assert_eq!(certify_iterations(0.25, 0.5, 1.0, 1.0, 0.5).unwrap(), 1);
        assert!(certify_iterations(0.25, 0.5, 1.0, 0.0, 0.5).is_err());
        // brute-force minimum over J
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let (ak, ap, b, g, l): (f64, f64, f64, f64, f64) = (
                rng.random_range(0.01..1.0),
                rng.random_range(0.01..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.01..0.99),
                rng.random_range(0.0..3.0),
            );
            let arg: f64 = ak / (ap + l * b);
            let brute = (0..100_000).find(|&j| (1.0 - g).powi(j) <= arg).unwrap() as usize;
            assert_eq!(certify_iterations(ak, ap, b, g, l).unwrap(), brute);
        }
    }

    #[test]
    fn argmin_lipschitz_examples() {
        assert_eq!(lipschitz_of_argmin(&DMatrix::<f64>::identity(3, 3)).unwrap(), 1.0);
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0]));
        assert!((lipschitz_of_argmin::<f64>(&h).unwrap() - 0.5).abs() < 1e-14);
        assert!(lipschitz_of_argmin(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).is_err());
    }

    #[test]
    fn projected_gradient_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_agent(&mut rng, 6);
            let s = CertState::for_agent(&a).unwrap();
            let lambda = DVector::from_fn(6, |_, _| rng.random_range(-2.0..2.0));
            let star = a.solve_exact(&lambda, None).unwrap();
            let warm = a.project(&DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)));
            let d0 = (&warm - &star).norm();
            let mut z = warm.clone();
            for j in 1..=30 {
                z = local_pg(&a, &lambda, &z, 1, s.tau).unwrap();
                let bound = (1.0 - s.gamma).powi(j) * d0;
                assert!((&z - &star).norm() <= bound + 1e-13);
            }
        }
    }

    #[test]
    fn warm_optimum_needs_no_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_agent(&mut rng, 5);
        let lambda = DVector::from_element(5, 0.3);
        let star = a.solve_exact(&lambda, None).unwrap();
        let tau = 0.99 / a.lipschitz();
        assert_eq!(exact_min_iterations(&a, &lambda, &star, 1e-9, tau, Some(&star)).unwrap(), 0);
    }

    #[test]
    fn decrease_function_values() {
        let d = DecreaseFunction::new(2.0, DecreaseRate::Power { p: 1.0 }).unwrap();
        assert_eq!(d.value(0), 2.0);
        assert_eq!(d.value(1), 2.0);
        assert_eq!(d.value(4), 0.5);
        let g = DecreaseFunction::new(1.0, DecreaseRate::Geometric { r: 0.5 }).unwrap();
        assert_eq!(g.value(3), 0.125);
        assert!(DecreaseFunction::new(0.0, DecreaseRate::Power { p: 1.0 }).is_err());
        assert!(DecreaseFunction::new(1.0, DecreaseRate::Geometric { r: 1.5 }).is_err());
    }
}
