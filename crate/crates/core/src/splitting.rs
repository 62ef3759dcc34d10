//! Two-block split problems `min f(x) + g(z)  s.t.  Ax + Bz = c`, proximal
//! operators and the dual objectives `φ(λ) = f⋆(Aᵀλ)`, `ψ(λ) = g⋆(Bᵀλ) − cᵀλ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, is_symmetric, random_direction, sym_eig_extremes, LinOp};
use crate::qp::{solve_affine_qp, solve_projected_qp, BoxQp, QpOptions};
use crate::scalar::{real, to_f64, Real};

/// A value of the extended real line. Unbounded infima are `NegInf`, never NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Extended<T> {
    Finite(T),
    PosInf,
    NegInf,
}

impl<T: Real> Extended<T> {
    pub fn finite(self) -> Option<T> {
        match self {
            Extended::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    pub fn neg(self) -> Self {
        match self {
            Extended::Finite(v) => Extended::Finite(-v),
            Extended::PosInf => Extended::NegInf,
            Extended::NegInf => Extended::PosInf,
        }
    }

    /// Adds a finite offset.
    pub fn shift(self, by: T) -> Self {
        match self {
            Extended::Finite(v) => Extended::Finite(v + by),
            other => other,
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Extended::Finite(v) => to_f64(v),
            Extended::PosInf => f64::INFINITY,
            Extended::NegInf => f64::NEG_INFINITY,
        }
    }
}

/// `½zᵀHz + hᵀz + constant` with `H ≻ 0`.
#[derive(Clone)]
pub struct QuadraticFn<T: Real> {
    h_mat: DMatrix<T>,
    lin: DVector<T>,
    constant: T,
    lmin: T,
    lmax: T,
    chol: Cholesky<T, Dyn>,
}

impl<T: Real> fmt::Debug for QuadraticFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuadraticFn")
            .field("dim", &self.dim())
            .field("lmin", &self.lmin)
            .field("lmax", &self.lmax)
            .finish()
    }
}

impl<T: Real> QuadraticFn<T> {
    pub fn new(h: DMatrix<T>, lin: DVector<T>) -> Result<Self> {
        if h.nrows() != h.ncols() || h.nrows() != lin.len() {
            return Err(Error::Dimension(format!(
                "quadratic with H {}x{} and h {}",
                h.nrows(),
                h.ncols(),
                lin.len()
            )));
        }
        if !is_symmetric(&h, T::eps().sqrt()) {
            return Err(Error::NotPositiveDefinite("Hessian is not symmetric".into()));
        }
        let h = (&h + h.transpose()) * real::<T>(0.5);
        let (lmin, lmax) = sym_eig_extremes(&h);
        if lmin <= T::zero() {
            return Err(Error::NotStronglyConvex(to_f64(lmin)));
        }
        let chol = h
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
        Ok(QuadraticFn { h_mat: h, lin, constant: T::zero(), lmin, lmax, chol })
    }

    pub fn with_constant(mut self, constant: T) -> Self {
        self.constant = constant;
        self
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn hessian(&self) -> &DMatrix<T> {
        &self.h_mat
    }

    pub fn linear(&self) -> &DVector<T> {
        &self.lin
    }

    pub fn constant(&self) -> T {
        self.constant
    }

    /// Convexity modulus `λ_min(H)`.
    pub fn sigma(&self) -> T {
        self.lmin
    }

    /// Gradient Lipschitz constant `λ_max(H)`.
    pub fn lipschitz(&self) -> T {
        self.lmax
    }

    pub fn eval(&self, z: &DVector<T>) -> T {
        (z.dot(&(&self.h_mat * z)) * real(0.5)) + self.lin.dot(z) + self.constant
    }

    pub fn grad(&self, z: &DVector<T>) -> DVector<T> {
        &self.h_mat * z + &self.lin
    }

    /// Unconstrained minimizer of `q(z) − sᵀz`.
    pub fn argmin_shifted(&self, s: &DVector<T>) -> DVector<T> {
        self.chol.solve(&(s - &self.lin))
    }

    pub fn solve_hessian(&self, r: &DVector<T>) -> DVector<T> {
        self.chol.solve(r)
    }
}

pub type ProjectFn<T> = Arc<dyn Fn(&DVector<T>) -> DVector<T> + Send + Sync>;

/// Closed convex set with an exact Euclidean projection.
#[derive(Clone)]
pub enum ConvexSet<T: Real> {
    Free(usize),
    Box { lower: DVector<T>, upper: DVector<T> },
    /// `{z : Gz = d}`; `g_pinv = Gᵀ(GGᵀ)⁻¹` is cached.
    Affine { g: DMatrix<T>, d: DVector<T>, g_pinv: DMatrix<T> },
    /// User projection oracle, e.g. for intersections.
    Custom { dim: usize, project: ProjectFn<T> },
}

impl<T: Real> fmt::Debug for ConvexSet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvexSet::Free(n) => write!(f, "Free({n})"),
            ConvexSet::Box { lower, upper } => {
                f.debug_struct("Box").field("lower", &lower.as_slice()).field("upper", &upper.as_slice()).finish()
            }
            ConvexSet::Affine { g, .. } => write!(f, "Affine({}x{})", g.nrows(), g.ncols()),
            ConvexSet::Custom { dim, .. } => write!(f, "Custom({dim})"),
        }
    }
}

impl<T: Real> ConvexSet<T> {
    pub fn boxed(lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension("box bounds differ in length".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::InvalidParameter("box lower bound exceeds upper bound".into()));
        }
        Ok(ConvexSet::Box { lower, upper })
    }

    pub fn uniform_box(dim: usize, lo: T, hi: T) -> Result<Self> {
        Self::boxed(DVector::from_element(dim, lo), DVector::from_element(dim, hi))
    }

    pub fn affine(g: DMatrix<T>, d: DVector<T>) -> Result<Self> {
        if g.nrows() != d.len() {
            return Err(Error::Dimension("affine set: rows of G differ from length of d".into()));
        }
        let ggt = &g * g.transpose();
        let chol = ggt.cholesky().ok_or(Error::RankDeficient)?;
        let g_pinv = g.transpose() * chol.inverse();
        Ok(ConvexSet::Affine { g, d, g_pinv })
    }

    pub fn custom(dim: usize, project: ProjectFn<T>) -> Self {
        ConvexSet::Custom { dim, project }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Free(n) => *n,
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::Affine { g, .. } => g.ncols(),
            ConvexSet::Custom { dim, .. } => *dim,
        }
    }

    pub fn project(&self, v: &DVector<T>) -> DVector<T> {
        match self {
            ConvexSet::Free(_) => v.clone(),
            ConvexSet::Box { lower, upper } => {
                DVector::from_fn(v.len(), |i, _| v[i].max(lower[i]).min(upper[i]))
            }
            ConvexSet::Affine { g, d, g_pinv } => v - g_pinv * (g * v - d),
            ConvexSet::Custom { project, .. } => project(v),
        }
    }

    /// Size of the constraint violation at `v` (0 inside the set).
    pub fn violation(&self, v: &DVector<T>) -> T {
        match self {
            ConvexSet::Free(_) => T::zero(),
            ConvexSet::Box { lower, upper } => (0..v.len()).fold(T::zero(), |a, i| {
                a.max(lower[i] - v[i]).max(v[i] - upper[i])
            }),
            ConvexSet::Affine { g, d, .. } => inf_norm(&(g * v - d)),
            ConvexSet::Custom { project, .. } => inf_norm(&(v - project(v))),
        }
    }

    pub fn contains(&self, v: &DVector<T>, tol: T) -> bool {
        self.violation(v) <= tol
    }

    /// Restricts a direction so that small moves from `at` stay in the set
    /// before re-projection: components at an active box bound are zeroed,
    /// affine directions are projected onto the null space of `G`.
    pub fn tangent(&self, at: &DVector<T>, dir: DVector<T>) -> DVector<T> {
        match self {
            ConvexSet::Box { lower, upper } => {
                let tol = T::eps().sqrt() * real(1e-2);
                DVector::from_fn(dir.len(), |i, _| {
                    if at[i] <= lower[i] + tol || at[i] >= upper[i] - tol {
                        T::zero()
                    } else {
                        dir[i]
                    }
                })
            }
            ConvexSet::Affine { g, g_pinv, .. } => &dir - g_pinv * (g * &dir),
            _ => dir,
        }
    }
}

pub type ValueFn<T> = Arc<dyn Fn(&DVector<T>) -> Extended<T> + Send + Sync>;
pub type ProxOracle<T> = Arc<dyn Fn(&DVector<T>, T) -> DVector<T> + Send + Sync>;

/// Convex, possibly nonsmooth objective with a proximal oracle.
#[derive(Clone)]
pub enum ProxFn<T: Real> {
    Zero(usize),
    Indicator(ConvexSet<T>),
    L1 { dim: usize, weight: T },
    Quadratic(QuadraticFn<T>),
    Custom { dim: usize, value: ValueFn<T>, prox: Option<ProxOracle<T>> },
}

impl<T: Real> fmt::Debug for ProxFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProxFn::Zero(n) => write!(f, "Zero({n})"),
            ProxFn::Indicator(s) => write!(f, "Indicator({s:?})"),
            ProxFn::L1 { dim, weight } => write!(f, "L1({dim}, {weight})"),
            ProxFn::Quadratic(q) => write!(f, "{q:?}"),
            ProxFn::Custom { dim, prox, .. } => write!(f, "Custom({dim}, prox: {})", prox.is_some()),
        }
    }
}

/// Result of an inexact proximal step: `point` is within `epsilon` of the prox objective minimum.
#[derive(Clone, Debug)]
pub struct InexactProxResult<T: Real> {
    pub point: DVector<T>,
    pub epsilon: T,
}

fn membership_tol<T: Real>() -> T {
    T::eps().sqrt() * real(1e-2)
}

impl<T: Real> ProxFn<T> {
    pub fn dim(&self) -> usize {
        match self {
            ProxFn::Zero(n) => *n,
            ProxFn::Indicator(s) => s.dim(),
            ProxFn::L1 { dim, .. } => *dim,
            ProxFn::Quadratic(q) => q.dim(),
            ProxFn::Custom { dim, .. } => *dim,
        }
    }

    pub fn as_set(&self) -> Option<&ConvexSet<T>> {
        match self {
            ProxFn::Indicator(s) => Some(s),
            _ => None,
        }
    }

    pub fn eval(&self, w: &DVector<T>) -> Extended<T> {
        match self {
            ProxFn::Zero(_) => Extended::Finite(T::zero()),
            ProxFn::Indicator(s) => {
                if s.contains(w, membership_tol()) {
                    Extended::Finite(T::zero())
                } else {
                    Extended::PosInf
                }
            }
            ProxFn::L1 { weight, .. } => Extended::Finite(*weight * w.lp_norm(1)),
            ProxFn::Quadratic(q) => Extended::Finite(q.eval(w)),
            ProxFn::Custom { value, .. } => value(w),
        }
    }

    /// `argmin_w τ·g(w) + ½‖w − v‖²`.
    pub fn prox_at(&self, v: &DVector<T>, tau: T) -> Result<DVector<T>> {
        if tau <= T::zero() {
            return Err(Error::InvalidParameter(format!("prox step must be positive, got {tau}")));
        }
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!("prox point {} vs {}", v.len(), self.dim())));
        }
        Ok(match self {
            ProxFn::Zero(_) => v.clone(),
            ProxFn::Indicator(s) => s.project(v),
            ProxFn::L1 { weight, .. } => {
                let t = *weight * tau;
                v.map(|x| x.signum() * (x.abs() - t).max(T::zero()))
            }
            ProxFn::Quadratic(q) => {
                let n = q.dim();
                let m = q.hessian() * tau + DMatrix::identity(n, n);
                let chol = m.cholesky().ok_or_else(|| Error::NotPositiveDefinite("prox system".into()))?;
                chol.solve(&(v - q.linear() * tau))
            }
            ProxFn::Custom { prox: Some(p), .. } => p(v, tau),
            ProxFn::Custom { prox: None, .. } => {
                return Err(Error::UnsupportedObjective("custom objective without a prox oracle".into()))
            }
        })
    }

    /// `inf_z g(z) − qᵀz`, i.e. `−g⋆(q)`.
    pub fn inf_linear(&self, q: &DVector<T>, tol: T) -> Result<Extended<T>> {
        let scale = T::one() + inf_norm(q);
        let small = |x: T| x.abs() <= tol * scale;
        Ok(match self {
            ProxFn::Zero(_) | ProxFn::Indicator(ConvexSet::Free(_)) => {
                if q.iter().all(|&x| small(x)) {
                    Extended::Finite(T::zero())
                } else {
                    Extended::NegInf
                }
            }
            ProxFn::Indicator(ConvexSet::Box { lower, upper }) => {
                let mut total = T::zero();
                for i in 0..q.len() {
                    if small(q[i]) {
                        continue;
                    }
                    let bound = if q[i] > T::zero() { upper[i] } else { lower[i] };
                    if !bound.is_finite() {
                        return Ok(Extended::NegInf);
                    }
                    total -= q[i] * bound;
                }
                Extended::Finite(total)
            }
            ProxFn::Indicator(ConvexSet::Affine { g, d, g_pinv }) => {
                let mu = g_pinv.tr_mul(q);
                let r = q - g.tr_mul(&mu);
                if r.iter().all(|&x| small(x)) {
                    Extended::Finite(-mu.dot(d))
                } else {
                    Extended::NegInf
                }
            }
            ProxFn::L1 { weight, .. } => {
                if inf_norm(q) <= *weight + tol * scale {
                    Extended::Finite(T::zero())
                } else {
                    Extended::NegInf
                }
            }
            ProxFn::Quadratic(qf) => {
                let r = q - qf.linear();
                Extended::Finite(qf.constant() - r.dot(&qf.solve_hessian(&r)) * real(0.5))
            }
            ProxFn::Indicator(ConvexSet::Custom { .. }) | ProxFn::Custom { .. } => {
                return Err(Error::UnsupportedObjective("conjugate of a custom objective".into()))
            }
        })
    }
}

/// Smooth convex objective with a Lipschitz gradient.
pub trait Smooth<T: Real> {
    fn dim(&self) -> usize;
    fn value(&self, w: &DVector<T>) -> Result<T>;
    fn gradient(&self, w: &DVector<T>) -> Result<DVector<T>>;
    fn lipschitz(&self) -> T;
    /// Strong convexity modulus, 0 when unknown.
    fn modulus(&self) -> T;
}

/// Objective accessed through its proximal operator.
pub trait Proximable<T: Real> {
    fn dim(&self) -> usize;
    fn value(&self, w: &DVector<T>) -> Result<Extended<T>>;
    fn prox(&self, v: &DVector<T>, tau: T) -> Result<DVector<T>>;
    /// Direction filter applied before a feasibility-preserving perturbation.
    fn tangent(&self, _at: &DVector<T>, dir: DVector<T>) -> DVector<T> {
        dir
    }
    /// Maps a perturbed point back into the domain.
    fn restore(&self, w: DVector<T>) -> DVector<T> {
        w
    }
}

impl<T: Real> Smooth<T> for QuadraticFn<T> {
    fn dim(&self) -> usize {
        QuadraticFn::dim(self)
    }
    fn value(&self, w: &DVector<T>) -> Result<T> {
        Ok(self.eval(w))
    }
    fn gradient(&self, w: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.grad(w))
    }
    fn lipschitz(&self) -> T {
        self.lmax
    }
    fn modulus(&self) -> T {
        self.lmin
    }
}

impl<T: Real> Proximable<T> for ProxFn<T> {
    fn dim(&self) -> usize {
        ProxFn::dim(self)
    }
    fn value(&self, w: &DVector<T>) -> Result<Extended<T>> {
        Ok(self.eval(w))
    }
    fn prox(&self, v: &DVector<T>, tau: T) -> Result<DVector<T>> {
        self.prox_at(v, tau)
    }
    fn tangent(&self, at: &DVector<T>, dir: DVector<T>) -> DVector<T> {
        match self {
            ProxFn::Indicator(s) => s.tangent(at, dir),
            _ => dir,
        }
    }
    fn restore(&self, w: DVector<T>) -> DVector<T> {
        match self {
            ProxFn::Indicator(s) => s.project(&w),
            _ => w,
        }
    }
}

/// Exact proximal operator.
pub fn prox<T: Real, G: Proximable<T> + ?Sized>(g: &G, v: &DVector<T>, tau: T) -> Result<DVector<T>> {
    g.prox(v, tau)
}

fn prox_objective<T: Real, G: Proximable<T> + ?Sized>(
    g: &G,
    w: &DVector<T>,
    v: &DVector<T>,
    tau: T,
) -> Result<Extended<T>> {
    Ok(match g.value(w)? {
        Extended::Finite(x) => Extended::Finite(tau * x + (w - v).norm_squared() * real(0.5)),
        other => other,
    })
}

/// Synthetic ε-inexact prox: the exact prox is moved along a random direction of
/// norm `√(2ε)`, optionally kept feasible, and the step is shrunk by bisection
/// until the measured objective gap is at most `epsilon`. The gap actually
/// achieved is returned.
pub fn prox_inexact<T: Real, G: Proximable<T> + ?Sized, R: Rng + ?Sized>(
    g: &G,
    v: &DVector<T>,
    tau: T,
    epsilon: T,
    feasible_only: bool,
    rng: &mut R,
) -> Result<InexactProxResult<T>> {
    if epsilon < T::zero() {
        return Err(Error::InvalidParameter("prox error must be nonnegative".into()));
    }
    let exact = g.prox(v, tau)?;
    if epsilon == T::zero() {
        return Ok(InexactProxResult { point: exact, epsilon: T::zero() });
    }
    let base = match prox_objective(g, &exact, v, tau)? {
        Extended::Finite(b) => b,
        _ => return Ok(InexactProxResult { point: exact, epsilon: T::zero() }),
    };
    let radius = (epsilon * real(2.0)).sqrt();
    let mut dir = random_direction(rng, exact.len(), radius);
    if feasible_only {
        dir = g.tangent(&exact, dir);
        let n = dir.norm();
        if n <= T::zero() {
            return Ok(InexactProxResult { point: exact, epsilon: T::zero() });
        }
        dir *= radius / n;
    }
    let trial = |s: T| -> Result<(DVector<T>, Option<T>)> {
        let mut w = &exact + &dir * s;
        if feasible_only {
            w = g.restore(w);
        }
        let gap = prox_objective(g, &w, v, tau)?.finite().map(|o| (o - base).max(T::zero()));
        Ok((w, gap))
    };
    let (w, gap) = trial(T::one())?;
    if let Some(gp) = gap {
        if gp <= epsilon {
            return Ok(InexactProxResult { point: w, epsilon: gp });
        }
    }
    let (mut lo, mut hi) = (T::zero(), T::one());
    let mut best = (exact.clone(), T::zero());
    for _ in 0..40 {
        let mid = (lo + hi) * real(0.5);
        let (w, gap) = trial(mid)?;
        match gap {
            Some(gp) if gp <= epsilon => {
                best = (w, gp);
                lo = mid;
            }
            _ => hi = mid,
        }
    }
    Ok(InexactProxResult { point: best.0, epsilon: best.1 })
}

#[derive(Clone, Debug)]
enum BlockSolver<T: Real> {
    Free,
    Box(BoxQp<T>),
    Affine,
    Custom,
}

/// One block of the primal objective: a strongly convex quadratic restricted to a set.
#[derive(Clone, Debug)]
pub struct PrimalBlock<T: Real> {
    pub quad: QuadraticFn<T>,
    pub set: ConvexSet<T>,
    solver: BlockSolver<T>,
}

impl<T: Real> PrimalBlock<T> {
    pub fn new(quad: QuadraticFn<T>, set: ConvexSet<T>) -> Result<Self> {
        if set.dim() != quad.dim() {
            return Err(Error::Dimension(format!("block set {} vs quadratic {}", set.dim(), quad.dim())));
        }
        let solver = match &set {
            ConvexSet::Free(_) => BlockSolver::Free,
            ConvexSet::Box { lower, upper } => {
                BlockSolver::Box(BoxQp::new(quad.hessian().clone(), lower.clone(), upper.clone())?)
            }
            ConvexSet::Affine { .. } => BlockSolver::Affine,
            ConvexSet::Custom { .. } => BlockSolver::Custom,
        };
        Ok(PrimalBlock { quad, set, solver })
    }

    pub fn unconstrained(quad: QuadraticFn<T>) -> Self {
        let n = quad.dim();
        PrimalBlock { quad, set: ConvexSet::Free(n), solver: BlockSolver::Free }
    }

    pub fn dim(&self) -> usize {
        self.quad.dim()
    }

    pub fn is_unconstrained(&self) -> bool {
        matches!(self.set, ConvexSet::Free(_))
    }

    /// `argmin_{z ∈ C} q(z) − sᵀz`.
    pub fn argmin_shifted(&self, s: &DVector<T>, warm: Option<&DVector<T>>) -> Result<DVector<T>> {
        let q = self.quad.linear() - s;
        match (&self.solver, &self.set) {
            (BlockSolver::Free, _) => Ok(self.quad.argmin_shifted(s)),
            (BlockSolver::Box(qp), _) => qp.solve(&q, warm),
            (BlockSolver::Affine, ConvexSet::Affine { g, d, .. }) => solve_affine_qp(self.quad.hessian(), &q, g, d),
            (_, set) => {
                let set = set.clone();
                solve_projected_qp(self.quad.hessian(), &q, move |v| set.project(v), warm, &QpOptions::default())
            }
        }
    }

    /// Natural residual of `argmin_shifted` at `z`, used to certify inner accuracy.
    pub fn residual(&self, z: &DVector<T>, s: &DVector<T>) -> T {
        let g = self.quad.grad(z) - s;
        inf_norm(&(z - self.set.project(&(z - g))))
    }
}

/// `min f(x) + g(z)` subject to `Ax + Bz = c`, with `f` a sum of constrained quadratic blocks.
#[derive(Clone, Debug)]
pub struct SplitProblem<T: Real> {
    f: Vec<PrimalBlock<T>>,
    offsets: Vec<usize>,
    g: ProxFn<T>,
    a: LinOp<T>,
    b: LinOp<T>,
    c: DVector<T>,
    sigma_f: T,
}

impl<T: Real> SplitProblem<T> {
    pub fn new(f: Vec<PrimalBlock<T>>, g: ProxFn<T>, a: LinOp<T>, b: LinOp<T>, c: DVector<T>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(f.len() + 1);
        offsets.push(0);
        for blk in &f {
            offsets.push(offsets.last().unwrap() + blk.dim());
        }
        let nx = *offsets.last().unwrap();
        if a.ncols() != nx {
            return Err(Error::Dimension(format!("A has {} columns, f has dimension {nx}", a.ncols())));
        }
        if b.ncols() != g.dim() {
            return Err(Error::Dimension(format!("B has {} columns, g has dimension {}", b.ncols(), g.dim())));
        }
        if a.nrows() != c.len() || b.nrows() != c.len() {
            return Err(Error::Dimension(format!(
                "A has {} rows, B has {} rows, c has length {}",
                a.nrows(),
                b.nrows(),
                c.len()
            )));
        }
        let sigma_f = f.iter().map(|b| b.quad.sigma()).fold(T::max_value().unwrap_or(T::one()), |a, b| a.min(b));
        if f.is_empty() || sigma_f <= T::zero() {
            return Err(Error::NotStronglyConvex(to_f64(sigma_f)));
        }
        Ok(SplitProblem { f, offsets, g, a, b, c, sigma_f })
    }

    pub fn blocks(&self) -> &[PrimalBlock<T>] {
        &self.f
    }
    pub fn block_offsets(&self) -> &[usize] {
        &self.offsets
    }
    pub fn g(&self) -> &ProxFn<T> {
        &self.g
    }
    pub fn a(&self) -> &LinOp<T> {
        &self.a
    }
    pub fn b(&self) -> &LinOp<T> {
        &self.b
    }
    pub fn c(&self) -> &DVector<T> {
        &self.c
    }
    pub fn sigma_f(&self) -> T {
        self.sigma_f
    }
    pub fn nx(&self) -> usize {
        *self.offsets.last().unwrap()
    }
    pub fn nz(&self) -> usize {
        self.g.dim()
    }
    pub fn nc(&self) -> usize {
        self.c.len()
    }

    /// True when every block of `f` is an unconstrained quadratic.
    pub fn is_quadratic(&self) -> bool {
        self.f.iter().all(|b| b.is_unconstrained())
    }

    /// Step-size limit `σ_f / ρ(A)`.
    pub fn step_limit(&self) -> T {
        self.sigma_f / self.a.rho()
    }

    /// Generic dual smoothness constant `σ_f⁻¹ ρ(A)`.
    pub fn generic_dual_lipschitz(&self) -> T {
        self.a.rho() / self.sigma_f
    }

    pub fn block(&self, x: &DVector<T>, i: usize) -> DVector<T> {
        x.rows(self.offsets[i], self.offsets[i + 1] - self.offsets[i]).into_owned()
    }

    pub fn f_value(&self, x: &DVector<T>) -> Extended<T> {
        let mut total = T::zero();
        for (i, blk) in self.f.iter().enumerate() {
            let xi = self.block(x, i);
            if !blk.set.contains(&xi, membership_tol()) {
                return Extended::PosInf;
            }
            total += blk.quad.eval(&xi);
        }
        Extended::Finite(total)
    }

    /// Whether every block of `x` lies in its set.
    pub fn x_feasible(&self, x: &DVector<T>, tol: T) -> bool {
        self.f.iter().enumerate().all(|(i, b)| b.set.contains(&self.block(x, i), tol))
    }

    /// `x⋆(λ) = argmin_x f(x) − ⟨λ, Ax⟩`.
    pub fn x_step(&self, lambda: &DVector<T>, warm: Option<&DVector<T>>) -> Result<DVector<T>> {
        let s = self.a.apply_t(lambda);
        let mut x = DVector::zeros(self.nx());
        for (i, blk) in self.f.iter().enumerate() {
            let si = self.block(&s, i);
            let wi = warm.map(|w| self.block(w, i));
            let xi = blk.argmin_shifted(&si, wi.as_ref())?;
            x.rows_mut(self.offsets[i], blk.dim()).copy_from(&xi);
        }
        Ok(x)
    }

    /// Projects each block of `x` onto its set.
    pub fn project_x(&self, x: &DVector<T>) -> DVector<T> {
        let mut out = x.clone();
        for (i, blk) in self.f.iter().enumerate() {
            let xi = blk.set.project(&self.block(x, i));
            out.rows_mut(self.offsets[i], blk.dim()).copy_from(&xi);
        }
        out
    }

    /// Zeroes direction components that would leave the block sets.
    pub fn tangent_x(&self, at: &DVector<T>, dir: DVector<T>) -> DVector<T> {
        let mut out = dir.clone();
        for (i, blk) in self.f.iter().enumerate() {
            let di = blk.set.tangent(&self.block(at, i), self.block(&dir, i));
            out.rows_mut(self.offsets[i], blk.dim()).copy_from(&di);
        }
        out
    }

    /// Dense block-diagonal Hessian of `f`.
    pub fn dense_hessian(&self) -> DMatrix<T> {
        let hs: Vec<&DMatrix<T>> = self.f.iter().map(|b| b.quad.hessian()).collect();
        crate::linalg::block_diag(&hs)
    }

    /// Extreme eigenvalues of `AH⁻¹Aᵀ`.
    pub fn dual_hessian_extremes(&self) -> (T, T) {
        if let LinOp::Identity(_) = self.a {
            let lo = self.f.iter().map(|b| T::one() / b.quad.lipschitz()).fold(T::max_value().unwrap(), |a, b| a.min(b));
            let hi = self.f.iter().map(|b| T::one() / b.quad.sigma()).fold(T::zero(), |a, b| a.max(b));
            return (lo, hi);
        }
        let ad = self.a.to_dense();
        let mut hinv_at = DMatrix::zeros(self.nx(), self.nc());
        for (i, blk) in self.f.iter().enumerate() {
            let rows = ad.columns(self.offsets[i], blk.dim()).transpose();
            let sol = blk.quad.solve_hessian_mat(&rows);
            hinv_at.rows_mut(self.offsets[i], blk.dim()).copy_from(&sol);
        }
        let m = &ad * hinv_at;
        let m = (&m + m.transpose()) * real::<T>(0.5);
        sym_eig_extremes(&m)
    }

    /// Dual smoothness constant: `λ_max(AH⁻¹Aᵀ)` for unconstrained quadratic `f`, else `σ_f⁻¹ρ(A)`.
    pub fn dual_lipschitz(&self) -> T {
        if self.is_quadratic() {
            self.dual_hessian_extremes().1
        } else {
            self.generic_dual_lipschitz()
        }
    }

    /// Dual strong convexity `λ_min(AH⁻¹Aᵀ)` when it is known to be positive.
    pub fn dual_modulus(&self) -> T {
        if self.is_quadratic() && self.a.has_full_row_rank() {
            self.dual_hessian_extremes().0.max(T::zero())
        } else {
            T::zero()
        }
    }

    /// Prepares the solver for `argmin_z g(z) + τ/2‖Bz‖² − qᵀz`.
    pub fn z_solver(&self, tau: T) -> Result<ZSolver<T>> {
        ZSolver::new(&self.g, &self.b, tau)
    }
}

impl<T: Real> QuadraticFn<T> {
    fn solve_hessian_mat(&self, r: &DMatrix<T>) -> DMatrix<T> {
        self.chol.solve(r)
    }
}

#[derive(Clone, Debug)]
enum ZKind<T: Real> {
    /// `BᵀB` diagonal and `g` separable.
    Separable { d: DVector<T> },
    Quadratic { chol: Cholesky<T, Dyn> },
    LeastSquares { pinv: DMatrix<T> },
    Box { qp: BoxQp<T> },
    Affine { h: DMatrix<T> },
    ScaledProx { d: T },
}

/// Solver for the augmented subproblem `argmin_z g(z) + τ/2‖Bz‖² − qᵀz`.
#[derive(Clone, Debug)]
pub struct ZSolver<T: Real> {
    g: ProxFn<T>,
    tau: T,
    kind: ZKind<T>,
}

fn unbounded() -> Error {
    Error::InvalidParameter("augmented subproblem is unbounded below".into())
}

impl<T: Real> ZSolver<T> {
    pub fn new(g: &ProxFn<T>, b: &LinOp<T>, tau: T) -> Result<Self> {
        if tau <= T::zero() {
            return Err(Error::InvalidParameter("step must be positive".into()));
        }
        let separable = matches!(
            g,
            ProxFn::Zero(_) | ProxFn::L1 { .. } | ProxFn::Indicator(ConvexSet::Box { .. }) | ProxFn::Indicator(ConvexSet::Free(_))
        );
        let diag = b.gram_diagonal();
        let kind = match (g, diag) {
            (_, Some(d)) if separable => ZKind::Separable { d: d * tau },
            (ProxFn::Quadratic(q), _) => {
                let m = q.hessian() + b.to_dense().tr_mul(&b.to_dense()) * tau;
                ZKind::Quadratic {
                    chol: m.cholesky().ok_or_else(|| Error::NotPositiveDefinite("augmented quadratic".into()))?,
                }
            }
            (ProxFn::Zero(_) | ProxFn::Indicator(ConvexSet::Free(_)), None) => {
                let bd = b.to_dense();
                let m = bd.tr_mul(&bd) * tau;
                let pinv = m
                    .pseudo_inverse(T::eps().sqrt() * real(1e-4))
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
                ZKind::LeastSquares { pinv }
            }
            (ProxFn::Indicator(ConvexSet::Box { lower, upper }), None) => {
                let bd = b.to_dense();
                ZKind::Box { qp: BoxQp::new(bd.tr_mul(&bd) * tau, lower.clone(), upper.clone())? }
            }
            (ProxFn::Indicator(ConvexSet::Affine { .. }), _) => {
                let bd = b.to_dense();
                ZKind::Affine { h: bd.tr_mul(&bd) * tau }
            }
            (_, Some(d)) if d.len() > 0 && d.iter().all(|&x| (x - d[0]).abs() <= T::eps() * real(16.0) * d[0]) && d[0] > T::zero() => {
                ZKind::ScaledProx { d: d[0] * tau }
            }
            _ => {
                return Err(Error::UnsupportedObjective(
                    "augmented subproblem needs diagonal BᵀB or a quadratic/indicator g".into(),
                ))
            }
        };
        Ok(ZSolver { g: g.clone(), tau, kind })
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn solve(&self, q: &DVector<T>) -> Result<DVector<T>> {
        let tol = T::eps().sqrt() * (T::one() + inf_norm(q));
        match &self.kind {
            ZKind::Separable { d } => {
                let mut z = DVector::zeros(q.len());
                for j in 0..q.len() {
                    let dj = d[j];
                    z[j] = match &self.g {
                        ProxFn::Zero(_) | ProxFn::Indicator(ConvexSet::Free(_)) => {
                            if dj > T::zero() {
                                q[j] / dj
                            } else if q[j].abs() <= tol {
                                T::zero()
                            } else {
                                return Err(unbounded());
                            }
                        }
                        ProxFn::Indicator(ConvexSet::Box { lower, upper }) => {
                            let (l, u) = (lower[j], upper[j]);
                            if dj > T::zero() {
                                (q[j] / dj).max(l).min(u)
                            } else if q[j] > tol {
                                if u.is_finite() { u } else { return Err(unbounded()) }
                            } else if q[j] < -tol {
                                if l.is_finite() { l } else { return Err(unbounded()) }
                            } else {
                                T::zero().max(l).min(u)
                            }
                        }
                        ProxFn::L1 { weight, .. } => {
                            let s = q[j].signum() * (q[j].abs() - *weight).max(T::zero());
                            if dj > T::zero() {
                                s / dj
                            } else if s.abs() <= tol {
                                T::zero()
                            } else {
                                return Err(unbounded());
                            }
                        }
                        _ => unreachable!("separable kinds only"),
                    };
                }
                Ok(z)
            }
            ZKind::Quadratic { chol } => match &self.g {
                ProxFn::Quadratic(qf) => Ok(chol.solve(&(q - qf.linear()))),
                _ => unreachable!("quadratic kind"),
            },
            ZKind::LeastSquares { pinv } => Ok(pinv * q),
            ZKind::Box { qp } => qp.solve(&(-q), None),
            ZKind::Affine { h } => match &self.g {
                ProxFn::Indicator(ConvexSet::Affine { g, d, .. }) => solve_affine_qp(h, &(-q), g, d),
                _ => unreachable!("affine kind"),
            },
            ZKind::ScaledProx { d } => self.g.prox_at(&(q / *d), T::one() / *d),
        }
    }
}

/// `φ(λ) = f⋆(Aᵀλ)`.
pub struct DualSmooth<'a, T: Real> {
    p: &'a SplitProblem<T>,
    lipschitz: T,
    modulus: T,
}

/// `ψ(λ) = g⋆(Bᵀλ) − cᵀλ`.
pub struct DualNonsmooth<'a, T: Real> {
    p: &'a SplitProblem<T>,
    tol: T,
}

/// Splits the dual of `p` into its smooth and nonsmooth parts.
pub fn dual_objectives<T: Real>(p: &SplitProblem<T>) -> Result<(DualSmooth<'_, T>, DualNonsmooth<'_, T>)> {
    if p.sigma_f() <= T::zero() {
        return Err(Error::NotStronglyConvex(to_f64(p.sigma_f())));
    }
    Ok((
        DualSmooth { p, lipschitz: p.dual_lipschitz(), modulus: p.dual_modulus() },
        DualNonsmooth { p, tol: real(1e-9) },
    ))
}

impl<T: Real> DualSmooth<'_, T> {
    pub fn x_star(&self, lambda: &DVector<T>) -> Result<DVector<T>> {
        self.p.x_step(lambda, None)
    }
}

impl<T: Real> Smooth<T> for DualSmooth<'_, T> {
    fn dim(&self) -> usize {
        self.p.nc()
    }
    fn value(&self, lambda: &DVector<T>) -> Result<T> {
        let x = self.x_star(lambda)?;
        let fx = self.p.f_value(&x).finite().ok_or_else(|| Error::InvalidParameter("x step left its set".into()))?;
        Ok(lambda.dot(&self.p.a.apply(&x)) - fx)
    }
    fn gradient(&self, lambda: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.p.a.apply(&self.x_star(lambda)?))
    }
    fn lipschitz(&self) -> T {
        self.lipschitz
    }
    fn modulus(&self) -> T {
        self.modulus
    }
}

impl<T: Real> DualNonsmooth<'_, T> {
    /// `z⋆` of the prox at `v`: `argmin_z g(z) − (v + τc)ᵀBz + τ/2‖Bz‖²`.
    pub fn z_star(&self, v: &DVector<T>, tau: T) -> Result<DVector<T>> {
        let zs = self.p.z_solver(tau)?;
        zs.solve(&self.p.b.apply_t(&(v + &self.p.c * tau)))
    }

    /// Finite Lipschitz constant of `ψ` on its domain when `g` is a bounded box indicator.
    pub fn lipschitz_bound(&self) -> Option<T> {
        match &self.p.g {
            ProxFn::Indicator(ConvexSet::Box { lower, upper }) => {
                let r = DVector::from_fn(lower.len(), |i, _| lower[i].abs().max(upper[i].abs()));
                if r.iter().all(|x| x.is_finite()) {
                    Some(self.p.b.spectral_norm() * r.norm() + self.p.c.norm())
                } else {
                    None
                }
            }
            ProxFn::Quadratic(_) => None,
            _ => None,
        }
    }
}

impl<T: Real> Proximable<T> for DualNonsmooth<'_, T> {
    fn dim(&self) -> usize {
        self.p.nc()
    }
    fn value(&self, lambda: &DVector<T>) -> Result<Extended<T>> {
        let inf = self.p.g.inf_linear(&self.p.b.apply_t(lambda), self.tol)?;
        Ok(inf.neg().shift(-self.p.c.dot(lambda)))
    }
    fn prox(&self, v: &DVector<T>, tau: T) -> Result<DVector<T>> {
        let z = self.z_star(v, tau)?;
        Ok(v + (&self.p.c - self.p.b.apply(&z)) * tau)
    }
}

/// `D(λ) = inf_{x,z} f(x) + g(z) + λᵀ(c − Ax − Bz)`; `NegInf` when the `z` infimum is unbounded.
pub fn dual_value<T: Real>(p: &SplitProblem<T>, lambda: &DVector<T>, inner_tol: T) -> Result<Extended<T>> {
    let zpart = p.g.inf_linear(&p.b.apply_t(lambda), real::<T>(1e-9).max(inner_tol))?;
    let zpart = match zpart {
        Extended::Finite(v) => v,
        other => return Ok(other),
    };
    let s = p.a.apply_t(lambda);
    let x = p.x_step(lambda, None)?;
    for (i, blk) in p.blocks().iter().enumerate() {
        let res = blk.residual(&p.block(&x, i), &p.block(&s, i));
        let scale = T::one() + inf_norm(&p.block(&s, i)) + inf_norm(blk.quad.linear());
        if res > inner_tol * scale {
            return Err(Error::ToleranceNotReached { tol: to_f64(inner_tol), residual: to_f64(res) });
        }
    }
    let fx = p.f_value(&x).finite().ok_or_else(|| Error::InvalidParameter("x step left its set".into()))?;
    Ok(Extended::Finite(fx - s.dot(&x) + zpart + p.c().dot(lambda)))
}
