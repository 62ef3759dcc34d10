//! High-accuracy solvers for small convex quadratic programs.
//!
//! `BoxQp` runs FISTA with gradient restart and, once the predicted active set
//! settles, solves the reduced equality-constrained system exactly and checks
//! the sign conditions. The returned point always satisfies the scaled natural
//! residual test `‖z − P(z − ∇q(z))‖∞ ≤ tol·(1 + ‖q‖∞)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, sym_eig_extremes};
use crate::scalar::{real, to_f64, Real};

#[derive(Clone, Copy, Debug)]
pub struct QpOptions<T> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for QpOptions<T> {
    fn default() -> Self {
        QpOptions { tol: T::eps() * real(1e4), max_iter: 500_000 }
    }
}

/// `min ½zᵀHz + qᵀz` subject to `lower ≤ z ≤ upper`, with `H` fixed across solves.
#[derive(Clone, Debug)]
pub struct BoxQp<T: Real> {
    h: DMatrix<T>,
    lower: DVector<T>,
    upper: DVector<T>,
    lmax: T,
    opts: QpOptions<T>,
}

fn clamp<T: Real>(v: T, lo: T, hi: T) -> T {
    v.max(lo).min(hi)
}

impl<T: Real> BoxQp<T> {
    pub fn new(h: DMatrix<T>, lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        let n = h.nrows();
        if h.ncols() != n || lower.len() != n || upper.len() != n {
            return Err(Error::Dimension(format!(
                "box QP with H {}x{} and bounds {}/{}",
                h.nrows(),
                h.ncols(),
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::InvalidParameter("box lower bound exceeds upper bound".into()));
        }
        let (lmin, lmax) = sym_eig_extremes(&h);
        if lmin < -T::eps().sqrt() * lmax.abs().max(T::one()) {
            return Err(Error::NotPositiveDefinite(format!("box QP Hessian has eigenvalue {lmin}")));
        }
        let lmax = if lmax > T::zero() { lmax } else { T::one() };
        Ok(BoxQp { h, lower, upper, lmax, opts: QpOptions::default() })
    }

    pub fn with_options(mut self, opts: QpOptions<T>) -> Self {
        self.opts = opts;
        self
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn project(&self, z: &DVector<T>) -> DVector<T> {
        let mut out = z.clone();
        for i in 0..out.len() {
            out[i] = clamp(out[i], self.lower[i], self.upper[i]);
        }
        out
    }

    /// Natural residual `‖z − P(z − (Hz + q))‖∞`.
    pub fn residual(&self, z: &DVector<T>, q: &DVector<T>) -> T {
        let g = &self.h * z + q;
        let mut r = T::zero();
        for i in 0..z.len() {
            let p = clamp(z[i] - g[i], self.lower[i], self.upper[i]);
            r = r.max((z[i] - p).abs());
        }
        r
    }

    fn threshold(&self, q: &DVector<T>) -> T {
        self.opts.tol * (T::one() + inf_norm(q))
    }

    /// Active-set guess from one projected-gradient step: -1 lower, 1 upper, 0 free.
    fn active_set(&self, z: &DVector<T>, q: &DVector<T>) -> Vec<i8> {
        let g = &self.h * z + q;
        let step = T::one() / self.lmax;
        (0..z.len())
            .map(|i| {
                let t = z[i] - g[i] * step;
                if t <= self.lower[i] {
                    -1
                } else if t >= self.upper[i] {
                    1
                } else {
                    0
                }
            })
            .collect()
    }

    fn polish(&self, active: &[i8], q: &DVector<T>) -> Option<DVector<T>> {
        let n = self.dim();
        let free: Vec<usize> = (0..n).filter(|&i| active[i] == 0).collect();
        let mut z = DVector::zeros(n);
        for i in 0..n {
            match active[i] {
                -1 => z[i] = self.lower[i],
                1 => z[i] = self.upper[i],
                _ => {}
            }
        }
        if !free.is_empty() {
            let nf = free.len();
            let mut hff = DMatrix::zeros(nf, nf);
            let mut rhs = DVector::zeros(nf);
            for (a, &i) in free.iter().enumerate() {
                let mut s = -q[i];
                for j in 0..n {
                    if active[j] != 0 {
                        s -= self.h[(i, j)] * z[j];
                    }
                }
                rhs[a] = s;
                for (b, &j) in free.iter().enumerate() {
                    hff[(a, b)] = self.h[(i, j)];
                }
            }
            let sol = hff.cholesky()?.solve(&rhs);
            let slack = self.threshold(q);
            for (a, &i) in free.iter().enumerate() {
                if sol[a] < self.lower[i] - slack || sol[a] > self.upper[i] + slack {
                    return None;
                }
                z[i] = clamp(sol[a], self.lower[i], self.upper[i]);
            }
        }
        if self.residual(&z, q) <= self.threshold(q) {
            Some(z)
        } else {
            None
        }
    }

    pub fn solve(&self, q: &DVector<T>, warm: Option<&DVector<T>>) -> Result<DVector<T>> {
        let n = self.dim();
        if q.len() != n {
            return Err(Error::Dimension(format!("box QP linear term {} vs {}", q.len(), n)));
        }
        if n == 0 {
            return Ok(DVector::zeros(0));
        }
        let tol = self.threshold(q);
        let mut z = match warm {
            Some(w) if w.len() == n => self.project(w),
            _ => DVector::zeros(n),
        };
        z = self.project(&z);
        let mut last_try = self.active_set(&z, q);
        if let Some(p) = self.polish(&last_try, q) {
            return Ok(p);
        }
        let step = T::one() / self.lmax;
        let mut y = z.clone();
        let mut t = T::one();
        let mut stable = 0usize;
        let mut prev_set = last_try.clone();
        let mut res = T::infinity();
        for _ in 0..self.opts.max_iter {
            let g = &self.h * &y + q;
            let mut z_new = &y - g * step;
            for i in 0..n {
                z_new[i] = clamp(z_new[i], self.lower[i], self.upper[i]);
            }
            // restart when the momentum direction opposes the step
            if (&y - &z_new).dot(&(&z_new - &z)) > T::zero() {
                t = T::one();
                y = z_new.clone();
            } else {
                let t_new = (T::one() + (T::one() + real::<T>(4.0) * t * t).sqrt()) / real(2.0);
                y = &z_new + (&z_new - &z) * ((t - T::one()) / t_new);
                t = t_new;
            }
            z = z_new;
            res = self.residual(&z, q);
            if res <= tol {
                return Ok(z);
            }
            let set = self.active_set(&z, q);
            if set == prev_set {
                stable += 1;
            } else {
                stable = 0;
                prev_set = set;
            }
            if stable >= 5 && prev_set != last_try {
                last_try = prev_set.clone();
                if let Some(p) = self.polish(&last_try, q) {
                    return Ok(p);
                }
            }
        }
        Err(Error::ToleranceNotReached { tol: to_f64(tol), residual: to_f64(res) })
    }
}

/// `min ½zᵀHz + qᵀz` subject to `Gz = d`, solved through the KKT system.
pub fn solve_affine_qp<T: Real>(
    h: &DMatrix<T>,
    q: &DVector<T>,
    g: &DMatrix<T>,
    d: &DVector<T>,
) -> Result<DVector<T>> {
    let n = h.nrows();
    let m = g.nrows();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    kkt.view_mut((n, 0), (m, n)).copy_from(g);
    kkt.view_mut((0, n), (n, m)).copy_from(&g.transpose());
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-q));
    rhs.rows_mut(n, m).copy_from(d);
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NotPositiveDefinite("singular KKT system".into()))?;
    Ok(sol.rows(0, n).into_owned())
}

/// Projected FISTA for an arbitrary projection oracle; stops on the natural residual.
pub fn solve_projected_qp<T: Real, P: Fn(&DVector<T>) -> DVector<T>>(
    h: &DMatrix<T>,
    q: &DVector<T>,
    project: P,
    warm: Option<&DVector<T>>,
    opts: &QpOptions<T>,
) -> Result<DVector<T>> {
    let n = h.nrows();
    let (_, lmax) = sym_eig_extremes(h);
    let step = if lmax > T::zero() { T::one() / lmax } else { T::one() };
    let tol = opts.tol * (T::one() + inf_norm(q));
    let mut z = project(&warm.cloned().unwrap_or_else(|| DVector::zeros(n)));
    let mut y = z.clone();
    let mut t = T::one();
    let mut res = T::infinity();
    for _ in 0..opts.max_iter {
        let z_new = project(&(&y - (h * &y + q) * step));
        if (&y - &z_new).dot(&(&z_new - &z)) > T::zero() {
            t = T::one();
            y = z_new.clone();
        } else {
            let t_new = (T::one() + (T::one() + real::<T>(4.0) * t * t).sqrt()) / real(2.0);
            y = &z_new + (&z_new - &z) * ((t - T::one()) / t_new);
            t = t_new;
        }
        z = z_new;
        res = inf_norm(&(&z - project(&(&z - (h * &z + q)))));
        if res <= tol {
            return Ok(z);
        }
    }
    Err(Error::ToleranceNotReached { tol: to_f64(tol), residual: to_f64(res) })
}
