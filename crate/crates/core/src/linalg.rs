//! Linear operators and small dense helpers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// A linear map stored in the cheapest form that represents it.
#[derive(Clone, Debug)]
pub enum LinOp<T: Real> {
    Identity(usize),
    /// Row `r` reads component `index[r]` of the input, scaled by `scale`.
    Selection { cols: usize, index: Vec<usize>, scale: T },
    Dense(DMatrix<T>),
}

impl<T: Real> LinOp<T> {
    pub fn nrows(&self) -> usize {
        match self {
            LinOp::Identity(n) => *n,
            LinOp::Selection { index, .. } => index.len(),
            LinOp::Dense(m) => m.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            LinOp::Identity(n) => *n,
            LinOp::Selection { cols, .. } => *cols,
            LinOp::Dense(m) => m.ncols(),
        }
    }

    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        match self {
            LinOp::Identity(_) => x.clone(),
            LinOp::Selection { index, scale, .. } => {
                DVector::from_iterator(index.len(), index.iter().map(|&c| x[c] * *scale))
            }
            LinOp::Dense(m) => m * x,
        }
    }

    pub fn apply_t(&self, y: &DVector<T>) -> DVector<T> {
        match self {
            LinOp::Identity(_) => y.clone(),
            LinOp::Selection { cols, index, scale } => {
                let mut out = DVector::zeros(*cols);
                for (r, &c) in index.iter().enumerate() {
                    out[c] += y[r] * *scale;
                }
                out
            }
            LinOp::Dense(m) => m.tr_mul(y),
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        match self {
            LinOp::Identity(n) => DMatrix::identity(*n, *n),
            LinOp::Selection { cols, index, scale } => {
                let mut m = DMatrix::zeros(index.len(), *cols);
                for (r, &c) in index.iter().enumerate() {
                    m[(r, c)] = *scale;
                }
                m
            }
            LinOp::Dense(m) => m.clone(),
        }
    }

    /// Diagonal of `AᵀA` when that Gram matrix is diagonal.
    pub fn gram_diagonal(&self) -> Option<DVector<T>> {
        match self {
            LinOp::Identity(n) => Some(DVector::from_element(*n, T::one())),
            LinOp::Selection { cols, index, scale } => {
                let mut d = DVector::zeros(*cols);
                for &c in index {
                    d[c] += *scale * *scale;
                }
                Some(d)
            }
            LinOp::Dense(m) => {
                let g = m.tr_mul(m);
                let n = g.nrows();
                let scale = g.amax().max(T::one());
                for i in 0..n {
                    for j in 0..n {
                        if i != j && g[(i, j)].abs() > real::<T>(1e-14) * scale {
                            return None;
                        }
                    }
                }
                Some(g.diagonal())
            }
        }
    }

    /// `ρ(A) = ‖AᵀA‖₂`, the squared spectral norm.
    pub fn rho(&self) -> T {
        match self.gram_diagonal() {
            Some(d) => d.iter().fold(T::zero(), |a, &b| a.max(b)),
            None => {
                let s = self.spectral_norm();
                s * s
            }
        }
    }

    pub fn spectral_norm(&self) -> T {
        match self {
            LinOp::Identity(n) => {
                if *n == 0 {
                    T::zero()
                } else {
                    T::one()
                }
            }
            LinOp::Selection { .. } => self.rho().sqrt(),
            LinOp::Dense(m) => {
                if m.is_empty() {
                    return T::zero();
                }
                m.clone()
                    .svd(false, false)
                    .singular_values
                    .iter()
                    .fold(T::zero(), |a, &b| a.max(b))
            }
        }
    }

    pub fn has_full_row_rank(&self) -> bool {
        match self {
            LinOp::Identity(_) => true,
            LinOp::Selection { index, cols, scale } => {
                if *scale == T::zero() {
                    return index.is_empty();
                }
                let mut seen = vec![false; *cols];
                index.iter().all(|&c| !std::mem::replace(&mut seen[c], true))
            }
            LinOp::Dense(m) => {
                if m.nrows() > m.ncols() {
                    return false;
                }
                let sv = m.clone().svd(false, false).singular_values;
                let smax = sv.iter().fold(T::zero(), |a, &b| a.max(b));
                let tol = smax * real::<T>(1e-12) * crate::scalar::from_usize::<T>(m.ncols().max(1));
                sv.iter().filter(|&&s| s > tol).count() == m.nrows()
            }
        }
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_extremes<T: Real>(m: &DMatrix<T>) -> (T, T) {
    if m.is_empty() {
        return (T::zero(), T::zero());
    }
    let eig = m.clone().symmetric_eigen();
    let lo = eig.eigenvalues.iter().fold(eig.eigenvalues[0], |a, &b| a.min(b));
    let hi = eig.eigenvalues.iter().fold(eig.eigenvalues[0], |a, &b| a.max(b));
    (lo, hi)
}

pub fn is_symmetric<T: Real>(m: &DMatrix<T>, rel_tol: T) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(T::one());
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Draws a direction uniformly on the unit sphere and scales it to `norm`.
pub fn random_direction<T: Real, R: Rng + ?Sized>(rng: &mut R, dim: usize, norm: T) -> DVector<T> {
    if dim == 0 {
        return DVector::zeros(0);
    }
    loop {
        let v: DVector<f64> = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample(StandardNormal)));
        let n = v.norm();
        if n > 1e-12 {
            return v.map(|x| real::<T>(x / n) * norm);
        }
    }
}

/// `‖x‖∞`.
pub fn inf_norm<T: Real>(x: &DVector<T>) -> T {
    x.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
}

pub fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!("{what}: got {got}, expected {want}")));
    }
    Ok(())
}

/// Block-diagonal assembly.
pub fn block_diag<T: Real>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}
