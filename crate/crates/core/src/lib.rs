//! Inexact alternating minimization (AMA, FAMA) and inexact proximal-gradient
//! methods, together with their iteration-complexity bounds, a distributed
//! consensus solver with certified local projected-gradient solves, and a
//! distributed MPC instance builder.
//!
//! The numerical code is generic over [`Real`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to `f64`.

pub mod ama;
pub mod certify;
pub mod distributed;
pub mod dmpc;
pub mod error;
pub mod linalg;
pub mod pgm;
pub mod qp;
pub mod scalar;
pub mod splitting;

pub use error::{Error, Result};
pub use linalg::LinOp;
pub use scalar::Real;
pub use splitting::{
    dual_objectives, dual_value, prox, prox_inexact, ConvexSet, DualNonsmooth, DualSmooth, Extended,
    InexactProxResult, PrimalBlock, ProxFn, Proximable, QuadraticFn, Smooth, SplitProblem,
};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
pub type Split = SplitProblem<f64>;
pub type Quadratic = QuadraticFn<f64>;
pub type Set = ConvexSet<f64>;
