#![allow(dead_code)]

use iama::distributed::{AgentProblem, Network, NetworkProblem, SelectionMap};
use iama::QuadraticFn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `QᵀDQ` with eigenvalues drawn from `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = g.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(lo..hi)));
    let h = q.transpose() * d * &q;
    (&h + h.transpose()) * 0.5
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

pub fn ring(m: usize) -> Vec<(usize, usize)> {
    if m < 2 {
        return Vec::new();
    }
    if m == 2 {
        return vec![(0, 1)];
    }
    (0..m).map(|i| (i, (i + 1) % m)).collect()
}

/// Random quadratic agents on `edges`; `half_width = None` means an inactive box.
pub fn random_network(
    seed: u64,
    m: usize,
    edges: &[(usize, usize)],
    block: usize,
    half_width: Option<f64>,
) -> NetworkProblem<f64> {
    let mut r = rng(seed);
    let network = Network::new(m, edges).unwrap();
    let maps = SelectionMap::new(&network, &vec![block; m]).unwrap();
    let agents = (0..m)
        .map(|i| {
            let n = maps.local_dim(i);
            let h = random_spd(&mut r, n, 0.5, 3.0);
            let lin = random_vector(&mut r, n, 2.0);
            let w = half_width.unwrap_or(1e6);
            let lo = DVector::from_fn(n, |_, _| -w * r.random_range(0.5..1.0));
            let hi = DVector::from_fn(n, |_, _| w * r.random_range(0.5..1.0));
            AgentProblem::new(QuadraticFn::new(h, lin).unwrap(), lo, hi).unwrap()
        })
        .collect();
    NetworkProblem::new(agents, network, maps).unwrap()
}
