//! Distributed MPC with input coupling: state elimination into one local
//! quadratic per agent, and a random network generator.
//!
//! Agent `i` has dynamics `x_i(t+1) = A_ii x_i(t) + Σ_{j ∈ N_i} B_ij u_j(t)`.
//! Its local variable is the input sequence of its neighbourhood
//! `z_i = (u_j(0), …, u_j(N−1))_{j ∈ N_i}` and its cost is
//!
//! `½ Σ_{t<N} x_i(t)ᵀQx_i(t) + ½ x_i(N)ᵀPx_i(N) + ½ Σ_{j ∈ N_i} Σ_t u_j(t)ᵀRu_j(t)/|N_j|`.
//!
//! The input weight of `u_j` is split evenly over the `|N_j|` agents holding a
//! copy, so the network sum weights every input by `R` exactly once and every
//! local Hessian is positive definite.

use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributed::{AgentProblem, Network, NetworkProblem, SelectionMap};
use crate::error::{Error, Result};
use crate::linalg::block_diag;
use crate::qp::{BoxQp, QpOptions};
use crate::scalar::{from_usize, real, Real};
use crate::splitting::QuadraticFn;

/// One subsystem of the network.
#[derive(Clone, Debug)]
pub struct LtiAgent<T: Real> {
    pub a: DMatrix<T>,
    /// `B_ij` for `j ∈ N_i`, ascending in `j`, `j = i` included.
    pub b: Vec<(usize, DMatrix<T>)>,
    /// State coupling `A_ij`, `j ≠ i`; must be zero.
    pub a_coupling: Vec<(usize, DMatrix<T>)>,
    pub x0: DVector<T>,
    pub u_lower: DVector<T>,
    pub u_upper: DVector<T>,
}

impl<T: Real> LtiAgent<T> {
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn b_own(&self, i: usize) -> Option<&DMatrix<T>> {
        self.b.iter().find(|(j, _)| *j == i).map(|(_, m)| m)
    }
}

/// Horizon and weights shared by all agents.
#[derive(Clone, Debug)]
pub struct MpcSpec<T: Real> {
    pub horizon: usize,
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub p: DMatrix<T>,
}

impl<T: Real> MpcSpec<T> {
    /// `Q = R = P = I`.
    pub fn identity(horizon: usize, nx: usize, nu: usize) -> Self {
        MpcSpec { horizon, q: DMatrix::identity(nx, nx), r: DMatrix::identity(nu, nu), p: DMatrix::identity(nx, nx) }
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        for (name, m) in [("Q", &self.q), ("R", &self.r), ("P", &self.p)] {
            if m.nrows() != m.ncols() || m.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite(format!("weight {name}")));
            }
        }
        Ok(())
    }
}

fn matrix_rank<T: Real>(m: &DMatrix<T>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(T::zero(), |a, &b| a.max(b));
    let tol = smax * T::eps() * from_usize::<T>(m.nrows().max(m.ncols())) * real(10.0);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Rank test on `[B, AB, …, A^{n−1}B]`.
pub fn is_controllable<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> bool {
    let n = a.nrows();
    let mut blocks = Vec::with_capacity(n);
    let mut cur = b.clone();
    for _ in 0..n {
        blocks.push(cur.clone());
        cur = a * cur;
    }
    let mut c = DMatrix::zeros(n, b.ncols() * n);
    for (k, blk) in blocks.iter().enumerate() {
        c.view_mut((0, k * b.ncols()), (n, b.ncols())).copy_from(blk);
    }
    matrix_rank(&c) == n
}

/// `Φ = [I; A; …; A^N]` and `Γ` with `X = Φx̄ + ΓZ`, `X = (x(0), …, x(N))` and `Z` the
/// neighbourhood input sequence ordered by agent, then time.
pub fn prediction_matrices<T: Real>(agent: &LtiAgent<T>, horizon: usize) -> (DMatrix<T>, DMatrix<T>) {
    let nx = agent.nx();
    let mut powers = vec![DMatrix::identity(nx, nx)];
    for t in 1..=horizon {
        let next = &agent.a * &powers[t - 1];
        powers.push(next);
    }
    let mut phi = DMatrix::zeros(nx * (horizon + 1), nx);
    for t in 0..=horizon {
        phi.view_mut((t * nx, 0), (nx, nx)).copy_from(&powers[t]);
    }
    let cols: usize = agent.b.iter().map(|(_, b)| b.ncols() * horizon).sum();
    let mut gamma = DMatrix::zeros(nx * (horizon + 1), cols);
    let mut off = 0;
    for (_, b) in &agent.b {
        let nu = b.ncols();
        for t in 1..=horizon {
            for s in 0..t {
                let blk = &powers[t - 1 - s] * b;
                gamma.view_mut((t * nx, off + s * nu), (nx, nu)).copy_from(&blk);
            }
        }
        off += nu * horizon;
    }
    (phi, gamma)
}

/// Forward simulation; `inputs[j][t]` is `u_j(t)` for the `j`-th entry of `agent.b`.
pub fn simulate<T: Real>(agent: &LtiAgent<T>, inputs: &[Vec<DVector<T>>], horizon: usize) -> Vec<DVector<T>> {
    let mut x = vec![agent.x0.clone()];
    for t in 0..horizon {
        let mut next = &agent.a * &x[t];
        for (k, (_, b)) in agent.b.iter().enumerate() {
            next += b * &inputs[k][t];
        }
        x.push(next);
    }
    x
}

fn check_structure<T: Real>(agents: &[LtiAgent<T>], spec: &MpcSpec<T>, network: &Network) -> Result<usize> {
    spec.validate()?;
    if agents.len() != network.len() {
        return Err(Error::Dimension(format!("{} agents for a network of {}", agents.len(), network.len())));
    }
    let nx = spec.q.nrows();
    let nu = spec.r.nrows();
    if spec.p.nrows() != nx {
        return Err(Error::Dimension("P and Q differ in size".into()));
    }
    for (i, ag) in agents.iter().enumerate() {
        if ag.a_coupling.iter().any(|(_, m)| m.iter().any(|&v| v != T::zero())) {
            return Err(Error::StateCoupling(i));
        }
        if ag.nx() != nx || ag.a.ncols() != nx || ag.x0.len() != nx {
            return Err(Error::Dimension(format!("agent {i}: state dimension differs from Q")));
        }
        if ag.u_lower.len() != nu || ag.u_upper.len() != nu {
            return Err(Error::Dimension(format!("agent {i}: input box dimension differs from R")));
        }
        let ids: Vec<usize> = ag.b.iter().map(|(j, _)| *j).collect();
        if ids != network.neighbors(i) {
            return Err(Error::InconsistentSelectors(format!("agent {i}: input matrices do not match N_i")));
        }
        if ag.b.iter().any(|(_, b)| b.nrows() != nx || b.ncols() != nu) {
            return Err(Error::Dimension(format!("agent {i}: input matrix is not {nx}x{nu}")));
        }
        if !is_controllable(&ag.a, ag.b_own(i).unwrap()) {
            return Err(Error::Uncontrollable(i));
        }
    }
    Ok(nu)
}

/// Eliminates the states and returns the local problems `f_i(z_i)` over input boxes.
pub fn condense<T: Real>(agents: &[LtiAgent<T>], spec: &MpcSpec<T>, network: &Network) -> Result<NetworkProblem<T>> {
    let nu = check_structure(agents, spec, network)?;
    let n = spec.horizon;
    let maps = SelectionMap::new(network, &vec![nu * n; agents.len()])?;
    let mut qs: Vec<&DMatrix<T>> = vec![&spec.q; n];
    qs.push(&spec.p);
    let q_bar = block_diag(&qs);
    let mut out = Vec::with_capacity(agents.len());
    for (i, ag) in agents.iter().enumerate() {
        let (phi, gamma) = prediction_matrices(ag, n);
        let mut h = gamma.transpose() * &q_bar * &gamma;
        let mut off = 0;
        for &j in network.neighbors(i) {
            let w = real::<T>(1.0) / from_usize::<T>(network.neighbors(j).len());
            for t in 0..n {
                let mut blk = h.view_mut((off + t * nu, off + t * nu), (nu, nu));
                blk += &spec.r * w;
            }
            off += nu * n;
        }
        let h = (&h + h.transpose()) * real::<T>(0.5);
        let free = &phi * &ag.x0;
        let lin = gamma.transpose() * (&q_bar * &free);
        let constant = free.dot(&(&q_bar * &free)) * real(0.5);
        let quad = QuadraticFn::new(h, lin)?.with_constant(constant);
        let dim = quad.dim();
        let (mut lo, mut hi) = (DVector::zeros(dim), DVector::zeros(dim));
        let mut off = 0;
        for &j in network.neighbors(i) {
            for _ in 0..n {
                lo.rows_mut(off, nu).copy_from(&agents[j].u_lower);
                hi.rows_mut(off, nu).copy_from(&agents[j].u_upper);
                off += nu;
            }
        }
        out.push(AgentProblem::new(quad, lo, hi)?);
    }
    NetworkProblem::new(out, network.clone(), maps)
}

/// Network cost of the global input vector `v` by forward simulation.
pub fn simulated_cost<T: Real>(agents: &[LtiAgent<T>], spec: &MpcSpec<T>, network: &Network, v: &DVector<T>) -> T {
    let n = spec.horizon;
    let nu = spec.r.nrows();
    let seq = |j: usize| -> Vec<DVector<T>> {
        (0..n).map(|t| v.rows(j * nu * n + t * nu, nu).into_owned()).collect()
    };
    let half = real::<T>(0.5);
    let mut total = T::zero();
    for (i, ag) in agents.iter().enumerate() {
        let inputs: Vec<Vec<DVector<T>>> = network.neighbors(i).iter().map(|&j| seq(j)).collect();
        let x = simulate(ag, &inputs, n);
        for (t, xt) in x.iter().enumerate() {
            let w = if t == n { &spec.p } else { &spec.q };
            total += xt.dot(&(w * xt)) * half;
        }
        for u in seq(i) {
            total += u.dot(&(&spec.r * &u)) * half;
        }
    }
    total
}

/// Minimizer of the monolithic condensed problem `min Σ_i f_i(E_i v)` over the input box.
pub fn monolithic_solution<T: Real>(problem: &NetworkProblem<T>, warm: Option<&DVector<T>>) -> Result<DVector<T>> {
    let (h, q, _) = problem.monolithic();
    let (lo, hi) = problem.global_box();
    BoxQp::new(h, lo, hi)?.with_options(QpOptions::default()).solve(&q, warm)
}

/// Fraction of entries of `u` within `tol` of a bound.
pub fn active_fraction<T: Real>(u: &DVector<T>, lo: &DVector<T>, hi: &DVector<T>, tol: T) -> f64 {
    if u.is_empty() {
        return 0.0;
    }
    let n = (0..u.len()).filter(|&r| u[r] - lo[r] <= tol || hi[r] - u[r] <= tol).count();
    n as f64 / u.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub agents: usize,
    pub nx: usize,
    pub nu: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Range of neighbour counts (self excluded) the extra edges aim for.
    pub neighbor_range: (usize, usize),
    pub u_box: (f64, f64),
    /// Initial-state scale; tuned for `target_active` when `None`.
    pub activation_scale: Option<f64>,
    pub target_active: f64,
    pub spectral_radius_cap: f64,
    /// Standard deviation of the entries of `B_ij`.
    pub input_gain: f64,
    pub resample_budget: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            agents: 40,
            nx: 3,
            nu: 2,
            horizon: 11,
            seed: 1,
            neighbor_range: (2, 2),
            u_box: (-0.4, 0.3),
            activation_scale: None,
            target_active: 0.7,
            spectral_radius_cap: 1.1,
            input_gain: 0.03,
            resample_budget: 100,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedInstance {
    pub params: GeneratorParams,
    pub systems: Vec<LtiAgent<f64>>,
    pub spec: MpcSpec<f64>,
    pub problem: NetworkProblem<f64>,
    pub activation_scale: f64,
    pub active_fraction: f64,
    /// Monolithic optimum `u⋆` at the chosen scale.
    pub u_star: DVector<f64>,
}

fn random_graph(rng: &mut ChaCha8Rng, m: usize, range: (usize, usize)) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut adj = vec![vec![false; m]; m];
    let mut deg = vec![0usize; m];
    let mut edges = Vec::new();
    let mut add = |a: usize, b: usize, adj: &mut Vec<Vec<bool>>, deg: &mut Vec<usize>| {
        adj[a][b] = true;
        adj[b][a] = true;
        deg[a] += 1;
        deg[b] += 1;
        edges.push((a.min(b), a.max(b)));
    };
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1).max(2));
    for k in 1..m {
        let open: Vec<usize> = order[..k].iter().copied().filter(|&j| deg[j] < hi).collect();
        let parent = match open.as_slice().choose(rng) {
            Some(&j) => j,
            None => order[rng.random_range(0..k)],
        };
        add(order[k], parent, &mut adj, &mut deg);
    }
    for &i in &order {
        let target = rng.random_range(lo..=hi);
        while deg[i] < target {
            let cands: Vec<usize> = (0..m).filter(|&j| j != i && !adj[i][j] && deg[j] < hi).collect();
            let Some(&j) = cands.as_slice().choose(rng) else { break };
            add(i, j, &mut adj, &mut deg);
        }
    }
    edges.sort_unstable();
    edges
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, sd: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal) * sd)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Random connected network of controllable input-coupled systems.
pub fn generate_random_instance(params: &GeneratorParams) -> Result<GeneratedInstance> {
    let GeneratorParams { agents: m, nx, nu, horizon, seed, .. } = *params;
    if m == 0 || nx == 0 || nu == 0 || horizon == 0 {
        return Err(Error::InvalidParameter("agents, nx, nu and horizon must be positive".into()));
    }
    if !(params.u_box.0 < params.u_box.1) {
        return Err(Error::InvalidParameter("input box must have lower < upper".into()));
    }
    if !(params.target_active > 0.0 && params.target_active <= 1.0) {
        return Err(Error::InvalidParameter("target active fraction must lie in (0,1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = random_graph(&mut rng, m, params.neighbor_range);
    let network = Network::new(m, &edges)?;
    let mut systems = Vec::with_capacity(m);
    for i in 0..m {
        let mut tries = 0;
        let (a, b) = loop {
            tries += 1;
            if tries > params.resample_budget {
                return Err(Error::ResampleBudget(format!("no controllable pair for agent {i}")));
            }
            let mut a = gaussian_matrix(&mut rng, nx, nx, 1.0 / (nx as f64).sqrt());
            let rho = spectral_radius(&a);
            if rho > params.spectral_radius_cap {
                a *= params.spectral_radius_cap / rho;
            }
            let b: Vec<(usize, DMatrix<f64>)> =
                network.neighbors(i).iter().map(|&j| (j, gaussian_matrix(&mut rng, nx, nu, params.input_gain))).collect();
            let own = &b.iter().find(|(j, _)| *j == i).unwrap().1;
            if is_controllable(&a, own) {
                break (a, b);
            }
        };
        let x0 = DVector::from_fn(nx, |_, _| rng.sample::<f64, _>(StandardNormal));
        systems.push(LtiAgent {
            a,
            b,
            a_coupling: Vec::new(),
            x0,
            u_lower: DVector::from_element(nu, params.u_box.0),
            u_upper: DVector::from_element(nu, params.u_box.1),
        });
    }
    let spec = MpcSpec::identity(horizon, nx, nu);
    let with_scale = |s: f64| -> Vec<LtiAgent<f64>> {
        systems.iter().map(|a| LtiAgent { x0: &a.x0 * s, ..a.clone() }).collect()
    };
    let unit = condense(&with_scale(1.0), &spec, &network)?;
    let (h, q1, _) = unit.monolithic();
    let (lo, hi) = unit.global_box();
    let qp = BoxQp::new(h, lo.clone(), hi.clone())?;
    let tol = 1e-9;
    let solve_at = |s: f64, warm: Option<&DVector<f64>>| -> Result<(DVector<f64>, f64)> {
        let u = qp.solve(&(&q1 * s), warm)?;
        let f = active_fraction(&u, &lo, &hi, tol);
        Ok((u, f))
    };
    let (scale, u_star, frac) = match params.activation_scale {
        Some(s) => {
            let (u, f) = solve_at(s, None)?;
            (s, u, f)
        }
        None => {
            let mut hi_s = 1.0;
            let (mut u_hi, mut f_hi) = solve_at(hi_s, None)?;
            let mut doublings = 0;
            while f_hi < params.target_active {
                doublings += 1;
                if doublings > 40 {
                    return Err(Error::ResampleBudget("activation scale search did not reach the target".into()));
                }
                hi_s *= 2.0;
                (u_hi, f_hi) = solve_at(hi_s, Some(&u_hi))?;
            }
            let mut lo_s = if doublings == 0 { 0.0 } else { hi_s / 2.0 };
            for _ in 0..12 {
                let mid = 0.5 * (lo_s + hi_s);
                let (u, f) = solve_at(mid, Some(&u_hi))?;
                if f >= params.target_active {
                    hi_s = mid;
                    u_hi = u;
                    f_hi = f;
                } else {
                    lo_s = mid;
                }
            }
            (hi_s, u_hi, f_hi)
        }
    };
    let systems = with_scale(scale);
    let problem = condense(&systems, &spec, &network)?;
    Ok(GeneratedInstance {
        params: params.clone(),
        systems,
        spec,
        problem,
        activation_scale: scale,
        active_fraction: frac,
        u_star,
    })
}
