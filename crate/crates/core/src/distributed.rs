//! Consensus form of a network of coupled agents and the distributed inexact
//! AMA/FAMA iterations over it.
//!
//! Agent `i` owns the block `[v]_i` of a global vector `v` and keeps a local
//! copy `z_i = E_i v` of the blocks of all its neighbours (itself included).
//! Each iteration solves the local problems in parallel, averages the copies of
//! every block and updates the local multipliers. All cross-agent reads go
//! through [`NeighborBus`], which rejects reads outside the neighbourhood.

use std::collections::{BTreeSet, VecDeque};
use std::ops::Range;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ama::{Algorithm, AmaTrace};
use crate::error::{Error, Result};
use crate::linalg::{random_direction, LinOp};
use crate::pgm::ErrorSchedule;
use crate::scalar::{from_usize, real, to_f64, Real};
use crate::splitting::{ConvexSet, Extended, PrimalBlock, ProxFn, QuadraticFn, SplitProblem};

/// Undirected connected graph; every agent is its own neighbour.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    neighbors: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("network needs at least one agent".into()));
        }
        let mut sets: Vec<BTreeSet<usize>> = (0..m).map(|i| BTreeSet::from([i])).collect();
        for &(a, b) in edges {
            if a >= m || b >= m {
                return Err(Error::InvalidParameter(format!("edge ({a}, {b}) outside 0..{m}")));
            }
            sets[a].insert(b);
            sets[b].insert(a);
        }
        let net = Network { neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect() };
        if !net.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(net)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// `N_i` in ascending order, `i` included.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn is_neighbor(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, n) in self.neighbors.iter().enumerate() {
            out.extend(n.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Selection maps `z_i = E_i v` for a network and the block sizes of `v`.
#[derive(Clone, Debug)]
pub struct SelectionMap {
    block_dims: Vec<usize>,
    block_offsets: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
    /// Global indices of `v` read by each `z_i`.
    local_index: Vec<Vec<usize>>,
    local_offsets: Vec<usize>,
}

impl SelectionMap {
    pub fn new(network: &Network, block_dims: &[usize]) -> Result<Self> {
        if block_dims.len() != network.len() {
            return Err(Error::InconsistentSelectors(format!(
                "{} block sizes for {} agents",
                block_dims.len(),
                network.len()
            )));
        }
        let mut block_offsets = Vec::with_capacity(block_dims.len() + 1);
        let mut acc = 0;
        for &d in block_dims {
            block_offsets.push(acc);
            acc += d;
        }
        block_offsets.push(acc);
        let neighbors: Vec<Vec<usize>> = (0..network.len()).map(|i| network.neighbors(i).to_vec()).collect();
        let local_index: Vec<Vec<usize>> = neighbors
            .iter()
            .map(|n| n.iter().flat_map(|&j| block_offsets[j]..block_offsets[j + 1]).collect())
            .collect();
        let mut local_offsets = vec![0];
        for idx in &local_index {
            local_offsets.push(local_offsets.last().unwrap() + idx.len());
        }
        Ok(SelectionMap { block_dims: block_dims.to_vec(), block_offsets, neighbors, local_index, local_offsets })
    }

    pub fn agents(&self) -> usize {
        self.block_dims.len()
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    /// Dimension of `v`.
    pub fn global_dim(&self) -> usize {
        *self.block_offsets.last().unwrap()
    }

    pub fn block_range(&self, i: usize) -> Range<usize> {
        self.block_offsets[i]..self.block_offsets[i + 1]
    }

    /// Dimension of `z_i`.
    pub fn local_dim(&self, i: usize) -> usize {
        self.local_index[i].len()
    }

    /// Dimension of the stacked `z = (z_1, …, z_M)`.
    pub fn stacked_dim(&self) -> usize {
        *self.local_offsets.last().unwrap()
    }

    pub fn stacked_range(&self, i: usize) -> Range<usize> {
        self.local_offsets[i]..self.local_offsets[i + 1]
    }

    pub fn local_index(&self, i: usize) -> &[usize] {
        &self.local_index[i]
    }

    /// Position of the copy of `[v]_i` inside `z_j` (the selector `F_ji`), `None` if `i ∉ N_j`.
    pub fn copy_range(&self, j: usize, i: usize) -> Option<Range<usize>> {
        let pos = self.neighbors[j].binary_search(&i).ok()?;
        let start: usize = self.neighbors[j][..pos].iter().map(|&l| self.block_dims[l]).sum();
        Some(start..start + self.block_dims[i])
    }

    /// `|N_i|`, the number of copies of `[v]_i`.
    pub fn copies(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// `E = [E_1; …; E_M]` as a selection operator.
    pub fn stacked_operator<T: Real>(&self, scale: T) -> LinOp<T> {
        LinOp::Selection { cols: self.global_dim(), index: self.local_index.concat(), scale }
    }

    pub fn local_matrix<T: Real>(&self, i: usize) -> DMatrix<T> {
        let mut e = DMatrix::zeros(self.local_dim(i), self.global_dim());
        for (r, &c) in self.local_index[i].iter().enumerate() {
            e[(r, c)] = T::one();
        }
        e
    }

    pub fn stacked_matrix<T: Real>(&self) -> DMatrix<T> {
        self.stacked_operator(T::one()).to_dense()
    }

    pub fn select<T: Real>(&self, i: usize, v: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(self.local_dim(i), self.local_index[i].iter().map(|&c| v[c]))
    }

    /// Checks `F_ji E_j v = [v]_i` for every `j ∈ N_i` on a probe vector.
    pub fn check_consistency(&self) -> Result<()> {
        let probe = DVector::from_fn(self.global_dim(), |r, _| r as f64 + 1.0);
        for i in 0..self.agents() {
            let want = probe.rows(self.block_offsets[i], self.block_dims[i]).into_owned();
            for &j in &self.neighbors[i] {
                let r = self
                    .copy_range(j, i)
                    .ok_or_else(|| Error::InconsistentSelectors(format!("agent {j} holds no copy of block {i}")))?;
                let zj = self.select(j, &probe);
                if zj.rows(r.start, r.len()) != want {
                    return Err(Error::InconsistentSelectors(format!("copy of block {i} in agent {j}")));
                }
            }
        }
        Ok(())
    }

    /// `(EᵀE)⁻¹Eᵀz`: each block is the mean of its copies, summed in ascending agent order.
    pub fn consensus<T: Real>(&self, z: &[DVector<T>]) -> DVector<T> {
        let mut v = DVector::zeros(self.global_dim());
        for i in 0..self.agents() {
            let block = self.consensus_block(i, |j| &z[j]);
            v.rows_mut(self.block_offsets[i], self.block_dims[i]).copy_from(&block);
        }
        v
    }

    fn consensus_block<'a, T: Real>(&self, i: usize, read: impl Fn(usize) -> &'a DVector<T>) -> DVector<T> {
        let mut acc = DVector::zeros(self.block_dims[i]);
        for &j in &self.neighbors[i] {
            let r = self.copy_range(j, i).expect("neighbour holds a copy");
            acc += read(j).rows(r.start, r.len());
        }
        acc / from_usize::<T>(self.copies(i))
    }

    pub fn stack<T: Real>(&self, parts: &[DVector<T>]) -> DVector<T> {
        let mut out = DVector::zeros(self.stacked_dim());
        for (i, p) in parts.iter().enumerate() {
            out.rows_mut(self.local_offsets[i], p.len()).copy_from(p);
        }
        out
    }

    pub fn unstack<T: Real>(&self, z: &DVector<T>) -> Vec<DVector<T>> {
        (0..self.agents()).map(|i| z.rows(self.local_offsets[i], self.local_dim(i)).into_owned()).collect()
    }
}

/// `‖Σ_i E_iᵀλ_i‖∞`.
pub fn check_null_multiplier<T: Real>(lambda: &[DVector<T>], maps: &SelectionMap) -> T {
    let mut acc = DVector::<T>::zeros(maps.global_dim());
    for (i, l) in lambda.iter().enumerate() {
        for (r, &c) in maps.local_index(i).iter().enumerate() {
            acc[c] += l[r];
        }
    }
    acc.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
}

/// Local problem `min ½zᵀHz + hᵀz + c` over a box.
#[derive(Clone, Debug)]
pub struct AgentProblem<T: Real> {
    block: PrimalBlock<T>,
}

impl<T: Real> AgentProblem<T> {
    pub fn new(quad: QuadraticFn<T>, lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        let set = ConvexSet::boxed(lower, upper)?;
        Ok(AgentProblem { block: PrimalBlock::new(quad, set)? })
    }

    pub fn dim(&self) -> usize {
        self.block.dim()
    }

    pub fn quad(&self) -> &QuadraticFn<T> {
        &self.block.quad
    }

    pub fn set(&self) -> &ConvexSet<T> {
        &self.block.set
    }

    pub fn block(&self) -> &PrimalBlock<T> {
        &self.block
    }

    pub fn sigma(&self) -> T {
        self.block.quad.sigma()
    }

    pub fn lipschitz(&self) -> T {
        self.block.quad.lipschitz()
    }

    pub fn bounds(&self) -> (&DVector<T>, &DVector<T>) {
        match &self.block.set {
            ConvexSet::Box { lower, upper } => (lower, upper),
            _ => unreachable!("agent sets are boxes"),
        }
    }

    /// `argmin_{z ∈ C} f(z) − λᵀz` to high accuracy.
    pub fn solve_exact(&self, lambda: &DVector<T>, warm: Option<&DVector<T>>) -> Result<DVector<T>> {
        self.block.argmin_shifted(lambda, warm)
    }

    /// Local dual contribution `min_{z ∈ C} f(z) − λᵀz` at the minimizer `z`.
    pub fn lagrangian(&self, z: &DVector<T>, lambda: &DVector<T>) -> T {
        self.block.quad.eval(z) - lambda.dot(z)
    }

    pub fn project(&self, z: &DVector<T>) -> DVector<T> {
        self.block.set.project(z)
    }

    pub fn violation(&self, z: &DVector<T>) -> T {
        self.block.set.violation(z)
    }
}

/// Agents, graph and selection maps of one consensus problem.
#[derive(Clone, Debug)]
pub struct NetworkProblem<T: Real> {
    pub agents: Vec<AgentProblem<T>>,
    pub network: Network,
    pub maps: SelectionMap,
}

impl<T: Real> NetworkProblem<T> {
    pub fn new(agents: Vec<AgentProblem<T>>, network: Network, maps: SelectionMap) -> Result<Self> {
        if agents.len() != network.len() || maps.agents() != network.len() {
            return Err(Error::InconsistentSelectors("agent count differs between parts".into()));
        }
        for i in 0..network.len() {
            if maps.neighbors(i) != network.neighbors(i) {
                return Err(Error::InconsistentSelectors(format!("neighbourhood of agent {i}")));
            }
            if agents[i].dim() != maps.local_dim(i) {
                return Err(Error::InconsistentSelectors(format!(
                    "agent {i} has dimension {} but its neighbourhood spans {}",
                    agents[i].dim(),
                    maps.local_dim(i)
                )));
            }
        }
        Ok(NetworkProblem { agents, network, maps })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// `min_i σ_i`, also the step bound of the distributed iterations.
    pub fn sigma_f(&self) -> T {
        self.agents.iter().map(|a| a.sigma()).fold(T::infinity(), |a, b| a.min(b))
    }

    /// `λ_min(H)/λ_max(H)` of the block-diagonal Hessian.
    pub fn gamma(&self) -> T {
        let hi = self.agents.iter().map(|a| a.lipschitz()).fold(T::zero(), |a, b| a.max(b));
        self.sigma_f() / hi
    }

    /// Split form with `A = I`, `B = −E`, `c = 0` and `g ≡ 0`.
    pub fn build_split(&self) -> Result<SplitProblem<T>> {
        self.maps.check_consistency()?;
        let n = self.maps.stacked_dim();
        SplitProblem::new(
            self.agents.iter().map(|a| a.block.clone()).collect(),
            ProxFn::Zero(self.maps.global_dim()),
            LinOp::Identity(n),
            self.maps.stacked_operator(-T::one()),
            DVector::zeros(n),
        )
    }

    /// Sum of local objectives at `z_i = E_i v`.
    pub fn objective(&self, v: &DVector<T>) -> T {
        self.agents
            .iter()
            .enumerate()
            .map(|(i, a)| a.quad().eval(&self.maps.select(i, v)))
            .fold(T::zero(), |a, b| a + b)
    }

    /// Hessian, linear term and box of the monolithic problem in `v`.
    pub fn monolithic(&self) -> (DMatrix<T>, DVector<T>, T) {
        let n = self.maps.global_dim();
        let mut h = DMatrix::zeros(n, n);
        let mut q = DVector::zeros(n);
        let mut c = T::zero();
        for (i, a) in self.agents.iter().enumerate() {
            let idx = self.maps.local_index(i);
            let hi = a.quad().hessian();
            for (r, &gr) in idx.iter().enumerate() {
                q[gr] += a.quad().linear()[r];
                for (s, &gs) in idx.iter().enumerate() {
                    h[(gr, gs)] += hi[(r, s)];
                }
            }
            c += a.quad().constant();
        }
        (h, q, c)
    }

    /// Box on `v` implied by the agents' own blocks.
    pub fn global_box(&self) -> (DVector<T>, DVector<T>) {
        let n = self.maps.global_dim();
        let (mut lo, mut hi) = (DVector::zeros(n), DVector::zeros(n));
        for (i, a) in self.agents.iter().enumerate() {
            let r = self.maps.copy_range(i, i).unwrap();
            let g = self.maps.block_range(i);
            let (l, u) = a.bounds();
            lo.rows_mut(g.start, g.len()).copy_from(&l.rows(r.start, r.len()));
            hi.rows_mut(g.start, g.len()).copy_from(&u.rows(r.start, r.len()));
        }
        (lo, hi)
    }
}

/// Everything a local solver may look at for agent `i` at outer iteration `k`.
pub struct LocalQuery<'a, T: Real> {
    pub agent: usize,
    pub k: usize,
    pub agents: usize,
    pub problem: &'a AgentProblem<T>,
    /// Multiplier entering this solve (`λ̂_i^{k−1}` for FAMA).
    pub lambda: &'a DVector<T>,
    /// Multiplier of the previous solve; equals `lambda` at `k = 1`.
    pub lambda_prev: &'a DVector<T>,
    /// Previous output `z̃_i^{k−1}`, the projection of 0 at `k = 1`.
    pub warm: &'a DVector<T>,
    /// High-accuracy local minimizer when the runner computed it.
    pub exact: Option<&'a DVector<T>>,
}

#[derive(Clone, Debug)]
pub struct LocalOutput<T> {
    pub z: DVector<T>,
    /// Inner iterations spent, for iterative solvers.
    pub iterations: Option<usize>,
    /// Minimal inner iterations reaching the same accuracy target.
    pub exact_iterations: Option<usize>,
    pub alpha: Option<T>,
    pub beta: Option<T>,
}

impl<T> LocalOutput<T> {
    pub fn point(z: DVector<T>) -> Self {
        LocalOutput { z, iterations: None, exact_iterations: None, alpha: None, beta: None }
    }
}

/// Local step-1 oracle of the distributed iterations. Implementations must be
/// pure functions of the query so agents can run in parallel.
pub trait LocalSolver<T: Real>: Send + Sync {
    fn solve(&self, q: &LocalQuery<'_, T>) -> Result<LocalOutput<T>>;

    /// Whether `solve` reads `LocalQuery::exact`.
    fn needs_exact(&self) -> bool {
        false
    }
}

/// High-accuracy local solve.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactLocal;

impl<T: Real> LocalSolver<T> for ExactLocal {
    fn solve(&self, q: &LocalQuery<'_, T>) -> Result<LocalOutput<T>> {
        match q.exact {
            Some(z) => Ok(LocalOutput::point(z.clone())),
            None => Ok(LocalOutput::point(q.problem.solve_exact(q.lambda, Some(q.warm))?)),
        }
    }

    fn needs_exact(&self) -> bool {
        true
    }
}

/// Exact solve plus a feasible synthetic error of norm `sched(k)/√M` per agent,
/// so that the stacked error has norm about `sched(k)`.
#[derive(Clone, Copy, Debug)]
pub struct PerturbedLocal {
    pub schedule: ErrorSchedule,
    pub seed: u64,
}

fn mix_seed(seed: u64, agent: usize, k: usize) -> u64 {
    // splitmix64 finalizer over the packed triple
    let mut x = seed ^ (agent as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (k as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl<T: Real> LocalSolver<T> for PerturbedLocal {
    fn solve(&self, q: &LocalQuery<'_, T>) -> Result<LocalOutput<T>> {
        let exact = match q.exact {
            Some(z) => z.clone(),
            None => q.problem.solve_exact(q.lambda, Some(q.warm))?,
        };
        let mag = real::<T>(self.schedule.magnitude(q.k)) / from_usize::<T>(q.agents).sqrt();
        if mag <= T::zero() || exact.is_empty() {
            return Ok(LocalOutput::point(exact));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, q.agent, q.k));
        let dir = q.problem.set().tangent(&exact, random_direction(&mut rng, exact.len(), mag));
        let n = dir.norm();
        if n <= T::zero() {
            return Ok(LocalOutput::point(exact));
        }
        Ok(LocalOutput::point(q.problem.project(&(&exact + dir * (mag / n)))))
    }

    fn needs_exact(&self) -> bool {
        true
    }
}

/// Logs and checks every cross-agent read.
pub struct NeighborBus<'a> {
    network: &'a Network,
    log: Option<Mutex<Vec<(usize, usize)>>>,
}

impl<'a> NeighborBus<'a> {
    pub fn new(network: &'a Network, logging: bool) -> Self {
        NeighborBus { network, log: logging.then(|| Mutex::new(Vec::new())) }
    }

    /// `data[source]` as seen by `reader`.
    pub fn read<'b, V>(&self, reader: usize, source: usize, data: &'b [V]) -> Result<&'b V> {
        if !self.network.is_neighbor(reader, source) {
            return Err(Error::NonNeighbourAccess { reader, source_agent: source });
        }
        if let Some(log) = &self.log {
            log.lock().expect("bus log poisoned").push((reader, source));
        }
        Ok(&data[source])
    }

    pub fn take_log(self) -> Vec<(usize, usize)> {
        self.log.map(|m| m.into_inner().expect("bus log poisoned")).unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DistributedOptions {
    /// Solve each local problem to high accuracy to measure `δ_i^k`.
    pub measure_delta: bool,
    /// Evaluate `D(λ^k)` and the dual value of the running average.
    pub record_dual: bool,
    pub keep_iterates: bool,
    pub log_access: bool,
}

impl Default for DistributedOptions {
    fn default() -> Self {
        DistributedOptions { measure_delta: true, record_dual: false, keep_iterates: true, log_access: false }
    }
}

#[derive(Clone, Debug)]
pub struct DistributedTrace<T: Real> {
    /// Stacked view: `x` holds `z̃^k`, `z` holds `ṽ^k`, `delta` the measured local errors.
    pub trace: AmaTrace<T>,
    pub et_lambda_inf: Vec<T>,
    /// `‖δ_i^k‖` per iteration and agent, when measured.
    pub agent_delta: Vec<Vec<T>>,
    pub iterations: Vec<Vec<Option<usize>>>,
    pub exact_iterations: Vec<Vec<Option<usize>>>,
    pub alpha: Vec<Option<T>>,
    pub beta: Vec<Vec<Option<T>>>,
    pub access_log: Vec<(usize, usize)>,
}

impl<T: Real> DistributedTrace<T> {
    pub fn len(&self) -> usize {
        self.trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }
}

/// Distributed AMA (`Algorithm::Ama`) or FAMA with zero initial multipliers.
pub fn run_distributed<T: Real>(
    problem: &NetworkProblem<T>,
    local: &dyn LocalSolver<T>,
    tau: T,
    k_max: usize,
    algorithm: Algorithm,
    opts: &DistributedOptions,
) -> Result<DistributedTrace<T>> {
    let limit = problem.sigma_f();
    if !(tau > T::zero() && tau < limit) {
        return Err(Error::StepSize { tau: to_f64(tau), limit: to_f64(limit) });
    }
    let m = problem.len();
    let maps = &problem.maps;
    let bus = NeighborBus::new(&problem.network, opts.log_access);
    let n = maps.stacked_dim();
    let tol = real::<T>(1e-9);
    let lambda0 = DVector::zeros(n);
    let mut tr = DistributedTrace {
        trace: AmaTrace {
            algorithm,
            tau,
            seed: None,
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
            last_lambda: lambda0,
            last_x: DVector::zeros(n),
            last_z: DVector::zeros(maps.global_dim()),
        },
        et_lambda_inf: Vec::with_capacity(k_max),
        agent_delta: Vec::new(),
        iterations: Vec::new(),
        exact_iterations: Vec::new(),
        alpha: Vec::new(),
        beta: Vec::new(),
        access_log: Vec::new(),
    };

    let zeros: Vec<DVector<T>> = (0..m).map(|i| DVector::zeros(maps.local_dim(i))).collect();
    let mut lambda = zeros.clone();
    let mut lambda_hat = zeros.clone();
    let mut used_prev = zeros.clone();
    let mut warm: Vec<DVector<T>> = problem.agents.iter().map(|a| a.project(&DVector::zeros(a.dim()))).collect();
    let mut exact_warm: Vec<Option<DVector<T>>> = vec![None; m];
    let mut lambda_sum = DVector::<T>::zeros(n);
    let need_exact = opts.measure_delta || local.needs_exact();

    for k in 1..=k_max {
        // step 1: local solves, in parallel
        let outputs: Vec<Result<(LocalOutput<T>, Option<DVector<T>>)>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let a = &problem.agents[i];
                let exact = if need_exact {
                    Some(a.solve_exact(&lambda_hat[i], exact_warm[i].as_ref().or(Some(&warm[i])))?)
                } else {
                    None
                };
                let q = LocalQuery {
                    agent: i,
                    k,
                    agents: m,
                    problem: a,
                    lambda: &lambda_hat[i],
                    lambda_prev: if k == 1 { &lambda_hat[i] } else { &used_prev[i] },
                    warm: &warm[i],
                    exact: exact.as_ref(),
                };
                let out = local.solve(&q)?;
                Ok((out, exact))
            })
            .collect();
        let mut z_tilde = Vec::with_capacity(m);
        let mut exact = Vec::with_capacity(m);
        let mut row_iter = Vec::with_capacity(m);
        let mut row_exact_iter = Vec::with_capacity(m);
        let mut row_beta = Vec::with_capacity(m);
        let mut alpha = None;
        for (i, o) in outputs.into_iter().enumerate() {
            let (out, ex) = o?;
            let violation = problem.agents[i].violation(&out.z);
            if violation > real::<T>(1e-10) {
                return Err(Error::InfeasibleLocal { agent: i, k, violation: to_f64(violation) });
            }
            row_iter.push(out.iterations);
            row_exact_iter.push(out.exact_iterations);
            row_beta.push(out.beta);
            alpha = alpha.or(out.alpha);
            z_tilde.push(out.z);
            exact.push(ex);
        }

        // step 2–3: exchange copies and average each block at its owner
        let blocks: Vec<Result<DVector<T>>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut acc = DVector::zeros(maps.block_dims()[i]);
                for &j in maps.neighbors(i) {
                    let zj = bus.read(i, j, &z_tilde)?;
                    let r = maps.copy_range(j, i).expect("neighbour holds a copy");
                    acc += zj.rows(r.start, r.len());
                }
                Ok(acc / from_usize::<T>(maps.copies(i)))
            })
            .collect();
        let blocks: Vec<DVector<T>> = blocks.into_iter().collect::<Result<_>>()?;

        // step 4–5: exchange averages and update the local multipliers
        let updates: Vec<Result<DVector<T>>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut ev = DVector::zeros(maps.local_dim(i));
                let mut off = 0;
                for &j in maps.neighbors(i) {
                    let b = bus.read(i, j, &blocks)?;
                    ev.rows_mut(off, b.len()).copy_from(b);
                    off += b.len();
                }
                Ok(&lambda_hat[i] + (ev - &z_tilde[i]) * tau)
            })
            .collect();
        let new_lambda: Vec<DVector<T>> = updates.into_iter().collect::<Result<_>>()?;

        for i in 0..m {
            used_prev[i] = lambda_hat[i].clone();
        }
        let lambda_prev = std::mem::replace(&mut lambda, new_lambda);
        lambda_hat = match algorithm {
            Algorithm::Ama => lambda.clone(),
            Algorithm::Fama => {
                let beta = from_usize::<T>(k - 1) / from_usize::<T>(k + 2);
                lambda.iter().zip(&lambda_prev).map(|(l, lp)| l + (l - lp) * beta).collect()
            }
        };

        // recording
        let z_stack = maps.stack(&z_tilde);
        let lambda_stack = maps.stack(&lambda);
        let et = check_null_multiplier(&lambda, maps);
        tr.et_lambda_inf.push(et);
        let (delta_stack, agent_delta) = if need_exact {
            let d: Vec<DVector<T>> = z_tilde.iter().zip(&exact).map(|(z, e)| z - e.as_ref().unwrap()).collect();
            let norms = d.iter().map(|v| v.norm()).collect();
            (maps.stack(&d), norms)
        } else {
            (DVector::zeros(n), Vec::new())
        };
        let dn = delta_stack.norm();
        tr.trace.delta_norm.push(dn);
        tr.trace.a_delta_norm.push(dn);
        tr.trace.theta_norm.push(T::zero());
        tr.trace.b_theta_norm.push(T::zero());
        tr.trace.x_feasible.push(true);
        tr.trace.z_feasible.push(true);
        tr.trace.lambda_in_domain.push(et <= tol);
        tr.agent_delta.push(agent_delta);
        tr.iterations.push(row_iter);
        tr.exact_iterations.push(row_exact_iter);
        tr.beta.push(row_beta);
        tr.alpha.push(alpha);
        lambda_sum += &lambda_stack;
        if opts.record_dual {
            tr.trace.dual.push(network_dual(problem, &maps.unstack(&lambda_stack), tol)?);
            let avg = maps.unstack(&(&lambda_sum / from_usize::<T>(k)));
            tr.trace.dual_avg.push(network_dual(problem, &avg, tol)?);
        }
        let v = maps.consensus(&z_tilde);
        if opts.keep_iterates {
            tr.trace.lambda.push(lambda_stack.clone());
            tr.trace.lambda_hat.push(maps.stack(&lambda_hat));
            tr.trace.x.push(z_stack.clone());
            tr.trace.z.push(v.clone());
            tr.trace.delta.push(delta_stack);
            tr.trace.theta.push(DVector::zeros(maps.global_dim()));
        }
        tr.trace.last_x = z_stack;
        tr.trace.last_z = v;
        tr.trace.last_lambda = lambda_stack;
        for i in 0..m {
            exact_warm[i] = exact[i].take();
        }
        warm = z_tilde;
    }
    tr.access_log = bus.take_log();
    Ok(tr)
}

/// `D(λ) = Σ_i min_{z_i ∈ C_i} f_i(z_i) − λ_iᵀz_i`, or `−∞` when `Eᵀλ ≠ 0`.
pub fn network_dual<T: Real>(problem: &NetworkProblem<T>, lambda: &[DVector<T>], tol: T) -> Result<Extended<T>> {
    if check_null_multiplier(lambda, &problem.maps) > tol {
        return Ok(Extended::NegInf);
    }
    let parts: Vec<Result<T>> = (0..problem.len())
        .into_par_iter()
        .map(|i| {
            let a = &problem.agents[i];
            let z = a.solve_exact(&lambda[i], None)?;
            Ok(a.lagrangian(&z, &lambda[i]))
        })
        .collect();
    let mut acc = T::zero();
    for p in parts {
        acc += p?;
    }
    Ok(Extended::Finite(acc))
}

pub fn run_distributed_iama<T: Real>(
    problem: &NetworkProblem<T>,
    local: &dyn LocalSolver<T>,
    tau: T,
    k_max: usize,
) -> Result<DistributedTrace<T>> {
    run_distributed(problem, local, tau, k_max, Algorithm::Ama, &DistributedOptions::default())
}

pub fn run_distributed_ifama<T: Real>(
    problem: &NetworkProblem<T>,
    local: &dyn LocalSolver<T>,
    tau: T,
    k_max: usize,
) -> Result<DistributedTrace<T>> {
    run_distributed(problem, local, tau, k_max, Algorithm::Fama, &DistributedOptions::default())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributedBound {
    /// Averaged-multiplier dual gap of distributed AMA.
    AmaGap,
    /// Multiplier distance of distributed AMA with quadratic agents.
    AmaDistance,
    /// Dual gap of distributed FAMA, with the factor `M`.
    FamaGap,
    /// As `FamaGap` without the factor `M` on the error sum.
    FamaGapUnscaled,
}

#[derive(Clone, Copy, Debug)]
pub struct DistributedConstants<T> {
    pub l: T,
    pub gamma: T,
    pub agents: usize,
    pub dist0: T,
}

/// Distributed complexity bounds on the stacked error norms `‖δ^p‖`, `p = 1..k`.
pub fn distributed_bound<T: Real>(k: usize, variant: DistributedBound, c: &DistributedConstants<T>, delta: &[T]) -> Result<T> {
    if k == 0 {
        return Err(Error::InvalidParameter("bound needs k ≥ 1".into()));
    }
    if delta.len() < k {
        return Err(Error::Dimension(format!("error series shorter than k = {k}")));
    }
    let two = real::<T>(2.0);
    let kf = from_usize::<T>(k);
    Ok(match variant {
        DistributedBound::AmaGap => {
            let s = delta[..k].iter().fold(T::zero(), |a, &d| a + d);
            let inner = c.dist0 + two * s / c.l;
            c.l / (two * kf) * inner * inner
        }
        DistributedBound::AmaDistance => {
            // the p = 0 term has no solve behind it, so δ⁰ = 0
            let q = (T::one() - c.gamma).max(T::zero());
            let mut acc = T::zero();
            for p in 1..=k {
                acc += q.powi((k - p) as i32) * delta[p - 1] / c.l;
            }
            q.powi(k as i32 + 1) * c.dist0 + acc
        }
        DistributedBound::FamaGap | DistributedBound::FamaGapUnscaled => {
            let mf = if variant == DistributedBound::FamaGap { from_usize::<T>(c.agents) } else { T::one() };
            let s = delta[..k].iter().enumerate().fold(T::zero(), |a, (p, &d)| a + from_usize::<T>(p + 1) * d);
            let inner = c.dist0 + two * mf * s / c.l;
            two * c.l / ((kf + T::one()) * (kf + T::one())) * inner * inner
        }
    })
}

/// On-disk instance: local quadratics, boxes, graph and block sizes.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InstanceFile {
    pub version: u32,
    pub block_dims: Vec<usize>,
    pub agents: Vec<AgentRecord>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AgentRecord {
    #[serde(rename = "H")]
    pub h_mat: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub box_lower: Vec<f64>,
    pub box_upper: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
}

pub const INSTANCE_VERSION: u32 = 1;

impl InstanceFile {
    pub fn from_problem(p: &NetworkProblem<f64>, meta: Option<serde_json::Value>) -> Self {
        InstanceFile {
            version: INSTANCE_VERSION,
            block_dims: p.maps.block_dims().to_vec(),
            agents: p
                .agents
                .iter()
                .map(|a| {
                    let h = a.quad().hessian();
                    let (lo, hi) = a.bounds();
                    AgentRecord {
                        h_mat: (0..h.nrows()).map(|r| h.row(r).iter().copied().collect()).collect(),
                        h: a.quad().linear().iter().copied().collect(),
                        box_lower: lo.iter().copied().collect(),
                        box_upper: hi.iter().copied().collect(),
                        constant: a.quad().constant(),
                    }
                })
                .collect(),
            edges: p.network.edges().into_iter().map(|(a, b)| [a, b]).collect(),
            meta,
        }
    }

    pub fn to_problem(&self) -> Result<NetworkProblem<f64>> {
        if self.version != INSTANCE_VERSION {
            return Err(Error::Format(format!("unsupported instance version {}", self.version)));
        }
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let network = Network::new(self.agents.len(), &edges)?;
        let maps = SelectionMap::new(&network, &self.block_dims)?;
        let mut agents = Vec::with_capacity(self.agents.len());
        for (i, r) in self.agents.iter().enumerate() {
            let n = r.h.len();
            if r.h_mat.len() != n || r.h_mat.iter().any(|row| row.len() != n) {
                return Err(Error::Format(format!("agent {i}: H is not {n}x{n}")));
            }
            let h = DMatrix::from_fn(n, n, |a, b| r.h_mat[a][b]);
            let quad = QuadraticFn::new(h, DVector::from_vec(r.h.clone()))?.with_constant(r.constant);
            agents.push(AgentProblem::new(
                quad,
                DVector::from_vec(r.box_lower.clone()),
                DVector::from_vec(r.box_upper.clone()),
            )?);
        }
        NetworkProblem::new(agents, network, maps)
    }
}
