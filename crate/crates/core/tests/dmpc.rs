mod common;

use common::{random_vector, rng};
use iama::ama::Algorithm;
use iama::distributed::{run_distributed, DistributedOptions, ExactLocal};
use iama::dmpc::*;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

fn small(m: usize, seed: u64) -> GeneratedInstance {
    let params = GeneratorParams {
        agents: m,
        horizon: 4,
        seed,
        neighbor_range: (1, 3),
        input_gain: 0.5,
        ..GeneratorParams::default()
    };
    generate_random_instance(&params).unwrap()
}

fn split_inputs(v: &DVector<f64>, ids: &[usize], nu: usize, n: usize) -> Vec<Vec<DVector<f64>>> {
    ids.iter()
        .map(|&j| (0..n).map(|t| v.rows(j * nu * n + t * nu, nu).into_owned()).collect())
        .collect()
}

#[test]
fn prediction_reproduces_simulation() {
    for seed in 0..4 {
        let g = small(4, seed);
        let n = g.spec.horizon;
        let nu = g.params.nu;
        let mut r = rng(seed);
        for _ in 0..10 {
            let v = random_vector(&mut r, g.problem.maps.global_dim(), 1.0);
            for (i, ag) in g.systems.iter().enumerate() {
                let ids = g.problem.network.neighbors(i);
                let (phi, gamma) = prediction_matrices(ag, n);
                let z = g.problem.maps.select(i, &v);
                let predicted = &phi * &ag.x0 + &gamma * &z;
                let sim = simulate(ag, &split_inputs(&v, ids, nu, n), n);
                for (t, x) in sim.iter().enumerate() {
                    let p = predicted.rows(t * ag.nx(), ag.nx());
                    assert!((p - x).amax() <= 1e-12 * (1.0 + x.amax()), "seed {seed} agent {i} t {t}");
                }
            }
        }
    }
}

#[test]
fn local_costs_sum_to_network_cost() {
    for m in 1..=4 {
        for seed in 0..3 {
            let g = small(m, 10 * m as u64 + seed);
            let mut r = rng(seed);
            for _ in 0..10 {
                let v = random_vector(&mut r, g.problem.maps.global_dim(), 1.0);
                let split = g.problem.objective(&v);
                let simulated = simulated_cost(&g.systems, &g.spec, &g.problem.network, &v);
                assert!((split - simulated).abs() <= 1e-10 * (1.0 + simulated.abs()), "M {m}: {split} vs {simulated}");
            }
        }
    }
}

#[test]
fn two_agents_weight_each_input_once() {
    // agent 0 is driven by both inputs, agent 1 only by its own
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let sys = vec![
        LtiAgent {
            a: one(0.5),
            b: vec![(0, one(1.0)), (1, one(0.7))],
            a_coupling: Vec::new(),
            x0: DVector::from_element(1, 1.0),
            u_lower: DVector::from_element(1, -1.0),
            u_upper: DVector::from_element(1, 1.0),
        },
        LtiAgent {
            a: one(-0.3),
            b: vec![(0, one(0.0)), (1, one(2.0))],
            a_coupling: Vec::new(),
            x0: DVector::from_element(1, -1.0),
            u_lower: DVector::from_element(1, -1.0),
            u_upper: DVector::from_element(1, 1.0),
        },
    ];
    let net = iama::distributed::Network::new(2, &[(0, 1)]).unwrap();
    let spec = MpcSpec::identity(1, 1, 1);
    let p = condense(&sys, &spec, &net).unwrap();
    // N = 1: x0(1) = 0.5 + u0 + 0.7u1, x1(1) = 0.3 + 2u1
    let cost = |u0: f64, u1: f64| {
        let x0 = 0.5 + u0 + 0.7 * u1;
        let x1 = 0.3 + 2.0 * u1;
        0.5 * (1.0 + x0 * x0 + 1.0 + x1 * x1 + u0 * u0 + u1 * u1)
    };
    for (u0, u1) in [(0.0, 0.0), (0.3, -0.6), (-1.0, 1.0)] {
        let v = DVector::from_vec(vec![u0, u1]);
        assert!((p.objective(&v) - cost(u0, u1)).abs() < 1e-14);
    }
}

#[test]
fn local_hessians_are_positive_definite() {
    let g = generate_random_instance(&GeneratorParams::default()).unwrap();
    for (i, a) in g.problem.agents.iter().enumerate() {
        let e = SymmetricEigen::new(a.quad().hessian().clone()).eigenvalues;
        assert!(e.min() > 0.0, "agent {i}: λ_min = {}", e.min());
    }
    assert!(g.active_fraction >= 0.7);
    assert_eq!(g.problem.len(), 40);
    assert_eq!(g.problem.agents[0].dim() % (2 * 11), 0);
}

#[test]
fn distributed_limit_matches_monolithic_solve() {
    for seed in 0..3 {
        let g = small(4, 100 + seed);
        let p = &g.problem;
        let tau = 0.99 * p.sigma_f();
        let opts = DistributedOptions { measure_delta: false, keep_iterates: false, ..Default::default() };
        let tr = run_distributed(p, &ExactLocal, tau, 3000, Algorithm::Ama, &opts).unwrap();
        let mono = monolithic_solution(p, None).unwrap();
        let d = (&tr.trace.last_z - &mono).amax();
        assert!(d <= 1e-6, "seed {seed}: ‖u − u⋆‖∞ = {d:e}");
    }
}

#[test]
fn explicit_activation_scale_is_used() {
    let params = GeneratorParams { agents: 3, horizon: 3, activation_scale: Some(0.0), ..GeneratorParams::default() };
    let g = generate_random_instance(&params).unwrap();
    assert_eq!(g.activation_scale, 0.0);
    assert!(g.u_star.amax() < 1e-12);
    assert!(g.systems.iter().all(|s| s.x0.amax() == 0.0));
}

#[test]
fn invalid_parameters_rejected() {
    let bad = GeneratorParams { agents: 0, ..GeneratorParams::default() };
    assert!(generate_random_instance(&bad).is_err());
    let bad = GeneratorParams { u_box: (0.3, -0.4), ..GeneratorParams::default() };
    assert!(generate_random_instance(&bad).is_err());
    let bad = GeneratorParams { resample_budget: 0, ..GeneratorParams::default() };
    assert!(generate_random_instance(&bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn condensed_cost_matches_simulation(seed in 0u64..1000, m in 1usize..=4, scale in 0.1f64..3.0) {
        let g = small(m, seed);
        let mut r = rng(seed ^ 0xabcd);
        let v = random_vector(&mut r, g.problem.maps.global_dim(), scale);
        let a = g.problem.objective(&v);
        let b = simulated_cost(&g.systems, &g.spec, &g.problem.network, &v);
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
    }
}
