mod common;

use common::{random_network, random_spd, random_vector, ring, rng};
use iama::ama::Algorithm;
use iama::certify::*;
use iama::distributed::{run_distributed, AgentProblem, DistributedOptions};
use iama::QuadraticFn;
use nalgebra::{DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;

fn certified(p: &iama::distributed::NetworkProblem<f64>, rate: DecreaseRate, alg: Algorithm, k: usize) -> iama::distributed::DistributedTrace<f64> {
    let alpha = DecreaseFunction::new(default_alpha0(p).unwrap(), rate).unwrap();
    let local = CertifiedLocal::new(p, alpha, true).unwrap();
    run_distributed(p, &local, 0.99 * p.sigma_f(), k, alg, &DistributedOptions::default()).unwrap()
}

#[test]
fn certified_errors_stay_below_decrease_function() {
    let rates = [DecreaseRate::Power { p: 1.0 }, DecreaseRate::Power { p: 2.0 }, DecreaseRate::Geometric { r: 0.95 }];
    for seed in 0..3 {
        let p = random_network(seed, 5, &ring(5), 2, Some(0.5));
        for rate in rates {
            for alg in [Algorithm::Ama, Algorithm::Fama] {
                let tr = certified(&p, rate, alg, 60);
                let log = certification_log(&tr);
                assert_eq!(log.len(), 60 * 5);
                for r in &log {
                    let d = r.delta_measured.unwrap();
                    assert!(d <= r.alpha_k, "seed {seed} {rate:?} {alg:?} k {} agent {}: {d:e} > {:e}", r.k, r.agent, r.alpha_k);
                    assert!(r.j_certified >= r.j_exact.unwrap());
                }
                assert!(tr.et_lambda_inf.iter().all(|&e| e <= 1e-12));
            }
        }
    }
}

#[test]
fn first_outer_step_needs_no_inner_iterations() {
    let p = random_network(2, 4, &ring(4), 2, Some(0.5));
    let tr = certified(&p, DecreaseRate::Power { p: 1.0 }, Algorithm::Ama, 2);
    assert!(tr.iterations[0].iter().all(|&j| j == Some(0)));
    assert!(tr.beta[0].iter().all(|&b| b == Some(0.0)));
}

#[test]
fn warm_start_chains_between_outer_steps() {
    let p = random_network(3, 3, &ring(3), 2, Some(0.4));
    let tr = certified(&p, DecreaseRate::Power { p: 2.0 }, Algorithm::Ama, 4);
    let states: Vec<CertState<f64>> = p.agents.iter().map(|a| CertState::for_agent(a).unwrap()).collect();
    for k in 1..4 {
        for i in 0..3 {
            let range = p.maps.stacked_range(i);
            let lambda = tr.trace.lambda[k - 1].rows(range.start, range.len()).into_owned();
            let warm = tr.trace.x[k - 1].rows(range.start, range.len()).into_owned();
            let j = tr.iterations[k][i].unwrap();
            let z = local_pg(&p.agents[i], &lambda, &warm, j, states[i].tau).unwrap();
            assert_eq!(z, tr.trace.x[k].rows(range.start, range.len()).into_owned(), "k {} agent {i}", k + 1);
        }
    }
}

fn boxed_agent(seed: u64, n: usize) -> AgentProblem<f64> {
    let mut r = rng(seed);
    let h = random_spd(&mut r, n, 0.2, 4.0);
    let lin = random_vector(&mut r, n, 1.0);
    let lo = DVector::from_fn(n, |_, _| -r.random_range(0.1..1.0));
    let hi = DVector::from_fn(n, |_, _| r.random_range(0.1..1.0));
    AgentProblem::new(QuadraticFn::new(h, lin).unwrap(), lo, hi).unwrap()
}

#[test]
fn argmin_is_lipschitz_in_the_multiplier() {
    for seed in 0..3 {
        let a = boxed_agent(seed, 6);
        let lz = lipschitz_of_argmin(a.quad().hessian()).unwrap();
        let lmin = SymmetricEigen::new(a.quad().hessian().clone()).eigenvalues.min();
        assert!((lz - 1.0 / lmin).abs() <= 1e-12 * lz);
        let mut r = rng(1000 + seed);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let l1 = random_vector(&mut r, 6, 3.0);
            let spread = r.random_range(1e-3..3.0);
            let l2 = &l1 + random_vector(&mut r, 6, spread);
            let z1 = a.solve_exact(&l1, None).unwrap();
            let z2 = a.solve_exact(&l2, None).unwrap();
            worst = worst.max((z1 - z2).norm() / (l1 - l2).norm());
        }
        assert!(worst <= lz * (1.0 + 1e-9), "seed {seed}: ratio {worst} > {lz}");
    }
}

#[test]
fn projected_gradient_contracts_at_step_rate() {
    for seed in 0..10 {
        let a = boxed_agent(50 + seed, 8);
        let s = CertState::for_agent(&a).unwrap();
        let mut r = rng(seed);
        let lambda = random_vector(&mut r, 8, 2.0);
        let star = a.solve_exact(&lambda, None).unwrap();
        let warm = a.project(&random_vector(&mut r, 8, 1.0));
        let d0 = (&warm - &star).norm();
        for j in [1usize, 3, 10, 30] {
            let z = local_pg(&a, &lambda, &warm, j, s.tau).unwrap();
            let bound = (1.0 - s.gamma).powi(j as i32) * d0;
            assert!((z - &star).norm() <= bound + 1e-12, "seed {seed} j {j}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn certificate_dominates_exact_count(seed in 0u64..10_000, k in 2usize..40, beta in 0.0f64..2.0) {
        let a = boxed_agent(seed, 5);
        let s = CertState::for_agent(&a).unwrap();
        let mut r = rng(seed);
        let prev = random_vector(&mut r, 5, 1.0);
        let warm = a.solve_exact(&prev, None).unwrap();
        let dir = random_vector(&mut r, 5, 1.0);
        let lambda = &prev + dir.normalize() * beta;
        let alpha = DecreaseFunction::new(1.0, DecreaseRate::Power { p: 1.0 }).unwrap();
        let (ak, ap) = (alpha.value(k), alpha.value(k - 1));
        // the warm start is the previous exact optimum, so its error is 0 ≤ α^{k−1}
        let j = certify_iterations(ak, ap, beta, s.gamma, s.lz).unwrap();
        let star = a.solve_exact(&lambda, None).unwrap();
        let je = exact_min_iterations(&a, &lambda, &warm, ak, s.tau, Some(&star)).unwrap();
        prop_assert!(j >= je);
        let z = local_pg(&a, &lambda, &warm, j, s.tau).unwrap();
        prop_assert!((z - star).norm() <= ak * (1.0 + 1e-9));
    }
}
