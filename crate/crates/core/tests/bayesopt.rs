mod oracles;

use std::sync::Arc;

use mpc_i4c::bayesopt::*;
use mpc_i4c::par::Execution;
use mpc_i4c::rng::{stream_rng, Stream};
use mpc_i4c::RunStatus;
use oracles::monte_carlo_ei;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn plane() -> SearchSpace {
    SearchSpace {
        theta: vec![(-1.0, 1.0)],
        mu: vec![(-1.0, 1.0)],
        np: (1, 1),
    }
}

fn quadratic(dp: &DesignPoint) -> Evaluation {
    let c = (dp.theta[0] - 0.3).powi(2) + (dp.mu[0] + 0.2).powi(2);
    Evaluation { cost: c, status: RunStatus::Completed }
}

fn small_config(seed: u64, max_iter: usize) -> BoConfig {
    BoConfig {
        n_init: 5,
        max_iter,
        acquisition: AcquisitionSearch { probes: 500, ..AcquisitionSearch::default() },
        ..BoConfig::benchmark(seed)
    }
}

#[test]
fn expected_improvement_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let mean = rng.random_range(-2.0..2.0);
        let std = rng.random_range(0.05..2.0);
        let z = rng.random_range(-1.0..3.0);
        let j_best = mean + z * std;
        let exact = expected_improvement(mean, std, j_best);
        let mc = monte_carlo_ei(mean, std, j_best, 1_000_000, &mut rng);
        assert!((exact - mc).abs() <= 0.01 * exact, "{exact} vs {mc}");
    }
    assert_eq!(expected_improvement(0.0, 0.0, 1.0), 0.0);
}

#[test]
fn acquisition_beats_fresh_uniform_probes() {
    let space = SearchSpace::benchmark();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..3 {
        let n = 40;
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut u: Vec<f64> = (0..space.dim()).map(|_| rng.random::<f64>()).collect();
                space.round_unit(&mut u);
                u
            })
            .collect();
        let costs: Vec<f64> = pts
            .iter()
            .map(|u| u.iter().map(|v| (v - 0.3).powi(2)).sum::<f64>() + 0.05 * rng.random::<f64>())
            .collect();
        let fit = mpc_i4c::gp::optimize_hyperparams(&pts, &costs, None, case, &Default::default()).unwrap();
        let gp = mpc_i4c::gp::fit(&pts, &costs, &fit.hyper).unwrap();
        let j_best = costs.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut acq_rng = stream_rng(case, Stream::Acquisition, 0);
        let res = maximize_acquisition(&gp, &space, j_best, &mut acq_rng, &AcquisitionSearch::default(), None);
        let fresh = (0..10_000)
            .map(|_| {
                let mut u: Vec<f64> = (0..space.dim()).map(|_| rng.random::<f64>()).collect();
                space.round_unit(&mut u);
                ei_at(&gp, &u, j_best)
            })
            .fold(0.0, f64::max);
        assert!(res.ei >= fresh, "case {case}: {} < {fresh}", res.ei);
    }
}

#[test]
fn quadratic_is_found_within_forty_evaluations() {
    for seed in 0..3 {
        let r = run_bo(|_, dp| quadratic(dp), &plane(), &small_config(seed, 40)).unwrap();
        assert!(r.best.cost < 0.05, "seed {seed}: {}", r.best.cost);
        assert_eq!(r.dataset.len(), 40);
    }
}

#[test]
fn initial_design_is_uniform() {
    let space = SearchSpace {
        theta: vec![(-500.0, 500.0), (0.0, 10.0)],
        mu: vec![(-1.0, 3.0)],
        np: (10, 20),
    };
    let mut rng = stream_rng(5, Stream::InitialDesign, 0);
    let n = 20_000;
    let pts = initial_design(&space, n, &mut rng);
    let mean = |f: &dyn Fn(&DesignPoint) -> f64| pts.iter().map(f).sum::<f64>() / n as f64;
    let check = |m: f64, lo: f64, hi: f64| {
        let sd = (hi - lo) / 12f64.sqrt() / (n as f64).sqrt();
        assert!((m - 0.5 * (lo + hi)).abs() < 4.0 * sd, "mean {m} for [{lo}, {hi}]");
    };
    check(mean(&|p| p.theta[0]), -500.0, 500.0);
    check(mean(&|p| p.theta[1]), 0.0, 10.0);
    check(mean(&|p| p.mu[0]), -1.0, 3.0);
    let np_mean = mean(&|p| p.np as f64);
    assert!((np_mean - 15.0).abs() < 4.0 * (120f64 / 12.0).sqrt() / (n as f64).sqrt());
    assert!(pts.iter().all(|p| space.contains(p)));
    for k in 10..=20 {
        assert!(pts.iter().any(|p| p.np == k));
    }
}

#[test]
fn campaigns_are_deterministic_and_execution_independent() {
    let run = |execution| {
        let mut cfg = small_config(11, 15);
        cfg.acquisition.execution = execution;
        cfg.hyper_search.execution = execution;
        run_bo(|_, dp| quadratic(dp), &plane(), &cfg).unwrap().dataset
    };
    let a = run(Execution::Parallel);
    assert_eq!(a, run(Execution::Parallel));
    assert_eq!(a, run(Execution::Sequential));
}

#[test]
fn proposals_respect_feasibility() {
    let feasible: Feasibility = Arc::new(|dp: &DesignPoint| dp.theta[0] + dp.mu[0] <= 0.0);
    let mut bo = BayesOpt::new(plane(), small_config(3, 25)).unwrap().with_feasibility(feasible.clone());
    let r = bo.run(|_, dp| quadratic(dp), |_| {});
    for rec in &r.dataset.records[5..] {
        assert!(feasible(&rec.point), "{:?}", rec.point);
    }
}

#[test]
fn resumed_campaign_matches_uninterrupted_one() {
    let cfg = small_config(8, 20);
    let full = run_bo(|_, dp| quadratic(dp), &plane(), &cfg).unwrap();
    let mut first = BayesOpt::new(plane(), BoConfig { max_iter: 12, ..cfg.clone() }).unwrap();
    let mut last_hyper = None;
    first.run(|_, dp| quadratic(dp), |info| last_hyper = info.hyper.or(last_hyper));
    let mut resumed = BayesOpt::resume(plane(), cfg, first.dataset().clone(), last_hyper).unwrap();
    let r = resumed.run(|_, dp| quadratic(dp), |_| {});
    assert_eq!(r.dataset, full.dataset);
}

#[test]
fn early_stop_fires_on_flat_objective() {
    let cfg = BoConfig {
        early_stop: Some(EarlyStop { window: 10, tolerance: 1e-3 }),
        ..small_config(1, 100)
    };
    let r = run_bo(|_, _| Evaluation { cost: 1.0, status: RunStatus::Completed }, &plane(), &cfg).unwrap();
    assert!(r.stopped_early);
    assert_eq!(r.dataset.len(), 11);
}

proptest! {
    #[test]
    fn ei_is_nonnegative_and_monotone_in_best(mean in -5.0..5.0f64, std in 0.0..3.0f64, j in -5.0..5.0f64, dj in 0.0..2.0f64) {
        let a = expected_improvement(mean, std, j);
        let b = expected_improvement(mean, std, j + dj);
        prop_assert!(a >= 0.0);
        prop_assert!(b >= a - 1e-15);
    }

    #[test]
    fn running_best_never_increases(costs in proptest::collection::vec(-10.0..10.0f64, 1..60)) {
        let ds = BoDataset {
            records: costs
                .iter()
                .enumerate()
                .map(|(i, &c)| BoRecord {
                    index: i,
                    point: DesignPoint { theta: vec![0.0], mu: vec![0.0], np: 1 },
                    cost: c,
                    status: RunStatus::Completed,
                })
                .collect(),
        };
        let rb = ds.running_best();
        prop_assert!(rb.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(*rb.last().unwrap(), ds.best().unwrap().cost);
    }
}
