//! Bayesian optimization with expected improvement.
//!
//! The loop draws `N_in` random designs, then repeatedly fits a GP to every
//! recorded cost (re-optimizing its hyperparameters), maximizes expected
//! improvement over the search box and evaluates the objective at the
//! maximizer. The horizon coordinate is integer: it is relaxed to a
//! continuous coordinate during search and rounded before every evaluation,
//! both of the acquisition and of the objective.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{self, GpHyperparams, GpSurrogate, HyperSearch};
use crate::optim::pattern_search;
use crate::par::{self, Execution};
use crate::rng::{stream_rng, Stream};
use crate::RunStatus;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoError {
    #[error("invalid search space: {0}")]
    Space(String),
    #[error("invalid BO configuration: {0}")]
    Config(String),
    #[error("resume dataset does not match the search space: {0}")]
    Resume(String),
}

/// Tunable vector: PID gains, prediction-model entries and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub theta: Vec<f64>,
    pub mu: Vec<f64>,
    pub np: usize,
}

/// Box for the continuous coordinates and an integer range for `N_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub theta: Vec<(f64, f64)>,
    pub mu: Vec<(f64, f64)>,
    /// Inclusive horizon range.
    pub np: (usize, usize),
}

impl SearchSpace {
    /// `θ ∈ [−500, 500]³`, `μ ∈ [−500, 500]⁶`, `N_p ∈ {10, …, 20}`.
    pub fn benchmark() -> Self {
        Self {
            theta: vec![(-500.0, 500.0); 3],
            mu: vec![(-500.0, 500.0); 6],
            np: (10, 20),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len() + self.mu.len() + 1
    }

    pub fn validate(&self) -> Result<(), BoError> {
        for (i, (lo, hi)) in self.theta.iter().chain(&self.mu).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(BoError::Space(format!("coordinate {i}: need finite lower < upper")));
            }
        }
        if self.np.0 > self.np.1 || self.np.0 == 0 {
            return Err(BoError::Space("horizon range must be nonempty and >= 1".into()));
        }
        Ok(())
    }

    fn continuous(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.theta.iter().chain(&self.mu)
    }

    fn np_span(&self) -> f64 {
        (self.np.1 - self.np.0) as f64
    }

    /// Map a design into the unit cube.
    pub fn to_unit(&self, dp: &DesignPoint) -> Vec<f64> {
        let mut u: Vec<f64> = dp
            .theta
            .iter()
            .chain(&dp.mu)
            .zip(self.continuous())
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect();
        let span = self.np_span();
        u.push(if span > 0.0 { (dp.np - self.np.0) as f64 / span } else { 0.5 });
        u
    }

    /// Snap the horizon coordinate of a unit-cube point to its integer grid.
    pub fn round_unit(&self, u: &mut [f64]) {
        let span = self.np_span();
        let last = u.len() - 1;
        u[last] = if span > 0.0 {
            (u[last].clamp(0.0, 1.0) * span).round() / span
        } else {
            0.5
        };
    }

    /// Inverse of [`to_unit`](Self::to_unit); the horizon is rounded to the
    /// nearest integer in range.
    pub fn from_unit(&self, u: &[f64]) -> DesignPoint {
        let nt = self.theta.len();
        let vals: Vec<f64> = u
            .iter()
            .zip(self.continuous())
            .map(|(x, (lo, hi))| (lo + x.clamp(0.0, 1.0) * (hi - lo)).clamp(*lo, *hi))
            .collect();
        let span = self.np_span();
        let step = (u[u.len() - 1].clamp(0.0, 1.0) * span).round() as usize;
        DesignPoint {
            theta: vals[..nt].to_vec(),
            mu: vals[nt..].to_vec(),
            np: (self.np.0 + step).min(self.np.1),
        }
    }

    pub fn contains(&self, dp: &DesignPoint) -> bool {
        dp.theta.len() == self.theta.len()
            && dp.mu.len() == self.mu.len()
            && dp
                .theta
                .iter()
                .chain(&dp.mu)
                .zip(self.continuous())
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
            && self.np.0 <= dp.np
            && dp.np <= self.np.1
    }

    /// One uniform draw: independent per continuous coordinate, uniform
    /// integer horizon.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DesignPoint {
        let mut draw = |b: &(f64, f64)| rng.random_range(b.0..=b.1);
        let theta = self.theta.iter().map(&mut draw).collect();
        let mu = self.mu.iter().map(&mut draw).collect();
        let np = rng.random_range(self.np.0..=self.np.1);
        DesignPoint { theta, mu, np }
    }
}

/// A-priori admissibility of a design, known without running it.
pub type Feasibility = Arc<dyn Fn(&DesignPoint) -> bool + Send + Sync>;

/// `N_in` independent uniform designs.
pub fn initial_design(space: &SearchSpace, n_init: usize, rng: &mut ChaCha8Rng) -> Vec<DesignPoint> {
    (0..n_init).map(|_| space.sample(rng)).collect()
}

/// Measured cost of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub cost: f64,
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoRecord {
    pub index: usize,
    pub point: DesignPoint,
    pub cost: f64,
    pub status: RunStatus,
}

/// Append-only list of evaluated designs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BoDataset {
    pub records: Vec<BoRecord>,
}

impl BoDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Lowest-cost record; earliest on ties.
    pub fn best(&self) -> Option<&BoRecord> {
        self.records
            .iter()
            .fold(None, |acc: Option<&BoRecord>, r| match acc {
                Some(b) if b.cost <= r.cost => Some(b),
                _ => Some(r),
            })
    }

    /// Running minimum of the cost after each record.
    pub fn running_best(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.records
            .iter()
            .map(|r| {
                best = best.min(r.cost);
                best
            })
            .collect()
    }
}

/// Stop when the best cost improved by at most `tolerance` over the last
/// `window` evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub window: usize,
    pub tolerance: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            window: 100,
            tolerance: 1e-3,
        }
    }
}

/// Acquisition maximization settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionSearch {
    /// Uniform probes per iteration.
    pub probes: usize,
    /// Probes refined by pattern search.
    pub refine_top: usize,
    pub refine_iterations: usize,
    /// Initial pattern step as a fraction of the unit box.
    pub refine_step: f64,
    pub execution: Execution,
}

impl Default for AcquisitionSearch {
    fn default() -> Self {
        Self {
            probes: 2000,
            refine_top: 5,
            refine_iterations: 50,
            refine_step: 0.05,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoConfig {
    /// Initial random experiments `N_in`.
    pub n_init: usize,
    /// Total experiment budget `i_max`.
    pub max_iter: usize,
    pub seed: u64,
    /// Cost recorded when the objective reports a non-finite value.
    pub cap_cost: f64,
    pub early_stop: Option<EarlyStop>,
    pub acquisition: AcquisitionSearch,
    pub hyper_search: HyperSearch,
}

impl BoConfig {
    pub fn benchmark(seed: u64) -> Self {
        Self {
            n_init: 10,
            max_iter: 320,
            seed,
            cap_cost: crate::cost::DEFAULT_CAP_COST,
            early_stop: None,
            acquisition: AcquisitionSearch::default(),
            hyper_search: HyperSearch::default(),
        }
    }

    pub fn validate(&self) -> Result<(), BoError> {
        if self.n_init == 0 || self.n_init > self.max_iter {
            return Err(BoError::Config("require 1 <= n_init <= max_iter".into()));
        }
        if !self.cap_cost.is_finite() {
            return Err(BoError::Config("cap_cost must be finite".into()));
        }
        if self.acquisition.probes == 0 {
            return Err(BoError::Config("acquisition probes must be >= 1".into()));
        }
        Ok(())
    }
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF through the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `EI = (J⁻ − m) Ψ(Z) + σ ψ(Z)` with `Z = (J⁻ − m)/σ`; zero when `σ = 0`.
pub fn expected_improvement(mean: f64, std: f64, j_best: f64) -> f64 {
    if !(std > 0.0) {
        return 0.0;
    }
    let diff = j_best - mean;
    let z = diff / std;
    (diff * normal_cdf(z) + std * normal_pdf(z)).max(0.0)
}

/// EI of the GP posterior at a unit-cube point.
pub fn ei_at(gp: &GpSurrogate, x: &[f64], j_best: f64) -> f64 {
    let post = gp.predict(x);
    expected_improvement(post.mean, post.std(), j_best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionResult {
    pub point: DesignPoint,
    pub unit: Vec<f64>,
    pub ei: f64,
    /// `true` when every EI value vanished and a random design was returned.
    pub exploration_fallback: bool,
}

/// Best of `R` uniform probes and pattern-search refinements of the top
/// probes. The result's EI is never below any probe's EI.
///
/// With `feasible`, EI is taken as zero at inadmissible designs, and the
/// exploration fallback draws an admissible point when it finds one.
pub fn maximize_acquisition(
    gp: &GpSurrogate,
    space: &SearchSpace,
    j_best: f64,
    rng: &mut ChaCha8Rng,
    search: &AcquisitionSearch,
    feasible: Option<&Feasibility>,
) -> AcquisitionResult {
    let d = space.dim();
    let acq = |u: &[f64]| match feasible {
        Some(f) if !f(&space.from_unit(u)) => 0.0,
        _ => ei_at(gp, u, j_best),
    };
    let probes: Vec<Vec<f64>> = (0..search.probes)
        .map(|_| {
            let mut u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            space.round_unit(&mut u);
            u
        })
        .collect();
    let probe_ei = par::map(search.execution, &probes, |u| acq(u));

    let mut order: Vec<usize> = (0..probes.len()).collect();
    order.sort_by(|&a, &b| probe_ei[b].total_cmp(&probe_ei[a]).then(a.cmp(&b)));
    let top: Vec<usize> = order.into_iter().take(search.refine_top).collect();

    let lo = vec![0.0; d];
    let hi = vec![1.0; d];
    let refined = par::map(search.execution, &top, |&i| {
        pattern_search(
            |u| -acq(u),
            |u| space.round_unit(u),
            &probes[i],
            &lo,
            &hi,
            search.refine_step,
            search.refine_iterations,
        )
    });

    let mut best_unit = probes[0].clone();
    let mut best_ei = probe_ei[0];
    for (u, &e) in probes.iter().zip(&probe_ei) {
        if e > best_ei {
            best_ei = e;
            best_unit = u.clone();
        }
    }
    for r in &refined {
        if -r.value > best_ei {
            best_ei = -r.value;
            best_unit = r.x.clone();
        }
    }

    if !(best_ei > 0.0) {
        let point = sample_admissible(space, rng, feasible);
        return AcquisitionResult {
            unit: space.to_unit(&point),
            point,
            ei: 0.0,
            exploration_fallback: true,
        };
    }
    AcquisitionResult {
        point: space.from_unit(&best_unit),
        unit: best_unit,
        ei: best_ei,
        exploration_fallback: false,
    }
}

/// Tries this many uniform draws before giving up on admissibility.
const ADMISSIBLE_TRIES: usize = 10_000;

fn sample_admissible(space: &SearchSpace, rng: &mut ChaCha8Rng, feasible: Option<&Feasibility>) -> DesignPoint {
    let mut point = space.sample(rng);
    if let Some(f) = feasible {
        for _ in 1..ADMISSIBLE_TRIES {
            if f(&point) {
                break;
            }
            point = space.sample(rng);
        }
    }
    point
}

/// What happened at one iteration, reported to observers.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationInfo {
    pub record: BoRecord,
    /// Hyperparameters in effect when this point was proposed (none during
    /// the initial design).
    pub hyper: Option<GpHyperparams>,
    /// Expected improvement at the proposed point.
    pub ei: Option<f64>,
    pub best_cost: f64,
    pub best_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoResult {
    pub best: BoRecord,
    pub dataset: BoDataset,
    pub hyper: Option<GpHyperparams>,
    pub stopped_early: bool,
}

/// Incremental driver, resumable from a recorded dataset.
#[derive(Clone)]
pub struct BayesOpt {
    space: SearchSpace,
    config: BoConfig,
    init: Vec<DesignPoint>,
    dataset: BoDataset,
    hyper: Option<GpHyperparams>,
    feasible: Option<Feasibility>,
}

impl fmt::Debug for BayesOpt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BayesOpt")
            .field("space", &self.space)
            .field("config", &self.config)
            .field("evaluated", &self.dataset.len())
            .field("hyper", &self.hyper)
            .field("constrained", &self.feasible.is_some())
            .finish()
    }
}

/// A proposal for the next experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub point: DesignPoint,
    pub hyper: Option<GpHyperparams>,
    pub ei: Option<f64>,
}

impl BayesOpt {
    pub fn new(space: SearchSpace, config: BoConfig) -> Result<Self, BoError> {
        space.validate()?;
        config.validate()?;
        let mut rng = stream_rng(config.seed, Stream::InitialDesign, 0);
        let init = initial_design(&space, config.n_init, &mut rng);
        Ok(Self {
            space,
            config,
            init,
            dataset: BoDataset::default(),
            hyper: None,
            feasible: None,
        })
    }

    /// Restrict acquisition to designs accepted by `feasible`. The initial
    /// design stays uniform over the whole box.
    pub fn with_feasibility(mut self, feasible: Feasibility) -> Self {
        self.feasible = Some(feasible);
        self
    }

    /// Continue from previously recorded experiments. `last_hyper` must be
    /// the hyperparameters of the last GP fit for an exact replay.
    pub fn resume(
        space: SearchSpace,
        config: BoConfig,
        dataset: BoDataset,
        last_hyper: Option<GpHyperparams>,
    ) -> Result<Self, BoError> {
        let mut bo = Self::new(space, config)?;
        for (i, r) in dataset.records.iter().enumerate() {
            if r.index != i {
                return Err(BoError::Resume(format!("record {i} has index {}", r.index)));
            }
            if !bo.space.contains(&r.point) {
                return Err(BoError::Resume(format!("record {i} lies outside the search space")));
            }
        }
        bo.dataset = dataset;
        bo.hyper = last_hyper;
        Ok(bo)
    }

    pub fn dataset(&self) -> &BoDataset {
        &self.dataset
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn config(&self) -> &BoConfig {
        &self.config
    }

    pub fn is_done(&self) -> bool {
        self.dataset.len() >= self.config.max_iter
    }

    fn fit_surrogate(&mut self) -> Option<GpSurrogate> {
        let points: Vec<Vec<f64>> = self.dataset.records.iter().map(|r| self.space.to_unit(&r.point)).collect();
        let costs: Vec<f64> = self.dataset.records.iter().map(|r| r.cost).collect();
        let hyper = if points.len() >= 2 {
            match gp::optimize_hyperparams(&points, &costs, self.hyper, self.config.seed, &self.config.hyper_search) {
                Ok(fit) => fit.hyper,
                Err(e) => {
                    log::warn!("hyperparameter optimization failed: {e}");
                    self.hyper.unwrap_or_default()
                }
            }
        } else {
            self.hyper.unwrap_or_default()
        };
        self.hyper = Some(hyper);
        match gp::fit(&points, &costs, &hyper) {
            Ok(g) => Some(g),
            Err(e) => {
                log::warn!("GP fit failed ({e}); exploring at random");
                None
            }
        }
    }

    /// Next design to evaluate.
    pub fn propose(&mut self) -> Candidate {
        let index = self.dataset.len();
        if index < self.init.len() {
            return Candidate {
                index,
                point: self.init[index].clone(),
                hyper: None,
                ei: None,
            };
        }
        let mut rng = stream_rng(self.config.seed, Stream::Acquisition, index as u64);
        let j_best = self.dataset.best().map(|b| b.cost).unwrap_or(f64::INFINITY);
        match self.fit_surrogate() {
            Some(gp) => {
                let acq = maximize_acquisition(
                    &gp,
                    &self.space,
                    j_best,
                    &mut rng,
                    &self.config.acquisition,
                    self.feasible.as_ref(),
                );
                Candidate {
                    index,
                    point: acq.point,
                    hyper: self.hyper,
                    ei: Some(acq.ei),
                }
            }
            None => Candidate {
                index,
                point: sample_admissible(&self.space, &mut rng, self.feasible.as_ref()),
                hyper: self.hyper,
                ei: None,
            },
        }
    }

    /// Append an evaluated candidate; non-finite costs become the cap.
    pub fn record(&mut self, candidate: &Candidate, eval: Evaluation) -> IterationInfo {
        let cost = if eval.cost.is_finite() {
            eval.cost
        } else {
            self.config.cap_cost
        };
        let record = BoRecord {
            index: candidate.index,
            point: candidate.point.clone(),
            cost,
            status: eval.status,
        };
        self.dataset.records.push(record.clone());
        let best = self.dataset.best().expect("dataset is nonempty");
        IterationInfo {
            record,
            hyper: candidate.hyper,
            ei: candidate.ei,
            best_cost: best.cost,
            best_index: best.index,
        }
    }

    /// Whether the early-stop rule (if enabled) ends the campaign now.
    pub fn should_stop_early(&self) -> bool {
        let Some(es) = self.config.early_stop else {
            return false;
        };
        let n = self.dataset.len();
        if n <= es.window || n <= self.config.n_init {
            return false;
        }
        let rb = self.dataset.running_best();
        rb[n - 1 - es.window] - rb[n - 1] <= es.tolerance
    }

    /// Run until the budget is exhausted or the early-stop rule fires.
    pub fn run<O, C>(&mut self, mut objective: O, mut observer: C) -> BoResult
    where
        O: FnMut(usize, &DesignPoint) -> Evaluation,
        C: FnMut(&IterationInfo),
    {
        let mut stopped_early = false;
        while !self.is_done() {
            if self.should_stop_early() {
                stopped_early = true;
                break;
            }
            let cand = self.propose();
            let eval = objective(cand.index, &cand.point);
            let info = self.record(&cand, eval);
            observer(&info);
        }
        BoResult {
            best: self.dataset.best().cloned().expect("budget is at least one experiment"),
            dataset: self.dataset.clone(),
            hyper: self.hyper,
            stopped_early,
        }
    }
}

/// Run a complete campaign and return the lowest-cost design.
pub fn run_bo<O>(objective: O, space: &SearchSpace, config: &BoConfig) -> Result<BoResult, BoError>
where
    O: FnMut(usize, &DesignPoint) -> Evaluation,
{
    let mut bo = BayesOpt::new(space.clone(), config.clone())?;
    Ok(bo.run(objective, |_| {}))
}
