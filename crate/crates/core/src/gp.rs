//! Gaussian-process regression with an isotropic squared-exponential kernel.
//!
//! Inputs are expected in normalized coordinates (the unit cube of the
//! search space). Targets are standardized to zero mean and unit variance
//! before fitting; hyperparameters live in that standardized space, and
//! [`GpSurrogate::predict`] converts back to cost units.

use std::f64::consts::PI;

use nalgebra::Cholesky;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linsys::{Mat, Vector};
use crate::optim::nelder_mead;
use crate::par::{self, Execution};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("no training data")]
    Empty,
    #[error("points and costs differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("non-finite training cost at index {0}")]
    NonFinite(usize),
    #[error("kernel matrix is not positive definite even with jitter {0:e}")]
    Degenerate(f64),
}

/// Signal std `σ₀`, length scale `λ` and observation-noise std `σ_e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub sigma0: f64,
    pub lambda: f64,
    pub sigma_e: f64,
}

impl GpHyperparams {
    pub fn to_log(self) -> [f64; 3] {
        [self.sigma0.ln(), self.lambda.ln(), self.sigma_e.ln()]
    }

    pub fn from_log(v: &[f64]) -> Self {
        Self {
            sigma0: v[0].exp(),
            lambda: v[1].exp(),
            sigma_e: v[2].exp(),
        }
    }
}

impl Default for GpHyperparams {
    fn default() -> Self {
        Self {
            sigma0: 1.0,
            lambda: 0.3,
            sigma_e: 0.1,
        }
    }
}

/// Natural-log search box for `(σ₀, λ, σ_e)`.
pub const LOG_HYPER_BOUNDS: [(f64, f64); 3] = [(-4.0, 4.0), (-3.0, 2.0), (-6.0, 1.0)];

/// Jitter schedule used when the Cholesky factorization fails.
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `σ₀² exp(−‖x − x'‖² / (2λ²))`.
pub fn se_kernel(x: &[f64], x2: &[f64], hyper: &GpHyperparams) -> f64 {
    hyper.sigma0 * hyper.sigma0 * (-sq_dist(x, x2) / (2.0 * hyper.lambda * hyper.lambda)).exp()
}

fn pairwise_sq_dists(points: &[Vec<f64>]) -> Mat {
    let n = points.len();
    let mut d = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = sq_dist(&points[i], &points[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

fn kernel_from_dists(d: &Mat, hyper: &GpHyperparams) -> Mat {
    let s2 = hyper.sigma0 * hyper.sigma0;
    let inv = 1.0 / (2.0 * hyper.lambda * hyper.lambda);
    d.map(|v| s2 * (-v * inv).exp())
}

/// Cholesky of `K + (σ_e² + jitter) I`, escalating jitter on failure.
fn regularized_cholesky(k: &Mat, noise_var: f64) -> Result<(Cholesky<f64, nalgebra::Dyn>, f64), GpError> {
    let n = k.nrows();
    let mut jitter = 0.0;
    loop {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += noise_var + jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c, jitter));
        }
        jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
        if jitter > JITTER_MAX * (1.0 + 1e-9) {
            return Err(GpError::Degenerate(jitter / 10.0));
        }
    }
}

/// Zero-mean, unit-variance affine map of the training costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    pub fn of(costs: &[f64]) -> Self {
        let n = costs.len() as f64;
        let mean = costs.iter().sum::<f64>() / n;
        let var = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        Self {
            mean,
            scale: if sd > 1e-12 { sd } else { 1.0 },
        }
    }

    pub fn apply(&self, c: f64) -> f64 {
        (c - self.mean) / self.scale
    }
}

/// Posterior mean and variance in cost units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

impl Posterior {
    pub fn std(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

/// A fitted GP: training inputs, standardized targets, Cholesky factor of
/// the regularized kernel matrix and `α = (K + σ_e² I)⁻¹ y`.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    pub points: Vec<Vec<f64>>,
    pub y_std: Vector,
    pub standardization: Standardization,
    pub hyper: GpHyperparams,
    /// Lower-triangular factor.
    pub chol: Mat,
    pub alpha: Vector,
    /// Extra diagonal jitter that was needed (0 in the normal case).
    pub jitter: f64,
}

fn check_data(points: &[Vec<f64>], costs: &[f64]) -> Result<(), GpError> {
    if points.is_empty() {
        return Err(GpError::Empty);
    }
    if points.len() != costs.len() {
        return Err(GpError::Length(points.len(), costs.len()));
    }
    if let Some(i) = costs.iter().position(|c| !c.is_finite()) {
        return Err(GpError::NonFinite(i));
    }
    Ok(())
}

/// Train the surrogate for fixed hyperparameters.
pub fn fit(points: &[Vec<f64>], costs: &[f64], hyper: &GpHyperparams) -> Result<GpSurrogate, GpError> {
    check_data(points, costs)?;
    let standardization = Standardization::of(costs);
    let y_std = Vector::from_iterator(costs.len(), costs.iter().map(|&c| standardization.apply(c)));
    let k = kernel_from_dists(&pairwise_sq_dists(points), hyper);
    let (chol, jitter) = regularized_cholesky(&k, hyper.sigma_e * hyper.sigma_e)?;
    let alpha = chol.solve(&y_std);
    Ok(GpSurrogate {
        points: points.to_vec(),
        y_std,
        standardization,
        hyper: *hyper,
        chol: chol.unpack(),
        alpha,
        jitter,
    })
}

impl GpSurrogate {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Posterior at `x`:
    /// `m = k*ᵀ(K + σ_e² I)⁻¹ y`,
    /// `s² = κ(x, x) − k*ᵀ(K + σ_e² I)⁻¹ k* + σ_e²`.
    pub fn predict(&self, x: &[f64]) -> Posterior {
        let n = self.len();
        let h = &self.hyper;
        let mut v: Vec<f64> = self.points.iter().map(|p| se_kernel(x, p, h)).collect();
        let mean_std: f64 = v.iter().zip(self.alpha.iter()).map(|(k, a)| k * a).sum();
        // Forward substitution L v = k*, in place.
        for i in 0..n {
            let mut s = v[i];
            for j in 0..i {
                s -= self.chol[(i, j)] * v[j];
            }
            v[i] = s / self.chol[(i, i)];
        }
        let quad: f64 = v.iter().map(|t| t * t).sum();
        let var_std = h.sigma0 * h.sigma0 - quad + h.sigma_e * h.sigma_e;
        let s = &self.standardization;
        Posterior {
            mean: s.mean + s.scale * mean_std,
            variance: var_std.max(0.0) * s.scale * s.scale,
        }
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>], exec: Execution) -> Vec<Posterior> {
        par::map(exec, xs, |x| self.predict(x))
    }
}

/// `−½ log det(K + σ_e² I) − ½ yᵀ(K + σ_e² I)⁻¹ y − (n/2) log 2π` for the
/// given targets, used as-is (no standardization).
pub fn log_marginal_likelihood(points: &[Vec<f64>], targets: &[f64], hyper: &GpHyperparams) -> Result<f64, GpError> {
    check_data(points, targets)?;
    let d = pairwise_sq_dists(points);
    let y = Vector::from_column_slice(targets);
    lml_from_dists(&d, &y, hyper)
}

fn lml_from_dists(d: &Mat, y: &Vector, hyper: &GpHyperparams) -> Result<f64, GpError> {
    let k = kernel_from_dists(d, hyper);
    let (chol, _) = regularized_cholesky(&k, hyper.sigma_e * hyper.sigma_e)?;
    let l = chol.l_dirty();
    let n = y.len();
    let log_det: f64 = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    let alpha = chol.solve(y);
    Ok(-0.5 * log_det - 0.5 * y.dot(&alpha) - 0.5 * n as f64 * (2.0 * PI).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperStatus {
    Optimized,
    /// Every start failed; the previous hyperparameters were kept.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperFit {
    pub hyper: GpHyperparams,
    /// LML of the standardized training costs at `hyper`.
    pub lml: f64,
    pub status: HyperStatus,
}

/// Settings for the multi-start likelihood maximization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperSearch {
    pub starts: usize,
    /// Nelder–Mead evaluation budget for the warm start.
    pub warm_evals: usize,
    /// Budget for each random restart.
    pub restart_evals: usize,
    pub execution: Execution,
}

impl Default for HyperSearch {
    fn default() -> Self {
        Self {
            starts: 8,
            warm_evals: 80,
            restart_evals: 40,
            execution: Execution::Parallel,
        }
    }
}

/// Maximize the LML of the standardized costs over [`LOG_HYPER_BOUNDS`].
///
/// The first start is `previous` (or the box center), the rest are drawn
/// uniformly in the log box from `seed`. The returned point has an LML no
/// lower than any start.
pub fn optimize_hyperparams(
    points: &[Vec<f64>],
    costs: &[f64],
    previous: Option<GpHyperparams>,
    seed: u64,
    search: &HyperSearch,
) -> Result<HyperFit, GpError> {
    check_data(points, costs)?;
    let st = Standardization::of(costs);
    let y = Vector::from_iterator(costs.len(), costs.iter().map(|&c| st.apply(c)));
    let d = pairwise_sq_dists(points);
    let lo: Vec<f64> = LOG_HYPER_BOUNDS.iter().map(|b| b.0).collect();
    let hi: Vec<f64> = LOG_HYPER_BOUNDS.iter().map(|b| b.1).collect();

    let first = previous
        .map(|h| {
            let v = h.to_log();
            [v[0].clamp(lo[0], hi[0]), v[1].clamp(lo[1], hi[1]), v[2].clamp(lo[2], hi[2])]
        })
        .unwrap_or([0.0, -1.0, -2.5]);
    let mut rng = stream_rng(seed, Stream::Hyperparameters, points.len() as u64);
    let mut starts: Vec<Vec<f64>> = vec![first.to_vec()];
    for _ in 1..search.starts.max(1) {
        starts.push((0..3).map(|i| rng.random_range(lo[i]..hi[i])).collect());
    }

    let neg_lml = |v: &[f64]| -> f64 {
        match lml_from_dists(&d, &y, &GpHyperparams::from_log(v)) {
            Ok(l) if l.is_finite() => -l,
            _ => f64::INFINITY,
        }
    };
    let results = par::map_range(search.execution, starts.len(), |i| {
        let budget = if i == 0 { search.warm_evals } else { search.restart_evals };
        nelder_mead(neg_lml, &starts[i], &lo, &hi, 0.1, budget.max(4))
    });
    let best = results
        .iter()
        .filter(|r| r.value.is_finite())
        .min_by(|a, b| a.value.total_cmp(&b.value));
    match best {
        Some(r) => Ok(HyperFit {
            hyper: GpHyperparams::from_log(&r.x),
            lml: -r.value,
            status: HyperStatus::Optimized,
        }),
        None => {
            let hyper = previous.unwrap_or_default();
            log::warn!("hyperparameter search failed at every start; keeping {hyper:?}");
            Ok(HyperFit {
                hyper,
                lml: f64::NEG_INFINITY,
                status: HyperStatus::Fallback,
            })
        }
    }
}
