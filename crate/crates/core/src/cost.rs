//! Closed-loop performance indices.
//!
//! Constraint violations are handled with penalties: each constraint is
//! written as a margin `h(t) ≥ 0` and a barrier turns the margin into a
//! non-negative cost added to the base index.

use serde::{Deserialize, Serialize};

use crate::RunStatus;

/// Failed, diverged and screened-out experiments are assigned this cost.
pub const DEFAULT_CAP_COST: f64 = 5.0;

/// Input, input-rate and output limits (per channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub du_min: Vec<f64>,
    pub du_max: Vec<f64>,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
}

/// Sampled closed-loop signals, one entry per sample `t = 1..T`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub y: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub status: Option<RunStatus>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// The six constraint margins, each indexed `[t][channel]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Margins {
    /// `u − u_min`
    pub h1: Vec<Vec<f64>>,
    /// `u_max − u`
    pub h2: Vec<Vec<f64>>,
    /// `Δu − Δu_min`
    pub h3: Vec<Vec<f64>>,
    /// `Δu_max − Δu`
    pub h4: Vec<Vec<f64>>,
    /// `y − y_min`
    pub h5: Vec<Vec<f64>>,
    /// `y_max − y`
    pub h6: Vec<Vec<f64>>,
}

impl Margins {
    pub fn all(&self) -> [&Vec<Vec<f64>>; 6] {
        [&self.h1, &self.h2, &self.h3, &self.h4, &self.h5, &self.h6]
    }
}

/// Margins at every sample. For `t = 1` the increment uses `u_prev`
/// (zero initial conditions when `None`).
pub fn margins(traj: &Trajectory, spec: &ConstraintSpec, u_prev: Option<&[f64]>) -> Margins {
    let mut m = Margins::default();
    let nu = spec.u_min.len();
    let zeros = vec![0.0; nu];
    let mut prev: &[f64] = u_prev.unwrap_or(&zeros);
    for (u, y) in traj.u.iter().zip(&traj.y) {
        let du: Vec<f64> = u.iter().zip(prev).map(|(a, b)| a - b).collect();
        m.h1.push(u.iter().zip(&spec.u_min).map(|(u, lo)| u - lo).collect());
        m.h2.push(u.iter().zip(&spec.u_max).map(|(u, hi)| hi - u).collect());
        m.h3.push(du.iter().zip(&spec.du_min).map(|(d, lo)| d - lo).collect());
        m.h4.push(du.iter().zip(&spec.du_max).map(|(d, hi)| hi - d).collect());
        m.h5.push(y.iter().zip(&spec.y_min).map(|(y, lo)| y - lo).collect());
        m.h6.push(y.iter().zip(&spec.y_max).map(|(y, hi)| hi - y).collect());
        prev = u;
    }
    m
}

/// Barrier `b_t(h)`; `t` is the 1-based sample index.
pub trait Barrier: Send + Sync {
    fn penalty(&self, t: usize, margin: f64) -> f64;
}

impl<F: Fn(usize, f64) -> f64 + Send + Sync> Barrier for F {
    fn penalty(&self, t: usize, margin: f64) -> f64 {
        self(t, margin)
    }
}

/// Linear exterior penalty `w · max(0, −h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearBarrier(pub f64);

impl Barrier for LinearBarrier {
    fn penalty(&self, _t: usize, margin: f64) -> f64 {
        self.0 * (-margin).max(0.0)
    }
}

/// One barrier per margin family `h1..h6`; `None` disables a family.
#[derive(Default)]
pub struct PenaltySpec {
    pub barriers: [Option<Box<dyn Barrier>>; 6],
}

/// `J + Σ_t Σ_i b_t(h_i(t))`, summed over every channel of every margin.
pub fn evaluate_general_cost<J>(
    traj: &Trajectory,
    base_cost: J,
    penalties: &PenaltySpec,
    spec: &ConstraintSpec,
    u_prev: Option<&[f64]>,
) -> f64
where
    J: Fn(&Trajectory) -> f64,
{
    let m = margins(traj, spec, u_prev);
    let mut total = base_cost(traj);
    for (family, barrier) in m.all().iter().zip(&penalties.barriers) {
        let Some(b) = barrier else { continue };
        for (t, row) in family.iter().enumerate() {
            for &h in row {
                if h.is_finite() {
                    total += b.penalty(t + 1, h);
                }
            }
        }
    }
    total
}

/// Cart-position barrier: `10 (|p| − 1)` outside the track, zero inside.
pub fn barrier_p(p: f64) -> f64 {
    if p.abs() > 1.0 {
        10.0 * (p.abs() - 1.0)
    } else {
        0.0
    }
}

/// Benchmark index on sampled `(p, φ)`:
///
/// `log[(1/T) Σ (0.1 |r_p − p| + 0.9 |r_φ − φ|)] + log[(1/T) Σ b(p) + 1]`.
///
/// Returns `−∞` if the tracking term is exactly zero.
pub fn benchmark_cost(p: &[f64], phi: &[f64], r_p: f64, r_phi: f64) -> f64 {
    let t = p.len().min(phi.len());
    if t == 0 {
        return f64::NAN;
    }
    let mut track = 0.0;
    let mut barrier = 0.0;
    for (&pi, &phii) in p.iter().zip(phi) {
        track += 0.1 * (r_p - pi).abs() + 0.9 * (r_phi - phii).abs();
        barrier += barrier_p(pi);
    }
    let n = t as f64;
    let track_mean = track / n;
    if track_mean == 0.0 {
        return f64::NEG_INFINITY;
    }
    track_mean.ln() + (barrier / n + 1.0).ln()
}

/// Benchmark index on a trajectory whose outputs are `[p, φ]` and whose
/// reference rows are `[r_p, r_φ]` (zero when absent).
pub fn evaluate_benchmark_cost(traj: &Trajectory) -> f64 {
    let p: Vec<f64> = traj.y.iter().map(|y| y[0]).collect();
    let phi: Vec<f64> = traj.y.iter().map(|y| y[1]).collect();
    let (r_p, r_phi) = traj
        .r
        .first()
        .map(|r| (r[0], r[1]))
        .unwrap_or((0.0, 0.0));
    benchmark_cost(&p, &phi, r_p, r_phi)
}

/// Replace NaN/±∞ by the cap so the surrogate never sees a non-finite value.
pub fn capped(cost: f64, cap: f64) -> f64 {
    if cost.is_finite() {
        cost.min(cap)
    } else if cost == f64::NEG_INFINITY {
        // Only reachable with noiseless perfect tracking.
        f64::MIN_POSITIVE.ln()
    } else {
        cap
    }
}
