//! Multirate closed-loop experiment: plant, inner PID at `Ts`, outer MPC at
//! `T_MPC = N Ts`.
//!
//! The MPC prediction model is built at the fast rate as the augmentation of
//! the PID with the ZOH-sampled candidate model `M_y(μ)`, then lifted to the
//! MPC rate with the command held over `N` samples. Its state is therefore
//! `[PID state; ξ_M]`, which the loop fills with the live PID state and the
//! latest measurement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::sync::Arc;

use crate::bayesopt::{DesignPoint, Evaluation, Feasibility};
use crate::cost::{self, Trajectory};
use crate::linsys::{self, CtStateSpace, DtStateSpace, LinsysError, Mat, PidParams, Vector};
use crate::mpc::{MpcBounds, MpcConfig, MpcController, MpcError, MpcWeights};
use crate::plant::{saturate, Disturbance, NoiseConfig, PendulumParams, Plant, PlantState, SimScenario, Sensor};
use crate::rng::{stream_rng, Stream};
use crate::RunStatus;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("design point has wrong dimensions: {0}")]
    Design(String),
    #[error(transparent)]
    Linsys(#[from] LinsysError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error("invalid loop configuration: {0}")]
    Config(String),
}

/// Everything about an experiment except the design point and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub plant: PendulumParams,
    pub scenario: SimScenario,
    /// The seed field is ignored; each run receives its own seed.
    pub noise: NoiseConfig,
    pub weights: MpcWeights,
    pub bounds: MpcBounds,
    pub u_ref: Vec<f64>,
    /// PID derivative filter coefficient.
    pub nd: f64,
    /// MPC period in inner samples.
    pub rate_ratio: usize,
    /// Output reference `[r_p, r_φ]`.
    pub reference: [f64; 2],
    pub cap_cost: f64,
    /// Reject candidates whose sampled `M_y` is not Schur stable.
    pub screening: bool,
    /// Abort when `|p|` exceeds this (m).
    pub max_position: f64,
    /// Abort when `|φ|` exceeds this (rad).
    pub max_angle: f64,
}

impl LoopConfig {
    pub fn benchmark() -> Self {
        let scenario = SimScenario::benchmark();
        let (f_min, f_max) = scenario.force_limits;
        Self {
            plant: PendulumParams::benchmark(),
            scenario,
            noise: NoiseConfig::benchmark(0),
            weights: MpcWeights {
                q_y: vec![0.1, 0.1],
                q_u: vec![0.0],
                q_du: vec![0.1],
                q_eps: 1e5,
                v_y: vec![1.0, 1.0],
                v_u: vec![1.0],
                v_du: vec![1.0],
            },
            bounds: MpcBounds {
                y_min: vec![-1.0, f64::NEG_INFINITY],
                y_max: vec![1.0, f64::INFINITY],
                u_min: vec![f_min],
                u_max: vec![f_max],
                du_min: vec![f64::NEG_INFINITY],
                du_max: vec![f64::INFINITY],
            },
            u_ref: vec![0.0],
            nd: 100.0,
            rate_ratio: 10,
            reference: [0.0, 0.0],
            cap_cost: cost::DEFAULT_CAP_COST,
            screening: true,
            max_position: 10.0,
            max_angle: 4.0 * std::f64::consts::PI,
        }
    }

    pub fn t_mpc(&self) -> f64 {
        self.scenario.ts * self.rate_ratio as f64
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg = |m: String| ExperimentError::Config(m);
        self.plant.validate().map_err(|e| cfg(e.to_string()))?;
        self.scenario.validate().map_err(|e| cfg(e.to_string()))?;
        self.noise.validate().map_err(|e| cfg(e.to_string()))?;
        if self.rate_ratio == 0 {
            return Err(cfg("rate_ratio must be >= 1".into()));
        }
        if !(self.nd > 0.0) {
            return Err(cfg("nd must be > 0".into()));
        }
        if self.reference.iter().any(|r| !r.is_finite()) {
            return Err(cfg("references must be finite".into()));
        }
        if !self.cap_cost.is_finite() {
            return Err(cfg("cap_cost must be finite".into()));
        }
        if !(self.max_position > 0.0) || !(self.max_angle > 0.0) {
            return Err(cfg("divergence thresholds must be > 0".into()));
        }
        if self.weights.q_y.len() != 2 || self.weights.q_u.len() != 1 {
            return Err(cfg("weights must have two outputs and one input".into()));
        }
        // Horizon is a placeholder here; the design point supplies it.
        self.mpc_config(1).validate()?;
        Ok(())
    }

    /// MPC settings with `N_u = N_p`.
    pub fn mpc_config(&self, np: usize) -> MpcConfig {
        MpcConfig {
            np,
            nu: np,
            weights: self.weights.clone(),
            bounds: self.bounds.clone(),
            u_ref: self.u_ref.clone(),
            t_mpc: self.t_mpc(),
        }
    }
}

/// Controllers and models derived from one design point.
#[derive(Debug, Clone)]
pub struct Controllers {
    /// PID on the angle error, realized at `Ts`.
    pub pid: DtStateSpace,
    /// Continuous model `ξ̇ = A_M ξ + B_M g`, `y = ξ`, with two command inputs.
    pub model_ct: CtStateSpace,
    /// `M_y` sampled at `T_MPC`; the object of the stability screen.
    pub model_mpc: DtStateSpace,
    /// Lifted augmented model from `g_φ` to `[u; p; φ]` at `T_MPC`.
    pub prediction: DtStateSpace,
    pub mpc: MpcConfig,
}

/// `A_M = [[μ₀, μ₁], [μ₂, μ₃]]`, `B_M = [[0, μ₄], [0, μ₅]]`, `C = I`, `D = 0`.
pub fn model_from_mu(mu: &[f64]) -> Result<CtStateSpace, ExperimentError> {
    if mu.len() != 6 {
        return Err(ExperimentError::Design(format!("expected 6 model entries, got {}", mu.len())));
    }
    Ok(CtStateSpace::new(
        Mat::from_row_slice(2, 2, &mu[..4]),
        Mat::from_row_slice(2, 2, &[0.0, mu[4], 0.0, mu[5]]),
        Mat::identity(2, 2),
        Mat::zeros(2, 2),
    )?)
}

pub fn build_controllers(dp: &DesignPoint, cfg: &LoopConfig) -> Result<Controllers, ExperimentError> {
    if dp.theta.len() != 3 {
        return Err(ExperimentError::Design(format!("expected 3 PID gains, got {}", dp.theta.len())));
    }
    if dp.np == 0 {
        return Err(ExperimentError::Design("horizon must be >= 1".into()));
    }
    let ts = cfg.scenario.ts;
    let pid = linsys::pid_realization(&PidParams {
        kp: dp.theta[0],
        ki: dp.theta[1],
        kd: dp.theta[2],
        nd: cfg.nd,
        ts,
    });
    let model_ct = model_from_mu(&dp.mu)?;
    let model_mpc = linsys::c2d_zoh(&model_ct, cfg.t_mpc())?;
    let model_ts = linsys::c2d_zoh(&model_ct, ts)?;
    // u = [0 K_PI] (g − y)
    let k = pid.map_inputs(&Mat::from_row_slice(1, 2, &[0.0, 1.0]))?;
    let aug = linsys::augment(&k, &model_ts)?.select_inputs(&[1])?;
    let prediction = linsys::lift(&aug, cfg.rate_ratio)?;
    if !prediction.is_finite() {
        return Err(LinsysError::NonFinite("prediction model").into());
    }
    Ok(Controllers {
        pid,
        model_ct,
        model_mpc,
        prediction,
        mpc: cfg.mpc_config(dp.np),
    })
}

/// Whether `M_y(μ)` sampled at `T_MPC` is Schur stable; the screen applied
/// before every experiment.
pub fn model_is_admissible(mu: &[f64], cfg: &LoopConfig) -> bool {
    model_from_mu(mu)
        .ok()
        .and_then(|m| linsys::c2d_zoh(&m, cfg.t_mpc()).ok())
        .is_some_and(|m| linsys::is_schur_stable(&m))
}

/// The screen as an acquisition constraint (`None` when screening is off).
pub fn feasibility(cfg: &LoopConfig) -> Option<Feasibility> {
    if !cfg.screening {
        return None;
    }
    let cfg = cfg.clone();
    Some(Arc::new(move |dp: &DesignPoint| model_is_admissible(&dp.mu, &cfg)))
}

/// One row of an exported trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub p: f64,
    pub phi: f64,
    pub p_meas: f64,
    pub phi_meas: f64,
    /// Saturated PID output.
    pub u: f64,
    /// Force reaching the cart: saturated command plus disturbance.
    pub f_applied: f64,
    /// MPC command on the angle channel.
    pub g: f64,
    /// Whether the last MPC solution used the slack.
    pub epsilon_active: bool,
}

/// Result of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Samples `t = 0, Ts, …` up to the end or to the sample where the run
    /// was interrupted.
    pub samples: Vec<Sample>,
    pub cost: f64,
    pub status: RunStatus,
    /// Number of MPC steps whose QP did not reach `Solved`.
    pub degraded_steps: usize,
}

impl RunOutcome {
    fn capped(cfg: &LoopConfig, status: RunStatus, samples: Vec<Sample>) -> Self {
        Self {
            samples,
            cost: cfg.cap_cost,
            status,
            degraded_steps: 0,
        }
    }

    /// Measured trajectory for `t ≥ Ts`, the samples entering the cost.
    pub fn trajectory(&self, reference: [f64; 2]) -> Trajectory {
        let rows = self.samples.iter().skip(1);
        Trajectory {
            y: rows.clone().map(|s| vec![s.p_meas, s.phi_meas]).collect(),
            u: rows.clone().map(|s| vec![s.u]).collect(),
            g: rows.clone().map(|s| vec![s.g]).collect(),
            r: rows.map(|_| reference.to_vec()).collect(),
            status: Some(self.status),
        }
    }

    pub fn evaluation(&self) -> Evaluation {
        Evaluation {
            cost: self.cost,
            status: self.status,
        }
    }
}

/// Slack values above this count as active in exported traces.
const EPS_ACTIVE: f64 = 1e-6;

/// Run one experiment. Noise and disturbance are drawn from `seed`.
pub fn run_closed_loop(dp: &DesignPoint, cfg: &LoopConfig, seed: u64) -> RunOutcome {
    let ctrl = match build_controllers(dp, cfg) {
        Ok(c) => c,
        Err(e) => {
            log::debug!("controller construction failed: {e}");
            return RunOutcome::capped(cfg, RunStatus::Failed, Vec::new());
        }
    };
    if cfg.screening && !linsys::is_schur_stable(&ctrl.model_mpc) {
        return RunOutcome::capped(cfg, RunStatus::CappedUnstableModel, Vec::new());
    }
    simulate(&ctrl, cfg, seed)
}

fn simulate(ctrl: &Controllers, cfg: &LoopConfig, seed: u64) -> RunOutcome {
    let mut mpc = match MpcController::new(ctrl.prediction.clone(), ctrl.mpc.clone()) {
        Ok(m) => m,
        Err(e) => {
            log::debug!("MPC construction failed: {e}");
            return RunOutcome::capped(cfg, RunStatus::Failed, Vec::new());
        }
    };
    let sc = &cfg.scenario;
    let ts = sc.ts;
    let n_samples = sc.samples();
    let refs = mpc.constant_refs(&cfg.reference);

    let mut plant = Plant::new(cfg.plant, sc.initial_state, sc.substeps);
    let mut sensor = Sensor::from_rng(stream_rng(seed, Stream::Measurement, 0));
    let mut dist = Disturbance::from_rng(stream_rng(seed, Stream::Disturbance, 0));

    let mut x_pid = Vector::zeros(ctrl.pid.n_states());
    let mut g = 0.0;
    let mut eps_active = false;
    let mut prev_u = 0.0;
    let mut degraded_steps = 0;
    let mut samples = Vec::with_capacity(n_samples + 1);

    for k in 0..=n_samples {
        let state: PlantState = plant.state;
        let (p_meas, phi_meas) = sensor.measure(&state, &cfg.noise);
        let mut row = Sample {
            t: k as f64 * ts,
            p: state.p,
            phi: state.phi,
            p_meas,
            phi_meas,
            u: f64::NAN,
            f_applied: f64::NAN,
            g,
            epsilon_active: eps_active,
        };

        if k % cfg.rate_ratio == 0 {
            let xi = Vector::from_iterator(
                x_pid.len() + 2,
                x_pid.iter().copied().chain([p_meas, phi_meas]),
            );
            match mpc.step(&xi, &[prev_u], &refs) {
                Ok(out) if out.g[0].is_finite() => {
                    if out.is_degraded() {
                        degraded_steps += 1;
                    }
                    g = out.g[0];
                    eps_active = out.epsilon > EPS_ACTIVE;
                }
                Ok(_) => degraded_steps += 1,
                Err(e) => {
                    log::debug!("MPC step failed: {e}");
                    samples.push(row);
                    return RunOutcome::capped(cfg, RunStatus::Failed, samples);
                }
            }
            row.g = g;
            row.epsilon_active = eps_active;
        }

        let e = Vector::from_element(1, g - phi_meas);
        let (u_pid, x_next) = ctrl.pid.step(&x_pid, &e);
        x_pid = x_next;
        let u = saturate(u_pid[0], sc.force_limits);
        let force = u + dist.step(ts, &cfg.noise);
        row.u = u;
        row.f_applied = force;
        samples.push(row);
        prev_u = u;
        if k == n_samples {
            break;
        }

        let diverged = match plant.advance(force, ts) {
            Ok(s) => !s.is_finite() || s.p.abs() > cfg.max_position || s.phi.abs() > cfg.max_angle,
            Err(_) => true,
        };
        if diverged || !x_pid.iter().all(|v| v.is_finite()) {
            return RunOutcome::capped(cfg, RunStatus::Diverged, samples);
        }
    }

    let mut out = RunOutcome {
        samples,
        cost: 0.0,
        status: if degraded_steps > 0 {
            RunStatus::SolverDegraded
        } else {
            RunStatus::Completed
        },
        degraded_steps,
    };
    let raw = cost::evaluate_benchmark_cost(&out.trajectory(cfg.reference));
    out.cost = cost::capped(raw, cfg.cap_cost);
    out
}

/// Cost and status of one experiment, as seen by the optimizer.
pub fn objective(dp: &DesignPoint, cfg: &LoopConfig, seed: u64) -> Evaluation {
    run_closed_loop(dp, cfg, seed).evaluation()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dp(theta: [f64; 3], mu: [f64; 6], np: usize) -> DesignPoint {
        DesignPoint {
            theta: theta.to_vec(),
            mu: mu.to_vec(),
            np,
        }
    }

    #[test]
    fn zero_controller_lets_pendulum_fall() {
        let mut cfg = LoopConfig::benchmark();
        cfg.screening = false;
        cfg.noise = NoiseConfig::silent(0);
        let out = run_closed_loop(&dp([0.0; 3], [0.0; 6], 10), &cfg, 1);
        assert!(out.samples.iter().all(|s| s.u == 0.0));
        // it swings below the horizontal but stays inside the guard limits
        let max_phi = out.samples.iter().map(|s| s.phi.abs()).fold(0.0, f64::max);
        assert!(max_phi > std::f64::consts::FRAC_PI_2 && max_phi < cfg.max_angle);
        assert_eq!(out.status, RunStatus::Completed);
        assert!(out.cost > 0.5);
    }

    #[test]
    fn unstable_model_is_screened() {
        let cfg = LoopConfig::benchmark();
        let out = run_closed_loop(&dp([-30.0, 0.0, -2.0], [1.0, 0.0, 0.0, -1.0, 0.0, 1.0], 10), &cfg, 1);
        assert_eq!(out.status, RunStatus::CappedUnstableModel);
        assert!(out.samples.is_empty());
        assert_eq!(out.cost, cfg.cap_cost);
    }

    #[test]
    fn zero_gains_zero_u_channel() {
        let cfg = LoopConfig::benchmark();
        let c = build_controllers(&dp([0.0; 3], [-1.0, 0.0, 0.0, -2.0, 1.0, 1.0], 10), &cfg).unwrap();
        for w in [0.1, 1.0, 10.0] {
            assert_eq!(c.prediction.freq_response(w)[(0, 0)].norm(), 0.0);
        }
        assert_eq!(c.prediction.n_outputs(), 3);
        assert_eq!(c.prediction.n_inputs(), 1);
        assert!((c.prediction.sample_time - 0.05).abs() < 1e-15);
    }

    #[test]
    fn wrong_dimensions_fail() {
        let cfg = LoopConfig::benchmark();
        let bad = DesignPoint {
            theta: vec![1.0],
            mu: vec![0.0; 6],
            np: 10,
        };
        assert_eq!(objective(&bad, &cfg, 0).status, RunStatus::Failed);
    }

    #[test]
    fn benchmark_config_is_valid() {
        LoopConfig::benchmark().validate().unwrap();
        assert_eq!(LoopConfig::benchmark().scenario.samples(), 2000);
    }
}
