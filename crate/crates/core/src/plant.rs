//! Inverted pendulum on a cart.
//!
//! The plant is integrated with fixed-step RK4 under a force held constant
//! over each controller sample. Measurement noise and the band-limited input
//! disturbance are drawn once per sample and held over the RK4 substeps.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("invalid plant parameter: {0}")]
    InvalidParams(&'static str),
    #[error("singular mass matrix (det = {0:e})")]
    SingularMassMatrix(f64),
    #[error("integration produced a non-finite state")]
    NonFinite,
}

/// Physical constants of the cart-pendulum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    /// Cart mass (kg).
    pub cart_mass: f64,
    /// Pendulum mass (kg).
    pub pendulum_mass: f64,
    /// Rod length (m).
    pub rod_length: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
    /// Viscous cart friction (N·s/m).
    pub cart_friction: f64,
    /// Pivot friction coefficient (m/s).
    pub pivot_friction: f64,
}

impl PendulumParams {
    pub fn benchmark() -> Self {
        Self {
            cart_mass: 0.5,
            pendulum_mass: 0.2,
            rod_length: 0.3,
            gravity: 9.81,
            cart_friction: 0.1,
            pivot_friction: 0.1,
        }
    }

    pub fn frictionless(self) -> Self {
        Self {
            cart_friction: 0.0,
            pivot_friction: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !positive(self.cart_mass) {
            return Err(PlantError::InvalidParams("cart_mass must be > 0"));
        }
        if !positive(self.pendulum_mass) {
            return Err(PlantError::InvalidParams("pendulum_mass must be > 0"));
        }
        if !positive(self.rod_length) {
            return Err(PlantError::InvalidParams("rod_length must be > 0"));
        }
        if !positive(self.gravity) {
            return Err(PlantError::InvalidParams("gravity must be > 0"));
        }
        if !nonneg(self.cart_friction) {
            return Err(PlantError::InvalidParams("cart_friction must be >= 0"));
        }
        if !nonneg(self.pivot_friction) {
            return Err(PlantError::InvalidParams("pivot_friction must be >= 0"));
        }
        Ok(())
    }
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self::benchmark()
    }
}

/// Cart position/velocity and pendulum angle/rate; `phi = 0` is upright.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub p: f64,
    pub p_dot: f64,
    pub phi: f64,
    pub phi_dot: f64,
}

impl PlantState {
    pub fn new(p: f64, p_dot: f64, phi: f64, phi_dot: f64) -> Self {
        Self { p, p_dot, phi, phi_dot }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.p, self.p_dot, self.phi, self.phi_dot]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Sensor noise and input disturbance settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Std of additive noise on the measured cart position (m).
    pub meas_std_p: f64,
    /// Std of additive noise on the measured angle (rad).
    pub meas_std_phi: f64,
    /// Stationary std of the force disturbance (N).
    pub dist_std: f64,
    /// Disturbance cutoff (rad/s).
    pub dist_bandwidth: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn benchmark(seed: u64) -> Self {
        Self {
            meas_std_p: 0.01,
            meas_std_phi: 0.01,
            dist_std: 1.0,
            dist_bandwidth: 10.0,
            seed,
        }
    }

    pub fn silent(seed: u64) -> Self {
        Self {
            meas_std_p: 0.0,
            meas_std_phi: 0.0,
            dist_std: 0.0,
            dist_bandwidth: 10.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.meas_std_p >= 0.0 && self.meas_std_phi >= 0.0 && self.dist_std >= 0.0) {
            return Err(PlantError::InvalidParams("noise standard deviations must be >= 0"));
        }
        if !(self.dist_bandwidth > 0.0 && self.dist_bandwidth.is_finite()) {
            return Err(PlantError::InvalidParams("dist_bandwidth must be > 0"));
        }
        Ok(())
    }
}

/// Timing, initial condition and actuator range of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    /// Controller sample time (s).
    pub ts: f64,
    /// Experiment length (s).
    pub duration: f64,
    pub initial_state: PlantState,
    /// Saturation range `[F_min, F_max]` of the actuator (N).
    pub force_limits: (f64, f64),
    /// RK4 substeps per sample.
    pub substeps: usize,
}

impl SimScenario {
    pub fn benchmark() -> Self {
        Self {
            ts: 0.005,
            duration: 10.0,
            initial_state: PlantState::new(0.0, 0.0, std::f64::consts::PI / 20.0, 0.0),
            force_limits: (-20.0, 20.0),
            substeps: 10,
        }
    }

    /// Number of samples `T = duration / ts`.
    pub fn samples(&self) -> usize {
        (self.duration / self.ts).round() as usize
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(PlantError::InvalidParams("ts must be > 0"));
        }
        if !(self.duration > 0.0) {
            return Err(PlantError::InvalidParams("duration must be > 0"));
        }
        let ratio = self.duration / self.ts;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return Err(PlantError::InvalidParams("duration must be a multiple of ts"));
        }
        if !(self.force_limits.0 < self.force_limits.1) {
            return Err(PlantError::InvalidParams("force_limits must satisfy F_min < F_max"));
        }
        if self.substeps == 0 {
            return Err(PlantError::InvalidParams("substeps must be >= 1"));
        }
        if !self.initial_state.is_finite() {
            return Err(PlantError::InvalidParams("initial state must be finite"));
        }
        Ok(())
    }
}

/// Time derivative `(ṗ, p̈, φ̇, φ̈)` under applied force `force`.
///
/// Solves
/// `(M+m) p̈ + m L cosφ φ̈ = F − b ṗ + m L φ̇² sinφ` and
/// `cosφ p̈ + L φ̈ = g sinφ − f_φ φ̇`
/// with the 2×2 mass matrix inverted in closed form.
pub fn dynamics_rhs(
    state: &PlantState,
    force: f64,
    params: &PendulumParams,
) -> Result<[f64; 4], PlantError> {
    let PendulumParams {
        cart_mass,
        pendulum_mass: m,
        rod_length: l,
        gravity,
        cart_friction,
        pivot_friction,
    } = *params;
    let (s, c) = state.phi.sin_cos();
    let m11 = cart_mass + m;
    let m12 = m * l * c;
    let m21 = c;
    let m22 = l;
    let det = m11 * m22 - m12 * m21;
    if det.abs() < 1e-12 {
        return Err(PlantError::SingularMassMatrix(det));
    }
    let r1 = force - cart_friction * state.p_dot + m * l * state.phi_dot * state.phi_dot * s;
    let r2 = gravity * s - pivot_friction * state.phi_dot;
    let p_ddot = (m22 * r1 - m12 * r2) / det;
    let phi_ddot = (m11 * r2 - m21 * r1) / det;
    Ok([state.p_dot, p_ddot, state.phi_dot, phi_ddot])
}

/// One classical RK4 step with the force held constant.
pub fn rk4_step(
    state: &PlantState,
    force: f64,
    dt: f64,
    params: &PendulumParams,
) -> Result<PlantState, PlantError> {
    let x0 = state.to_array();
    let at = |k: &[f64; 4], h: f64| {
        PlantState::from_array([
            x0[0] + h * k[0],
            x0[1] + h * k[1],
            x0[2] + h * k[2],
            x0[3] + h * k[3],
        ])
    };
    let k1 = dynamics_rhs(state, force, params)?;
    let k2 = dynamics_rhs(&at(&k1, 0.5 * dt), force, params)?;
    let k3 = dynamics_rhs(&at(&k2, 0.5 * dt), force, params)?;
    let k4 = dynamics_rhs(&at(&k3, dt), force, params)?;
    let mut next = [0.0; 4];
    for i in 0..4 {
        next[i] = x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let next = PlantState::from_array(next);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(PlantError::NonFinite)
    }
}

/// Kinetic plus potential energy, conserved when friction and force vanish.
pub fn mechanical_energy(state: &PlantState, params: &PendulumParams) -> f64 {
    let m = params.pendulum_mass;
    let l = params.rod_length;
    let c = state.phi.cos();
    0.5 * (params.cart_mass + m) * state.p_dot * state.p_dot
        + m * l * state.p_dot * state.phi_dot * c
        + 0.5 * m * l * l * state.phi_dot * state.phi_dot
        + m * params.gravity * l * c
}

/// Clip `u` into `limits`.
pub fn saturate(u: f64, limits: (f64, f64)) -> f64 {
    u.clamp(limits.0, limits.1)
}

/// First-order low-pass filtered white noise.
///
/// `x⁺ = a x + (1 − a) w`, `a = exp(−ω_c dt)`, with `w` scaled so that the
/// stationary standard deviation equals `dist_std`. The filter starts from a
/// draw of its stationary distribution.
#[derive(Debug, Clone)]
pub struct Disturbance {
    value: f64,
    rng: ChaCha8Rng,
    started: bool,
}

impl Disturbance {
    pub fn new(seed: u64) -> Self {
        Self::from_rng(stream_rng(seed, Stream::Disturbance, 0))
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Self {
            value: 0.0,
            rng,
            started: false,
        }
    }

    /// Advance by `dt` and return the new force perturbation (N).
    pub fn step(&mut self, dt: f64, config: &NoiseConfig) -> f64 {
        if config.dist_std == 0.0 {
            return 0.0;
        }
        let a = (-config.dist_bandwidth * dt).exp();
        if !self.started {
            let z: f64 = self.rng.sample(StandardNormal);
            self.value = config.dist_std * z;
            self.started = true;
            return self.value;
        }
        let w_std = config.dist_std * ((1.0 + a) / (1.0 - a)).sqrt();
        let z: f64 = self.rng.sample(StandardNormal);
        self.value = a * self.value + (1.0 - a) * w_std * z;
        self.value
    }
}

/// Additive white Gaussian measurement noise on `(p, φ)`.
#[derive(Debug, Clone)]
pub struct Sensor {
    rng: ChaCha8Rng,
}

impl Sensor {
    pub fn new(seed: u64) -> Self {
        Self::from_rng(stream_rng(seed, Stream::Measurement, 0))
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    pub fn measure(&mut self, state: &PlantState, config: &NoiseConfig) -> (f64, f64) {
        let np: f64 = self.rng.sample(StandardNormal);
        let nphi: f64 = self.rng.sample(StandardNormal);
        (
            state.p + config.meas_std_p * np,
            state.phi + config.meas_std_phi * nphi,
        )
    }
}

/// The plant integrated over one controller sample.
#[derive(Debug, Clone)]
pub struct Plant {
    pub params: PendulumParams,
    pub state: PlantState,
    substeps: usize,
}

impl Plant {
    pub fn new(params: PendulumParams, initial: PlantState, substeps: usize) -> Self {
        Self {
            params,
            state: initial,
            substeps: substeps.max(1),
        }
    }

    /// Hold `force` for `ts` seconds.
    pub fn advance(&mut self, force: f64, ts: f64) -> Result<&PlantState, PlantError> {
        let dt = ts / self.substeps as f64;
        let mut x = self.state;
        for _ in 0..self.substeps {
            x = rk4_step(&x, force, dt, &self.params)?;
        }
        self.state = x;
        Ok(&self.state)
    }
}
