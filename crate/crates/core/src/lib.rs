//! Closed-loop tuning of hierarchical model predictive control.
//!
//! An inner PID loop stabilizes the fast dynamics of a plant while an outer
//! MPC, acting as a reference governor, shapes the PID setpoint and enforces
//! constraints. The PID gains, the MPC prediction model and the prediction
//! horizon are treated jointly as design variables and tuned by Bayesian
//! optimization over measured closed-loop cost, without using a physical
//! model of the plant.
//!
//! Module map:
//!
//! * [`plant`]: cart-pendulum simulator with saturation, disturbance and noise.
//! * [`linsys`]: LTI state-space algebra (PID realization, ZOH, augmentation).
//! * [`mpc`]: condensed soft-constrained MPC and its dense QP solver.
//! * [`cost`]: penalty-based closed-loop performance indices.
//! * [`gp`]: squared-exponential Gaussian-process surrogate.
//! * [`bayesopt`]: expected-improvement Bayesian optimization loop.
//! * [`experiment`]: the multirate closed-loop runner used as BO objective.
//!
//! With the default `parallel` feature, batch evaluations (acquisition
//! probes, hyperparameter restarts, multi-seed runs) use rayon. Results are
//! identical with the feature disabled.

pub mod bayesopt;
pub mod cost;
pub mod experiment;
pub mod gp;
pub mod linsys;
pub mod mpc;
pub mod optim;
pub mod par;
pub mod plant;
pub mod rng;
mod status;

pub use status::RunStatus;
