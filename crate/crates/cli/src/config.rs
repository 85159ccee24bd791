//! Campaign configuration file.
//!
//! Every section and key is optional; omitted values take the benchmark
//! defaults. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use mpc_i4c::bayesopt::{AcquisitionSearch, BoConfig, EarlyStop, SearchSpace};
use mpc_i4c::experiment::LoopConfig;
use mpc_i4c::gp::HyperSearch;
use mpc_i4c::mpc::{MpcBounds, MpcWeights};
use mpc_i4c::par::Execution;
use mpc_i4c::plant::{NoiseConfig, PendulumParams, PlantState, SimScenario};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable overriding the campaign seed.
pub const SEED_ENV: &str = "MPC_I4C_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub label: String,
    /// Directory receiving the campaign artifacts.
    pub output_dir: PathBuf,
    pub seed: u64,
    pub plant: PlantSection,
    pub scenario: ScenarioSection,
    pub noise: NoiseSection,
    pub mpc: MpcSection,
    #[serde(rename = "loop")]
    pub loop_: LoopSection,
    pub search: SearchSection,
    pub bo: BoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub cart_mass: f64,
    pub pendulum_mass: f64,
    pub rod_length: f64,
    pub gravity: f64,
    pub cart_friction: f64,
    pub pivot_friction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub ts: f64,
    pub duration: f64,
    /// `[p, ṗ, φ, φ̇]`.
    pub initial_state: [f64; 4],
    pub force_limits: [f64; 2],
    pub substeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub enabled: bool,
    pub meas_std_p: f64,
    pub meas_std_phi: f64,
    pub dist_std: f64,
    pub dist_bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSection {
    pub q_y: Vec<f64>,
    pub q_u: f64,
    pub q_du: f64,
    pub q_eps: f64,
    pub v_y: Vec<f64>,
    pub v_u: f64,
    pub v_du: f64,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
    pub u_min: f64,
    pub u_max: f64,
    pub du_min: f64,
    pub du_max: f64,
    pub u_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    pub nd: f64,
    pub rate_ratio: usize,
    pub reference: [f64; 2],
    pub cap_cost: f64,
    pub screening: bool,
    pub max_position: f64,
    pub max_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub theta: Vec<[f64; 2]>,
    pub mu: Vec<[f64; 2]>,
    pub np: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoSection {
    pub n_init: usize,
    pub max_iter: usize,
    pub probes: usize,
    pub refine_top: usize,
    pub refine_iterations: usize,
    pub refine_step: f64,
    pub hyper_starts: usize,
    pub hyper_warm_evals: usize,
    pub hyper_restart_evals: usize,
    pub early_stop: bool,
    pub early_stop_window: usize,
    pub early_stop_tolerance: f64,
    /// Evaluate acquisition probes and hyperparameter starts on all cores.
    pub parallel: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            label: "benchmark".into(),
            output_dir: PathBuf::from("runs/benchmark"),
            seed: 1,
            plant: PlantSection::default(),
            scenario: ScenarioSection::default(),
            noise: NoiseSection::default(),
            mpc: MpcSection::default(),
            loop_: LoopSection::default(),
            search: SearchSection::default(),
            bo: BoSection::default(),
        }
    }
}

impl Default for PlantSection {
    fn default() -> Self {
        let p = PendulumParams::benchmark();
        Self {
            cart_mass: p.cart_mass,
            pendulum_mass: p.pendulum_mass,
            rod_length: p.rod_length,
            gravity: p.gravity,
            cart_friction: p.cart_friction,
            pivot_friction: p.pivot_friction,
        }
    }
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = SimScenario::benchmark();
        Self {
            ts: s.ts,
            duration: s.duration,
            initial_state: s.initial_state.to_array(),
            force_limits: [s.force_limits.0, s.force_limits.1],
            substeps: s.substeps,
        }
    }
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = NoiseConfig::benchmark(0);
        Self {
            enabled: true,
            meas_std_p: n.meas_std_p,
            meas_std_phi: n.meas_std_phi,
            dist_std: n.dist_std,
            dist_bandwidth: n.dist_bandwidth,
        }
    }
}

impl Default for MpcSection {
    fn default() -> Self {
        let l = LoopConfig::benchmark();
        let (w, b) = (&l.weights, &l.bounds);
        Self {
            q_y: w.q_y.clone(),
            q_u: w.q_u[0],
            q_du: w.q_du[0],
            q_eps: w.q_eps,
            v_y: w.v_y.clone(),
            v_u: w.v_u[0],
            v_du: w.v_du[0],
            y_min: b.y_min.clone(),
            y_max: b.y_max.clone(),
            u_min: b.u_min[0],
            u_max: b.u_max[0],
            du_min: b.du_min[0],
            du_max: b.du_max[0],
            u_ref: l.u_ref[0],
        }
    }
}

impl Default for LoopSection {
    fn default() -> Self {
        let l = LoopConfig::benchmark();
        Self {
            nd: l.nd,
            rate_ratio: l.rate_ratio,
            reference: l.reference,
            cap_cost: l.cap_cost,
            screening: l.screening,
            max_position: l.max_position,
            max_angle: l.max_angle,
        }
    }
}

impl Default for SearchSection {
    fn default() -> Self {
        let s = SearchSpace::benchmark();
        Self {
            theta: s.theta.iter().map(|&(a, b)| [a, b]).collect(),
            mu: s.mu.iter().map(|&(a, b)| [a, b]).collect(),
            np: [s.np.0, s.np.1],
        }
    }
}

impl Default for BoSection {
    fn default() -> Self {
        let b = BoConfig::benchmark(0);
        let es = EarlyStop::default();
        Self {
            n_init: b.n_init,
            max_iter: b.max_iter,
            probes: b.acquisition.probes,
            refine_top: b.acquisition.refine_top,
            refine_iterations: b.acquisition.refine_iterations,
            refine_step: b.acquisition.refine_step,
            hyper_starts: b.hyper_search.starts,
            hyper_warm_evals: b.hyper_search.warm_evals,
            hyper_restart_evals: b.hyper_search.restart_evals,
            early_stop: false,
            early_stop_window: es.window,
            early_stop_tolerance: es.tolerance,
            parallel: true,
        }
    }
}

/// A semantic error tied to a key of the file.
struct KeyError {
    section: &'static str,
    key: &'static str,
    message: String,
}

fn key_err(section: &'static str, key: &'static str, message: impl Into<String>) -> KeyError {
    KeyError {
        section,
        key,
        message: message.into(),
    }
}

/// 1-based line of `key` inside `[section]` (top level when `section` is
/// empty), if it appears in the source.
fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl CampaignConfig {
    pub fn from_toml_str(src: &str, origin: &Path) -> Result<Self, CliError> {
        let cfg: CampaignConfig = toml::from_str(src).map_err(|e| {
            let line = e
                .span()
                .map(|s| src[..s.start.min(src.len())].matches('\n').count() + 1);
            let msg = e.message().to_string();
            CliError::Config(match line {
                Some(l) => format!("{}:{l}: {msg}", origin.display()),
                None => format!("{}: {msg}", origin.display()),
            })
        })?;
        if let Err(e) = cfg.check() {
            let path = if e.section.is_empty() {
                e.key.to_string()
            } else {
                format!("{}.{}", e.section, e.key)
            };
            let at = match locate(src, e.section, e.key) {
                Some(l) => format!("{}:{l}", origin.display()),
                None => origin.display().to_string(),
            };
            return Err(CliError::Config(format!("{at}: {path}: {}", e.message)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let src = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&src, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `MPC_I4C_SEED` if set.
    pub fn apply_env(&mut self) -> Result<(), CliError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    fn check(&self) -> Result<(), KeyError> {
        let p = &self.plant;
        for (key, v, strict) in [
            ("cart_mass", p.cart_mass, true),
            ("pendulum_mass", p.pendulum_mass, true),
            ("rod_length", p.rod_length, true),
            ("gravity", p.gravity, true),
            ("cart_friction", p.cart_friction, false),
            ("pivot_friction", p.pivot_friction, false),
        ] {
            let ok = v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
            if !ok {
                let need = if strict { "> 0" } else { ">= 0" };
                return Err(key_err("plant", key, format!("must be finite and {need}")));
            }
        }

        let s = &self.scenario;
        if !(s.ts > 0.0 && s.ts.is_finite()) {
            return Err(key_err("scenario", "ts", "must be > 0"));
        }
        let ratio = s.duration / s.ts;
        if !(s.duration > 0.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(key_err("scenario", "duration", "must be a positive multiple of ts"));
        }
        if s.initial_state.iter().any(|v| !v.is_finite()) {
            return Err(key_err("scenario", "initial_state", "must be finite"));
        }
        if !(s.force_limits[0] < s.force_limits[1]) {
            return Err(key_err("scenario", "force_limits", "need F_min < F_max"));
        }
        if s.substeps == 0 {
            return Err(key_err("scenario", "substeps", "must be >= 1"));
        }

        let n = &self.noise;
        for (key, v) in [
            ("meas_std_p", n.meas_std_p),
            ("meas_std_phi", n.meas_std_phi),
            ("dist_std", n.dist_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(key_err("noise", key, "must be finite and >= 0"));
            }
        }
        if !(n.dist_bandwidth > 0.0 && n.dist_bandwidth.is_finite()) {
            return Err(key_err("noise", "dist_bandwidth", "must be > 0"));
        }

        let m = &self.mpc;
        if m.q_y.len() != 2 || m.q_y.iter().any(|q| !(*q >= 0.0)) {
            return Err(key_err("mpc", "q_y", "need two weights >= 0"));
        }
        for (key, v) in [("q_u", m.q_u), ("q_du", m.q_du)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(key_err("mpc", key, "must be >= 0"));
            }
        }
        if !(m.q_eps > 0.0 && m.q_eps.is_finite()) {
            return Err(key_err("mpc", "q_eps", "must be > 0"));
        }
        if m.v_y.len() != 2 || m.v_y.iter().any(|v| !(*v > 0.0)) {
            return Err(key_err("mpc", "v_y", "need two values > 0"));
        }
        for (key, v) in [("v_u", m.v_u), ("v_du", m.v_du)] {
            if !(v > 0.0) {
                return Err(key_err("mpc", key, "must be > 0"));
            }
        }
        if m.y_min.len() != 2 {
            return Err(key_err("mpc", "y_min", "need two entries"));
        }
        if m.y_max.len() != 2 || m.y_min.iter().zip(&m.y_max).any(|(a, b)| !(a < b)) {
            return Err(key_err("mpc", "y_max", "need two entries with y_min < y_max"));
        }
        if !(m.u_min < m.u_max) {
            return Err(key_err("mpc", "u_max", "need u_min < u_max"));
        }
        if !(m.du_min < m.du_max) {
            return Err(key_err("mpc", "du_max", "need du_min < du_max"));
        }
        if !m.u_ref.is_finite() {
            return Err(key_err("mpc", "u_ref", "must be finite"));
        }

        let l = &self.loop_;
        if !(l.nd > 0.0 && l.nd.is_finite()) {
            return Err(key_err("loop", "nd", "must be > 0"));
        }
        if l.rate_ratio == 0 {
            return Err(key_err("loop", "rate_ratio", "must be >= 1"));
        }
        if l.reference.iter().any(|r| !r.is_finite()) {
            return Err(key_err("loop", "reference", "must be finite"));
        }
        if !l.cap_cost.is_finite() {
            return Err(key_err("loop", "cap_cost", "must be finite"));
        }
        if !(l.max_position > 0.0) {
            return Err(key_err("loop", "max_position", "must be > 0"));
        }
        if !(l.max_angle > 0.0) {
            return Err(key_err("loop", "max_angle", "must be > 0"));
        }

        let sp = &self.search;
        let bad_box = |b: &Vec<[f64; 2]>| b.iter().any(|[lo, hi]| !(lo < hi) || !lo.is_finite() || !hi.is_finite());
        if sp.theta.len() != 3 || bad_box(&sp.theta) {
            return Err(key_err("search", "theta", "need three finite [lower, upper] pairs with lower < upper"));
        }
        if sp.mu.len() != 6 || bad_box(&sp.mu) {
            return Err(key_err("search", "mu", "need six finite [lower, upper] pairs with lower < upper"));
        }
        if sp.np[0] == 0 || sp.np[0] > sp.np[1] {
            return Err(key_err("search", "np", "need 1 <= lower <= upper"));
        }

        let b = &self.bo;
        if b.n_init == 0 {
            return Err(key_err("bo", "n_init", "must be >= 1"));
        }
        if b.max_iter < b.n_init {
            return Err(key_err("bo", "max_iter", "must be >= n_init"));
        }
        if b.probes == 0 {
            return Err(key_err("bo", "probes", "must be >= 1"));
        }
        if !(b.refine_step > 0.0 && b.refine_step <= 1.0) {
            return Err(key_err("bo", "refine_step", "must lie in (0, 1]"));
        }
        if b.hyper_starts == 0 {
            return Err(key_err("bo", "hyper_starts", "must be >= 1"));
        }
        if b.early_stop_window == 0 {
            return Err(key_err("bo", "early_stop_window", "must be >= 1"));
        }
        if !(b.early_stop_tolerance >= 0.0) {
            return Err(key_err("bo", "early_stop_tolerance", "must be >= 0"));
        }
        Ok(())
    }

    fn execution(&self) -> Execution {
        if self.bo.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn loop_config(&self) -> LoopConfig {
        let p = &self.plant;
        let s = &self.scenario;
        let n = &self.noise;
        let m = &self.mpc;
        let l = &self.loop_;
        let noise = if n.enabled {
            NoiseConfig {
                meas_std_p: n.meas_std_p,
                meas_std_phi: n.meas_std_phi,
                dist_std: n.dist_std,
                dist_bandwidth: n.dist_bandwidth,
                seed: 0,
            }
        } else {
            NoiseConfig::silent(0)
        };
        LoopConfig {
            plant: PendulumParams {
                cart_mass: p.cart_mass,
                pendulum_mass: p.pendulum_mass,
                rod_length: p.rod_length,
                gravity: p.gravity,
                cart_friction: p.cart_friction,
                pivot_friction: p.pivot_friction,
            },
            scenario: SimScenario {
                ts: s.ts,
                duration: s.duration,
                initial_state: PlantState::from_array(s.initial_state),
                force_limits: (s.force_limits[0], s.force_limits[1]),
                substeps: s.substeps,
            },
            noise,
            weights: MpcWeights {
                q_y: m.q_y.clone(),
                q_u: vec![m.q_u],
                q_du: vec![m.q_du],
                q_eps: m.q_eps,
                v_y: m.v_y.clone(),
                v_u: vec![m.v_u],
                v_du: vec![m.v_du],
            },
            bounds: MpcBounds {
                y_min: m.y_min.clone(),
                y_max: m.y_max.clone(),
                u_min: vec![m.u_min],
                u_max: vec![m.u_max],
                du_min: vec![m.du_min],
                du_max: vec![m.du_max],
            },
            u_ref: vec![m.u_ref],
            nd: l.nd,
            rate_ratio: l.rate_ratio,
            reference: l.reference,
            cap_cost: l.cap_cost,
            screening: l.screening,
            max_position: l.max_position,
            max_angle: l.max_angle,
        }
    }

    pub fn search_space(&self) -> SearchSpace {
        let pairs = |v: &Vec<[f64; 2]>| v.iter().map(|&[a, b]| (a, b)).collect();
        SearchSpace {
            theta: pairs(&self.search.theta),
            mu: pairs(&self.search.mu),
            np: (self.search.np[0], self.search.np[1]),
        }
    }

    pub fn bo_config(&self) -> BoConfig {
        let b = &self.bo;
        let execution = self.execution();
        BoConfig {
            n_init: b.n_init,
            max_iter: b.max_iter,
            seed: self.seed,
            cap_cost: self.loop_.cap_cost,
            early_stop: b.early_stop.then_some(EarlyStop {
                window: b.early_stop_window,
                tolerance: b.early_stop_tolerance,
            }),
            acquisition: AcquisitionSearch {
                probes: b.probes,
                refine_top: b.refine_top,
                refine_iterations: b.refine_iterations,
                refine_step: b.refine_step,
                execution,
            },
            hyper_search: HyperSearch {
                starts: b.hyper_starts,
                warm_evals: b.hyper_warm_evals,
                restart_evals: b.hyper_restart_evals,
                execution,
            },
        }
    }
}
