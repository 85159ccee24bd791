//! On-disk record formats.

use std::fmt::Write as _;
use std::path::Path;

use mpc_i4c::bayesopt::{BoDataset, BoRecord, DesignPoint};
use mpc_i4c::experiment::Sample;
use mpc_i4c::gp::GpHyperparams;
use mpc_i4c::RunStatus;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// One line of `iterations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub theta: Vec<f64>,
    pub mu: Vec<f64>,
    pub np: usize,
    pub cost: f64,
    pub status: RunStatus,
    /// Seed of this experiment's noise and disturbance.
    pub seed: u64,
    /// GP hyperparameters in effect when the point was proposed.
    pub hyper: Option<GpHyperparams>,
    /// Expected improvement at the proposed point.
    pub ei: Option<f64>,
    pub running_best: f64,
    pub best_index: usize,
}

impl IterationRecord {
    pub fn design_point(&self) -> DesignPoint {
        DesignPoint {
            theta: self.theta.clone(),
            mu: self.mu.clone(),
            np: self.np,
        }
    }

    pub fn to_bo_record(&self) -> BoRecord {
        BoRecord {
            index: self.index,
            point: self.design_point(),
            cost: self.cost,
            status: self.status,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Wall-clock time of one iteration, kept apart from the deterministic log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub index: usize,
    pub wall_ms: f64,
}

/// Contents of `best.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub label: String,
    pub campaign_seed: u64,
    pub index: usize,
    pub seed: u64,
    pub theta: Vec<f64>,
    pub mu: Vec<f64>,
    pub np: usize,
    pub cost: f64,
    pub status: RunStatus,
}

impl BestRecord {
    pub fn design_point(&self) -> DesignPoint {
        DesignPoint {
            theta: self.theta.clone(),
            mu: self.mu.clone(),
            np: self.np,
        }
    }
}

/// Parse `iterations.jsonl`; indices must run 0, 1, 2, …
pub fn parse_log(src: &str, origin: &Path) -> Result<Vec<IterationRecord>, CliError> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: IterationRecord = serde_json::from_str(line)
            .map_err(|e| CliError::Config(format!("{}:{}: {e}", origin.display(), i + 1)))?;
        if rec.index != out.len() {
            return Err(CliError::Config(format!(
                "{}:{}: expected iteration {}, found {}",
                origin.display(),
                i + 1,
                out.len(),
                rec.index
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn dataset_from_log(records: &[IterationRecord]) -> BoDataset {
    BoDataset {
        records: records.iter().map(IterationRecord::to_bo_record).collect(),
    }
}

/// `iteration,cost,running_best`.
pub fn convergence_csv(records: &[IterationRecord]) -> String {
    let mut s = String::from("iteration,cost,running_best\n");
    for r in records {
        let _ = writeln!(s, "{},{},{}", r.index, r.cost, r.running_best);
    }
    s
}

pub const TRAJECTORY_HEADER: &str = "t,p,phi,p_meas,phi_meas,u,F_applied,g,epsilon_active";

pub fn trajectory_csv(samples: &[Sample]) -> String {
    let mut s = String::with_capacity(samples.len() * 120);
    s.push_str(TRAJECTORY_HEADER);
    s.push('\n');
    for x in samples {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            x.t,
            x.p,
            x.phi,
            x.p_meas,
            x.phi_meas,
            x.u,
            x.f_applied,
            x.g,
            u8::from(x.epsilon_active)
        );
    }
    s
}
