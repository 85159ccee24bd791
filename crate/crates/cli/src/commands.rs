//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mpc_i4c::bayesopt::{BayesOpt, DesignPoint, Evaluation};
use mpc_i4c::experiment::{self, LoopConfig, RunOutcome};
use mpc_i4c::rng::experiment_seed;

use crate::config::CampaignConfig;
use crate::fsutil::{write_atomic, AtomicLog};
use crate::records::{
    convergence_csv, dataset_from_log, parse_log, trajectory_csv, BestRecord, IterationRecord, TimingRecord,
};
use crate::CliError;

pub const ITERATIONS_FILE: &str = "iterations.jsonl";
pub const BEST_FILE: &str = "best.json";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

/// Replayed and recorded costs must agree this closely.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct TuneSummary {
    pub output_dir: PathBuf,
    pub records: Vec<IterationRecord>,
    pub best: BestRecord,
    pub stopped_early: bool,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn constrain(bo: BayesOpt, loop_cfg: &LoopConfig) -> BayesOpt {
    match experiment::feasibility(loop_cfg) {
        Some(f) => bo.with_feasibility(f),
        None => bo,
    }
}

fn best_record(cfg: &CampaignConfig, records: &[IterationRecord]) -> BestRecord {
    let last = records.last().expect("campaign has at least one record");
    let b = &records[last.best_index];
    BestRecord {
        label: cfg.label.clone(),
        campaign_seed: cfg.seed,
        index: b.index,
        seed: b.seed,
        theta: b.theta.clone(),
        mu: b.mu.clone(),
        np: b.np,
        cost: b.cost,
        status: b.status,
    }
}

/// Run (or resume) a tuning campaign and write its artifacts to
/// `cfg.output_dir`.
pub fn tune(cfg: &CampaignConfig, resume: bool) -> Result<TuneSummary, CliError> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let log_path = dir.join(ITERATIONS_FILE);
    let timings_path = dir.join(TIMINGS_FILE);
    let config_path = dir.join(CONFIG_FILE);
    let config_text = cfg.to_toml_string();

    let loop_cfg = cfg.loop_config();
    loop_cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let space = cfg.search_space();
    let bo_cfg = cfg.bo_config();

    let (mut bo, mut log, mut timings, mut records) = if resume && log_path.exists() {
        if config_path.exists() {
            let saved = CampaignConfig::from_toml_str(&read(&config_path)?, &config_path)?;
            if saved != *cfg {
                return Err(CliError::Config(format!(
                    "{} differs from the current configuration; refusing to resume",
                    config_path.display()
                )));
            }
        }
        let text = read(&log_path)?;
        let records = parse_log(&text, &log_path)?;
        let last_hyper = records.iter().rev().find_map(|r| r.hyper);
        let bo = BayesOpt::resume(space, bo_cfg, dataset_from_log(&records), last_hyper)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let bo = constrain(bo, &loop_cfg);
        let timings_text = if timings_path.exists() { read(&timings_path)? } else { String::new() };
        log::info!("resuming campaign at iteration {}", records.len());
        (
            bo,
            AtomicLog::with_contents(&log_path, text),
            AtomicLog::with_contents(&timings_path, timings_text),
            records,
        )
    } else {
        let bo = BayesOpt::new(space, bo_cfg).map_err(|e| CliError::Config(e.to_string()))?;
        let bo = constrain(bo, &loop_cfg);
        (bo, AtomicLog::create(&log_path)?, AtomicLog::create(&timings_path)?, Vec::new())
    };
    write_atomic(&config_path, config_text.as_bytes())?;

    let mut stopped_early = false;
    while !bo.is_done() {
        if bo.should_stop_early() {
            stopped_early = true;
            break;
        }
        let started = Instant::now();
        let cand = bo.propose();
        let seed = experiment_seed(cfg.seed, cand.index as u64);
        let eval = experiment::objective(&cand.point, &loop_cfg, seed);
        let info = bo.record(&cand, eval);
        let rec = IterationRecord {
            index: info.record.index,
            theta: info.record.point.theta.clone(),
            mu: info.record.point.mu.clone(),
            np: info.record.point.np,
            cost: info.record.cost,
            status: info.record.status,
            seed,
            hyper: info.hyper,
            ei: info.ei,
            running_best: info.best_cost,
            best_index: info.best_index,
        };
        log.append_line(&rec.to_json_line())?;
        let timing = TimingRecord {
            index: rec.index,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        timings.append_line(&serde_json::to_string(&timing).expect("timing serializes"))?;
        log::info!(
            "iter {:>3}  cost {:>8.4}  {:<21}  best {:.4} (#{})",
            rec.index,
            rec.cost,
            rec.status.as_str(),
            rec.running_best,
            rec.best_index
        );
        records.push(rec);
    }

    if records.is_empty() {
        return Err(CliError::Config("campaign produced no iterations".into()));
    }
    let best = best_record(cfg, &records);
    write_atomic(&dir.join(CONVERGENCE_FILE), convergence_csv(&records).as_bytes())?;
    let best_json = serde_json::to_string_pretty(&best).expect("best serializes");
    write_atomic(&dir.join(BEST_FILE), format!("{best_json}\n").as_bytes())?;
    Ok(TuneSummary {
        output_dir: dir,
        records,
        best,
        stopped_early,
    })
}

fn with_duration(mut loop_cfg: LoopConfig, duration: Option<f64>) -> Result<LoopConfig, CliError> {
    if let Some(d) = duration {
        loop_cfg.scenario.duration = d;
    }
    loop_cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(loop_cfg)
}

fn export(path: Option<&Path>, out: &RunOutcome) -> Result<(), CliError> {
    if let Some(p) = path {
        write_atomic(p, trajectory_csv(&out.samples).as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub best: PathBuf,
    pub duration: f64,
    pub seed: u64,
    /// Trajectory CSV destination.
    pub out: PathBuf,
}

/// Re-run the best design for `duration` seconds and export its trajectory.
pub fn evaluate(cfg: &CampaignConfig, args: &EvaluateArgs) -> Result<RunOutcome, CliError> {
    let text = read(&args.best)?;
    let best: BestRecord = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.best.display())))?;
    let loop_cfg = with_duration(cfg.loop_config(), Some(args.duration))?;
    let out = experiment::run_closed_loop(&best.design_point(), &loop_cfg, args.seed);
    export(Some(&args.out), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub theta: Option<Vec<f64>>,
    pub mu: Option<Vec<f64>>,
    pub np: Option<usize>,
    pub seed: Option<u64>,
    pub duration: Option<f64>,
    pub no_noise: bool,
    pub export: Option<PathBuf>,
}

/// One experiment at a user-supplied design (zeros and the shortest
/// horizon by default).
pub fn simulate(cfg: &CampaignConfig, args: &SimulateArgs) -> Result<RunOutcome, CliError> {
    let mut c = cfg.clone();
    if args.no_noise {
        c.noise.enabled = false;
    }
    let loop_cfg = with_duration(c.loop_config(), args.duration)?;
    let dp = DesignPoint {
        theta: args.theta.clone().unwrap_or_else(|| vec![0.0; 3]),
        mu: args.mu.clone().unwrap_or_else(|| vec![0.0; 6]),
        np: args.np.unwrap_or(c.search.np[0]),
    };
    if dp.theta.len() != 3 {
        return Err(CliError::Config(format!("--theta needs 3 values, got {}", dp.theta.len())));
    }
    if dp.mu.len() != 6 {
        return Err(CliError::Config(format!("--mu needs 6 values, got {}", dp.mu.len())));
    }
    if dp.np == 0 {
        return Err(CliError::Config("--np must be >= 1".into()));
    }
    let out = experiment::run_closed_loop(&dp, &loop_cfg, args.seed.unwrap_or(c.seed));
    export(args.export.as_deref(), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayOutcome {
    pub index: usize,
    pub recorded: f64,
    pub replayed: Evaluation,
}

/// Re-run record `index` of a campaign log with its recorded seed, using
/// the `config.toml` saved beside the log.
pub fn replay(log_path: &Path, index: usize) -> Result<ReplayOutcome, CliError> {
    let records = parse_log(&read(log_path)?, log_path)?;
    let rec = records
        .get(index)
        .ok_or_else(|| CliError::Config(format!("{} has no record {index}", log_path.display())))?;
    let dir = log_path.parent().unwrap_or_else(|| Path::new("."));
    let cfg = CampaignConfig::load(&dir.join(CONFIG_FILE))?;
    let loop_cfg = cfg.loop_config();
    let replayed = experiment::objective(&rec.design_point(), &loop_cfg, rec.seed);
    let outcome = ReplayOutcome {
        index,
        recorded: rec.cost,
        replayed,
    };
    let diff = (replayed.cost - rec.cost).abs();
    if !(diff < REPLAY_TOLERANCE) || replayed.status != rec.status {
        return Err(CliError::Mismatch(format!(
            "record {index}: recorded {} ({}), replayed {} ({})",
            rec.cost, rec.status, replayed.cost, replayed.status
        )));
    }
    Ok(outcome)
}
