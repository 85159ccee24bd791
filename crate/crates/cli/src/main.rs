use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mpc_i4c_cli::{commands, CampaignConfig, CliError, EvaluateArgs, SimulateArgs};

#[derive(Parser)]
#[command(name = "mpc-i4c", version, about = "Closed-loop Bayesian tuning of hierarchical MPC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a tuning campaign.
    Tune {
        config: PathBuf,
        /// Continue from an existing iterations.jsonl.
        #[arg(long)]
        resume: bool,
    },
    /// Re-run the best design of a campaign and export its trajectory.
    Evaluate {
        best: PathBuf,
        config: PathBuf,
        #[arg(long, default_value_t = 20.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trajectory CSV (default: trajectory.csv next to the best file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment at an explicit design point.
    Simulate {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
        theta: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
        mu: Option<Vec<f64>>,
        #[arg(long)]
        np: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        no_noise: bool,
        /// Write the trajectory CSV here.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Re-run one logged experiment and compare its cost.
    Replay { log: PathBuf, index: usize },
}

fn load(path: &PathBuf) -> Result<CampaignConfig, CliError> {
    let mut cfg = CampaignConfig::load(path)?;
    cfg.apply_env()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Tune { config, resume } => {
            let cfg = load(&config)?;
            let s = commands::tune(&cfg, resume)?;
            println!(
                "{} iterations, best cost {:.4} at iteration {} (np = {}); artifacts in {}",
                s.records.len(),
                s.best.cost,
                s.best.index,
                s.best.np,
                s.output_dir.display()
            );
            if s.stopped_early {
                println!("stopped early: no improvement within the configured window");
            }
        }
        Command::Evaluate {
            best,
            config,
            duration,
            seed,
            out,
        } => {
            let cfg = load(&config)?;
            let out = out.unwrap_or_else(|| best.with_file_name("trajectory.csv"));
            let r = commands::evaluate(&cfg, &EvaluateArgs { best, duration, seed, out: out.clone() })?;
            print_outcome(&r);
            println!("trajectory written to {}", out.display());
        }
        Command::Simulate {
            config,
            theta,
            mu,
            np,
            seed,
            duration,
            no_noise,
            export,
        } => {
            let cfg = load(&config)?;
            let r = commands::simulate(
                &cfg,
                &SimulateArgs {
                    theta,
                    mu,
                    np,
                    seed,
                    duration,
                    no_noise,
                    export,
                },
            )?;
            print_outcome(&r);
        }
        Command::Replay { log, index } => {
            let r = commands::replay(&log, index)?;
            println!(
                "record {}: recorded {} replayed {} ({}): match",
                r.index, r.recorded, r.replayed.cost, r.replayed.status
            );
        }
    }
    Ok(())
}

fn print_outcome(r: &mpc_i4c::experiment::RunOutcome) {
    let max_p = r.samples.iter().map(|s| s.p.abs()).fold(0.0, f64::max);
    let max_phi = r.samples.iter().map(|s| s.phi.abs()).fold(0.0, f64::max);
    println!(
        "cost {:.6}  status {}  samples {}  max|p| {:.4}  max|phi| {:.4}  degraded MPC steps {}",
        r.cost,
        r.status,
        r.samples.len(),
        max_p,
        max_phi,
        r.degraded_steps
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
