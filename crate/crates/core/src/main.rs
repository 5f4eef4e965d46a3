use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use highway_rl::harness::{self, ExperimentConfig, HarnessError, CONFIG_REFERENCE};

#[derive(Parser, Debug)]
#[command(name = "highway-rl", version, about = "Train and evaluate highway driving agents")]
#[command(after_long_help = CONFIG_REFERENCE)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the configured agent once per seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output root; defaults to `experiment.out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint greedily on the configured seeds.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Not needed for the rules and random agents.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<out_dir>/eval`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the per-step trace of one episode as CSV.
    Rollout {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        /// Defaults to `<out_dir>/trajectory_seed_<seed>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every agent listed in `[compare]` on identical seeds.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<out_dir>/compare`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.experiment.out_dir.clone());
            let report = harness::run_train(&cfg, &out)?;
            for run in &report.runs {
                let last = run.evals.last();
                println!(
                    "seed {}: {} episodes, faults {}, final eval return {}, checkpoint {}",
                    run.seed,
                    run.episodes.len(),
                    run.faults.faults_cum,
                    last.map_or("n/a".to_string(), |e| format!("{:.4} ± {:.4}", e.return_mean, e.return_std)),
                    run.checkpoint.display()
                );
            }
        }
        Command::Eval { config, checkpoint, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.experiment.out_dir.join("eval"));
            let s = harness::run_eval(&cfg, checkpoint.as_deref(), &out)?;
            println!(
                "{} on {}: return {:.4} ± {:.4} over {} episodes, collision rate {:.4}, off-road rate {:.4}, mean speed {:.3} m/s",
                s.agent, s.scenario, s.return_mean, s.return_std, s.episodes, s.collision_rate, s.off_road_rate, s.mean_speed
            );
            println!("wrote {}", out.display());
        }
        Command::Rollout {
            config,
            checkpoint,
            seed,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.experiment.out_dir.join(format!("trajectory_seed_{seed}.csv")));
            let ret = harness::export_trajectory(&cfg, checkpoint.as_deref(), seed, &out)?;
            println!("episode return {ret:.4}, wrote {}", out.display());
        }
        Command::Compare { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.experiment.out_dir.join("compare"));
            let report = harness::compare(&cfg, &out)?;
            print!("{}", report.table());
            if let Some((agent, reason)) = report.failures.first() {
                return Err(HarnessError::Usage(format!("agent `{agent}` could not be evaluated: {reason}")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
