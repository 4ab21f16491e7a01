use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use uman_cli::{run_experiment, run_sweep, validate, ExperimentConfig, SweepAxis};

#[derive(Parser)]
#[command(
    name = "uman",
    version,
    about = "Open-set multi-source domain adaptation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and print the derived label layout.
    Validate { config: PathBuf },
    /// Train and evaluate every method on every seed.
    Run {
        config: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Repeat the experiment over values of one label-space axis.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

/// Loads a config, shifting every seed by `UMAN_SEED_OFFSET` when set.
fn load(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Ok(raw) = std::env::var("UMAN_SEED_OFFSET") {
        let offset: u64 = raw
            .parse()
            .context("UMAN_SEED_OFFSET must be a non-negative integer")?;
        for s in &mut cfg.seeds {
            *s = s.checked_add(offset).context("seed offset overflows")?;
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let violations = cfg.violations();
            if !violations.is_empty() {
                eprintln!("{} is invalid:", config.display());
                for v in &violations {
                    eprintln!("  - {v}");
                }
                return Ok(ExitCode::FAILURE);
            }
            print!("{}", validate::describe(&cfg, &cfg.partition()?));
        }
        Command::Run { config, jobs } => {
            let cfg = load(&config)?;
            let records = run_experiment(&cfg, &cfg.output_dir, jobs)?;
            for r in &records {
                match r.mean_accuracy() {
                    Some(acc) => println!("{:<15} seed {:<4} {acc:.4}", r.method.name(), r.seed),
                    None => println!("{:<15} seed {:<4} failed", r.method.name(), r.seed),
                }
            }
            println!("wrote {}", cfg.output_dir.join("summary.csv").display());
        }
        Command::Sweep {
            config,
            axis,
            values,
            jobs,
        } => {
            let cfg = load(&config)?;
            let rows = run_sweep(&cfg, &cfg.output_dir, axis, &values, jobs)?;
            for r in &rows {
                let method = r.method.map_or("-", |m| m.name());
                let mean = r.mean.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{}={:<4} {:<11} {method:<15} {mean}",
                    axis.name(),
                    r.value,
                    r.status
                );
            }
            println!(
                "wrote {}",
                cfg.output_dir
                    .join(format!("sweep_{}.csv", axis.name()))
                    .display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
