//! Command-line front end. Exit codes: 0 success, 2 invalid input or
//! configuration, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctxid::diffnet::gradcheck::check_random_networks;
use ctxid::harness::{generate_data, run_experiment, store, Experiment, ExperimentConfig, OutDir};
use ctxid::Error;

#[derive(Parser)]
#[command(name = "ctxid", version, about = "Context identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the long training schedules.
    #[arg(long)]
    full_budget: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate datasets and their manifests.
    GenData(Common),
    /// Train every configured method and save the models.
    Train(Common),
    /// Train and evaluate (polynomial or mass-spring by config).
    Eval(Common),
    /// Closed-loop rotorcraft control study.
    Mpc(Common),
    /// Test-time inference budget sweep.
    SweepBudget(Common),
    /// Parameter interpolation between polynomial families.
    Interpolate(Common),
    /// Analytic versus finite-difference gradients on random networks.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        networks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(common: &Common, implied: Option<Experiment>) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => ExperimentConfig::new(implied.unwrap_or(Experiment::Polynomial)),
    };
    if let Some(e) = implied {
        if cfg.experiment != e {
            return Err(Error::Config(format!(
                "this subcommand runs {}, the config is for {}",
                e.name(),
                cfg.experiment.name()
            )));
        }
    }
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    cfg.full_budget |= common.full_budget;
    cfg.validate()?;
    Ok(cfg)
}

fn experiment(common: &Common, implied: Option<Experiment>) -> Result<(), Error> {
    let cfg = load(common, implied)?;
    if implied.is_none() && !matches!(cfg.experiment, Experiment::Polynomial | Experiment::MassSpring) {
        return Err(Error::Config(format!(
            "eval runs polynomial or mass_spring configs; use the dedicated subcommand for {}",
            cfg.experiment.name()
        )));
    }
    let outcome = run_experiment(&cfg, common.out.as_deref())?;
    let mut stdout = std::io::stdout().lock();
    outcome.report.write_summary_csv(&mut stdout)?;
    match outcome.error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = load(&c, None)?;
            let out = c.out.clone().unwrap_or_else(|| PathBuf::from("data"));
            for m in generate_data(&cfg, &OutDir::new(Some(&out)))? {
                println!("seed {}: {} items, hash {}", m.seed, m.count, m.content_hash);
            }
            Ok(())
        }
        Command::Train(c) => {
            let cfg = load(&c, None)?;
            let out = c.out.clone().unwrap_or_else(|| PathBuf::from("models"));
            for p in store::train_and_save(&cfg, &OutDir::new(Some(&out)))? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Eval(c) => experiment(&c, None),
        Command::Mpc(c) => experiment(&c, Some(Experiment::DroneMpc)),
        Command::SweepBudget(c) => experiment(&c, Some(Experiment::BudgetSweep)),
        Command::Interpolate(c) => experiment(&c, Some(Experiment::Interpolation)),
        Command::Gradcheck { networks, seed } => {
            let r = check_random_networks(networks, seed)?;
            println!(
                "networks {} coordinates {} failures {} max relative error {:e}",
                r.networks, r.coordinates, r.failures, r.max_rel_error
            );
            if r.passed() {
                Ok(())
            } else {
                Err(Error::Numerical(format!("{} gradient coordinates disagree", r.failures)))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
