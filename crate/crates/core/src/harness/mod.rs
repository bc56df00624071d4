//! Experiment configuration, metrics, reports and the drivers behind the CLI.
//!
//! Every driver works one seed at a time and derives all of its randomness
//! from that seed, so a seed's results do not depend on which other seeds run
//! alongside it. Outputs are CSV files headed by the config digest.

pub mod config;
pub mod drone;
pub mod metrics;
pub mod poly;
pub mod report;
pub mod spring;
pub mod store;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use sha2::{Digest, Sha256};

pub use config::*;
pub use metrics::*;
pub use report::*;
pub use store::{generate_data, train_and_save};

use crate::error::Result;
use crate::metalearn::Task;
use crate::rng;
use crate::systems::Trajectory;

/// Independent seed for one stage of one run.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    rng::stream(seed, label).gen()
}

fn hash_rows<'a>(h: &mut Sha256, rows: impl IntoIterator<Item = &'a Vec<f64>>) {
    for r in rows {
        h.update((r.len() as u64).to_le_bytes());
        for v in r {
            h.update(v.to_le_bytes());
        }
    }
}

fn hex(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the raw bytes of every pair in every task.
pub fn digest_tasks(tasks: &[Task]) -> String {
    let mut h = Sha256::new();
    for t in tasks {
        hash_rows(&mut h, t.context_x.iter().chain(&t.context_y).chain(&t.target_x).chain(&t.target_y));
    }
    hex(h)
}

/// SHA-256 over the raw bytes of states, actions and wind of every trajectory.
pub fn digest_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> String {
    let mut h = Sha256::new();
    for t in trajs {
        h.update(t.dt.to_le_bytes());
        hash_rows(&mut h, t.states.iter().chain(&t.actions));
        for w in &t.wind {
            h.update(w.to_le_bytes());
        }
    }
    hex(h)
}

/// Combines several digests into one.
pub fn combine_digests(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex(h)
}

/// Output location of one seed, created on demand. `None` disables output.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: Option<PathBuf>,
}

impl OutDir {
    pub fn new(root: Option<&Path>) -> Self {
        OutDir {
            root: root.map(Path::to_path_buf),
        }
    }

    pub fn none() -> Self {
        OutDir { root: None }
    }

    pub fn seed(&self, seed: u64) -> OutDir {
        OutDir {
            root: self.root.as_ref().map(|r| r.join(format!("seed_{seed}"))),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Buffered writer for `name`, or `None` when output is disabled.
    pub fn create(&self, name: &str) -> Result<Option<BufWriter<File>>> {
        match &self.root {
            None => Ok(None),
            Some(r) => {
                std::fs::create_dir_all(r)?;
                Ok(Some(BufWriter::new(File::create(r.join(name))?)))
            }
        }
    }

    /// Writes a CSV headed by the config digest.
    pub fn write_csv(&self, name: &str, digest: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        if let Some(mut w) = self.create(name)? {
            writeln!(w, "# config_digest: {digest}")?;
            let mut c = csv::Writer::from_writer(w);
            c.write_record(header)?;
            for r in rows {
                c.write_record(r)?;
            }
            c.flush()?;
        }
        Ok(())
    }
}

/// Outcome of a full run: the merged report and the first error, if any
/// stage failed. The report keeps every result produced before the failure.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub error: Option<crate::Error>,
}

/// Runs `cfg` over its seeds, writing per-seed outputs and the merged report
/// under `out`. A failing seed is recorded and the remaining seeds still run.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let eff = cfg.effective();
    let digest = cfg.digest()?;
    let out = OutDir::new(out);
    let mut report = MetricsReport::new(eff.experiment.name(), &digest);
    let mut error = None;
    for &seed in &eff.seeds {
        let res = match eff.experiment {
            Experiment::Polynomial => poly::run_polynomial(&eff, &digest, seed, &out),
            Experiment::BudgetSweep => poly::run_budget_sweep(&eff, &digest, seed, &out),
            Experiment::Interpolation => poly::run_interpolation(&eff, &digest, seed, &out),
            Experiment::MassSpring => spring::run_spring(&eff, &digest, seed, &out),
            Experiment::DroneMpc => drone::run_drone(&eff, &digest, seed, &out),
        };
        match res {
            Ok(r) => report.merge(&r)?,
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                report.failures.push(format!("seed {seed}: {e}"));
                if error.is_none() {
                    error = Some(e);
                }
            }
        }
    }
    if let Some(p) = out.path() {
        report.write_dir(p)?;
        std::fs::write(p.join("config.toml"), cfg.to_toml()?)?;
    }
    Ok(RunOutcome { report, error })
}
