//! Coupled mass-spring forecasting: block-to-block prediction of the next
//! `N` states and autoregressive rollouts built from those blocks.

use rayon::prelude::*;

use super::config::{ExperimentConfig, Method, SpringConfig};
use super::metrics::{median, n_step_mse, rollout_mse};
use super::report::MetricsReport;
use super::{combine_digests, derive_seed, digest_tasks, digest_trajectories, OutDir};
use crate::diffnet::{Activation, MlpSpec, Network, PairBatch, ParameterSet, Tape};
use crate::error::{Error, Result};
use crate::metalearn::{
    fomaml_adapt, meta_train, train_fomaml, train_noadapt, write_loss_csv, ContextSolver, Normalizer, Task, TrainedModel,
};
use crate::systems::{fmt_f64, rk4_step, spring_dataset, spring_derivative, spring_tasks, SpringRecord, SPRING_STATE_NAMES};

pub const SPRING_DIM: usize = 4;

#[derive(Debug, Clone)]
pub struct SpringData {
    pub train: Vec<SpringRecord>,
    pub test: Vec<SpringRecord>,
    pub train_tasks: Vec<Task>,
    pub digest: String,
}

pub fn spring_data(cfg: &SpringConfig, seed: u64) -> Result<SpringData> {
    let train = spring_dataset(derive_seed(seed, "harness.spring.train"), cfg.train_traj, cfg.duration, cfg.dt)?;
    let test = spring_dataset(derive_seed(seed, "harness.spring.test"), cfg.test_traj, cfg.duration, cfg.dt)?;
    let train_tasks = spring_tasks(&train, cfg.window, cfg.windows_per_traj, derive_seed(seed, "harness.spring.windows"))?;
    let digest = combine_digests(&[
        &digest_trajectories(train.iter().map(|r| &r.traj)),
        &digest_trajectories(test.iter().map(|r| &r.traj)),
        &digest_tasks(&train_tasks),
    ]);
    Ok(SpringData {
        train,
        test,
        train_tasks,
        digest,
    })
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Replaces every output block by its change from the input block.
pub fn residual_task(t: &Task) -> Task {
    let res = |xs: &[Vec<f64>], ys: &[Vec<f64>]| xs.iter().zip(ys).map(|(x, y)| sub(y, x)).collect();
    Task {
        context_x: t.context_x.clone(),
        context_y: res(&t.context_x, &t.context_y),
        target_x: t.target_x.clone(),
        target_y: res(&t.target_x, &t.target_y),
        system: t.system.clone(),
    }
}

/// `[4N + d_c, hidden..., 4N]` with SiLU.
pub fn spring_spec(cfg: &SpringConfig, d_c: usize) -> Result<MlpSpec> {
    let block = SPRING_DIM * cfg.window;
    let mut sizes = vec![block + d_c];
    sizes.extend(&cfg.hidden);
    sizes.push(block);
    MlpSpec::new(sizes, Activation::Silu)
}

/// A block predictor. Learned models map a standardized input block to the
/// standardized change over the next block.
#[derive(Debug, Clone)]
pub enum SpringModel {
    Meta { model: TrainedModel, norm: Normalizer },
    Fomaml { spec: MlpSpec, theta: ParameterSet, norm: Normalizer, k: usize, alpha: f64 },
    NoAdapt { spec: MlpSpec, theta: ParameterSet, norm: Normalizer },
    Oracle,
}

/// A model specialized to one trajectory.
enum Adapted<'a> {
    Context { net: Network<'a>, c: Vec<f64>, norm: &'a Normalizer },
    Weights { spec: &'a MlpSpec, theta: ParameterSet, norm: &'a Normalizer },
    Oracle(&'a SpringRecord),
}

impl Adapted<'_> {
    fn predict(&self, block: &[f64], last: &[f64], tape: &mut Tape) -> Result<Vec<f64>> {
        let learned = |net: &Network<'_>, c: &[f64], norm: &Normalizer, tape: &mut Tape| {
            let mut input = norm.apply_x(block);
            input.extend_from_slice(c);
            let d = norm.invert_y(net.forward(&input, tape));
            block.iter().zip(d).map(|(x, d)| x + d).collect::<Vec<f64>>()
        };
        Ok(match self {
            Adapted::Context { net, c, norm } => learned(net, c, norm, tape),
            Adapted::Weights { spec, theta, norm } => learned(&Network::new(spec, theta)?, &[], norm, tape),
            Adapted::Oracle(rec) => {
                let n = block.len() / SPRING_DIM;
                let mut s: [f64; 4] = last.try_into().map_err(|_| Error::shape("spring state width"))?;
                let mut out = Vec::with_capacity(block.len());
                for _ in 0..n {
                    s = rk4_step(|x| spring_derivative(&rec.params, x), &s, rec.traj.dt)?;
                    out.extend_from_slice(&s);
                }
                out
            }
        })
    }
}

/// Errors of one test trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SpringEval {
    pub mse_block: f64,
    pub rollout: f64,
    pub diverged: bool,
    pub predicted: Vec<Vec<f64>>,
}

fn flat(states: &[Vec<f64>]) -> Vec<f64> {
    states.iter().flatten().copied().collect()
}

impl SpringModel {
    fn adapt<'a>(&'a self, rec: &'a SpringRecord, t0: usize, n: usize) -> Result<Adapted<'a>> {
        let s = &rec.traj.states;
        let x = flat(&s[t0 - 2 * n..t0 - n]);
        let y = flat(&s[t0 - n..t0]);
        let pair = |norm: &Normalizer| -> Result<PairBatch> {
            let mut b = PairBatch::new(x.len(), y.len());
            b.push(&norm.apply_x(&x), &norm.apply_y(&sub(&y, &x)))?;
            Ok(b)
        };
        Ok(match self {
            SpringModel::Meta { model, norm } => {
                let net = Network::new(&model.spec, &model.theta)?;
                let c = ContextSolver::default().solve(&net, &pair(norm)?, model.cfg.d_c, &model.cfg.inference(), None)?;
                Adapted::Context { net, c, norm }
            }
            SpringModel::Fomaml { spec, theta, norm, k, alpha } => Adapted::Weights {
                spec,
                theta: fomaml_adapt(spec, theta, &pair(norm)?, *k, *alpha)?,
                norm,
            },
            SpringModel::NoAdapt { spec, theta, norm } => Adapted::Weights {
                spec,
                theta: theta.clone(),
                norm,
            },
            SpringModel::Oracle => Adapted::Oracle(rec),
        })
    }

    /// Adapts on the two blocks before `start`, then predicts `steps` states
    /// from `start` block by block, feeding each prediction back as input.
    pub fn evaluate(&self, rec: &SpringRecord, start: usize, n: usize, steps: usize) -> Result<SpringEval> {
        let s = &rec.traj.states;
        if steps % n != 0 || start < 2 * n || start + steps > s.len() {
            return Err(Error::invalid("rollout does not fit the trajectory"));
        }
        let adapted = self.adapt(rec, start, n)?;
        let mut tape = Tape::default();
        let mut block = flat(&s[start - n..start]);
        let mut predicted: Vec<Vec<f64>> = Vec::with_capacity(steps);
        for _ in 0..steps / n {
            let last = predicted.last().cloned().unwrap_or_else(|| s[start - 1].clone());
            let next = adapted.predict(&block, &last, &mut tape)?;
            predicted.extend(next.chunks(SPRING_DIM).map(<[f64]>::to_vec));
            if next.iter().any(|v| !v.is_finite()) {
                break;
            }
            block = next;
        }
        predicted.resize(steps, vec![f64::NAN; SPRING_DIM]);
        let truth = &s[start..start + steps];
        let mse_block = n_step_mse(&predicted, truth, n)?;
        let mse_block = if mse_block.is_finite() { mse_block } else { f64::INFINITY };
        let (rollout, diverged) = rollout_mse(&predicted, truth)?;
        Ok(SpringEval {
            mse_block,
            rollout,
            diverged,
            predicted,
        })
    }
}

/// Trains `method` on residual, standardized windows.
pub fn train_spring(method: Method, data: &SpringData, cfg: &SpringConfig, seed: u64) -> Result<(SpringModel, Vec<f64>)> {
    if method == Method::Oracle {
        return Ok((SpringModel::Oracle, Vec::new()));
    }
    let residual: Vec<Task> = data.train_tasks.iter().map(residual_task).collect();
    let norm = Normalizer::fit(&residual)?;
    let tasks: Vec<Task> = residual.iter().map(|t| norm.apply_task(t)).collect::<Result<_>>()?;
    Ok(match method {
        Method::MetaSysId => {
            let spec = spring_spec(cfg, cfg.meta.d_c)?;
            let out = meta_train(&tasks, &spec, &cfg.meta, derive_seed(seed, "harness.spring.meta"))?;
            (SpringModel::Meta { model: out.model, norm }, out.epoch_losses)
        }
        Method::Fomaml => {
            let spec = spring_spec(cfg, 0)?;
            let theta = train_fomaml(&tasks, &spec, &cfg.fomaml, derive_seed(seed, "harness.spring.fomaml"))?;
            let (k, alpha) = (cfg.fomaml.k, cfg.fomaml.alpha);
            (SpringModel::Fomaml { spec, theta, norm, k, alpha }, Vec::new())
        }
        Method::NoAdapt => {
            let spec = spring_spec(cfg, 0)?;
            let theta = train_noadapt(&tasks, &spec, &cfg.noadapt, derive_seed(seed, "harness.spring.no_adapt"))?;
            (SpringModel::NoAdapt { spec, theta, norm }, Vec::new())
        }
        m => return Err(Error::Config(format!("{} does not apply to the mass-spring study", m.name()))),
    })
}

/// Evaluates a model on every test trajectory.
pub fn evaluate_spring(model: &SpringModel, test: &[SpringRecord], cfg: &SpringConfig) -> Result<Vec<SpringEval>> {
    let r: Vec<Result<SpringEval>> = test
        .par_iter()
        .map(|rec| model.evaluate(rec, cfg.rollout_start, cfg.window, cfg.rollout_steps))
        .collect();
    r.into_iter().collect()
}

pub fn block_metric(method: Method) -> String {
    format!("spring/{}/median_block_mse", method.name())
}

pub fn rollout_metric(method: Method) -> String {
    format!("spring/{}/median_rollout_mse", method.name())
}

pub fn run_spring(cfg: &ExperimentConfig, digest: &str, seed: u64, out: &OutDir) -> Result<MetricsReport> {
    let sc = &cfg.spring;
    let out = out.seed(seed);
    let data = spring_data(sc, seed)?;
    let mut report = MetricsReport::new(cfg.experiment.name(), digest);
    report.data_digests.insert(seed, data.digest.clone());
    let mut rows = Vec::new();
    let mut result = Ok(());
    for method in cfg.methods() {
        log::info!("seed {seed}: mass-spring {}", method.name());
        let step = (|| -> Result<()> {
            let (model, losses) = train_spring(method, &data, sc, seed)?;
            if !losses.is_empty() {
                if let Some(w) = out.create(&format!("loss_{}.csv", method.name()))? {
                    write_loss_csv(w, &losses, Some(digest))?;
                }
            }
            let evals = evaluate_spring(&model, &data.test, sc)?;
            let blocks: Vec<f64> = evals.iter().map(|e| e.mse_block).collect();
            let rolls: Vec<f64> = evals.iter().map(|e| e.rollout).collect();
            report.record(&block_metric(method), seed, median(&blocks));
            report.record(&rollout_metric(method), seed, median(&rolls));
            let diverged = evals.iter().filter(|e| e.diverged).count();
            report.record(&format!("spring/{}/diverged", method.name()), seed, diverged as f64);
            for (i, e) in evals.iter().enumerate() {
                rows.push(vec![
                    method.name().to_string(),
                    i.to_string(),
                    fmt_f64(e.mse_block),
                    fmt_f64(e.rollout),
                    e.diverged.to_string(),
                ]);
            }
            if let Some(e) = evals.first() {
                let mut header = vec!["t"];
                header.extend(SPRING_STATE_NAMES);
                let r: Vec<Vec<String>> = e
                    .predicted
                    .iter()
                    .enumerate()
                    .map(|(k, s)| {
                        let mut row = vec![fmt_f64((sc.rollout_start + k) as f64 * sc.dt)];
                        row.extend(s.iter().map(|v| fmt_f64(*v)));
                        row
                    })
                    .collect();
                out.write_csv(&format!("rollout0_{}.csv", method.name()), digest, &header, &r)?;
            }
            Ok(())
        })();
        if let Err(e) = step {
            report.failures.push(format!("seed {seed}, {}: {e}", method.name()));
            result = Err(e);
            break;
        }
    }
    out.write_csv(
        "trajectory_mse.csv",
        digest,
        &["method", "trajectory", "block_mse", "rollout_mse", "diverged"],
        &rows,
    )?;
    result.map(|_| report)
}
