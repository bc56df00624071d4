//! Learners compared against context identification: gradient-based
//! adaptation of all weights (first-order MAML), no adaptation, a
//! mean-pooled set encoder, and direct least-squares fitting.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{accumulate_param_grad, check_tasks, initial_params, reduce_grads, EpochOrder, GradScratch};
use super::{batch_mse, Task};
use crate::diffnet::{init_params, Activation, MlpSpec, Network, PairBatch, ParameterSet, Tape};
use crate::error::{ensure_len, Error, Result};
use crate::optim::{adam_step_in_place, AdamState};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoMamlConfig {
    pub k: usize,
    pub alpha: f64,
    pub outer_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl FoMamlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.outer_lr >= 0.0 && self.outer_lr.is_finite()) {
            return Err(Error::Config("fomaml step sizes must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which pairs of each task the non-adaptive regressor is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoAdaptData {
    #[default]
    ContextAndTarget,
    TargetOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoAdaptConfig {
    pub outer_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub data: NoAdaptData,
}

impl NoAdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_lr >= 0.0 && self.outer_lr.is_finite()) {
            return Err(Error::Config("outer_lr must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetEncoderConfig {
    /// Hidden widths of the per-pair encoder.
    pub hidden: Vec<usize>,
    pub d_c: usize,
    pub outer_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl SetEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_c == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("set encoder widths must be >= 1".into()));
        }
        if !(self.outer_lr >= 0.0 && self.outer_lr.is_finite()) {
            return Err(Error::Config("outer_lr must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn encoder_spec(&self, x_dim: usize, y_dim: usize) -> Result<MlpSpec> {
        let mut sizes = vec![x_dim + y_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.d_c);
        MlpSpec::new(sizes, Activation::Silu)
    }
}

/// Shared Adam loop over task batches: `task_grad(task_index, params, grad,
/// weight, scratch)` returns the task loss and adds `weight` times its
/// gradient. Returns final parameters.
fn run_outer_loop(
    n_tasks: usize,
    mut params: Vec<f64>,
    outer_lr: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    what: &str,
    task_grad: impl Fn(usize, &[f64], &mut [f64], f64, &mut GradScratch) -> Result<f64> + Sync,
) -> Result<Vec<f64>> {
    let mut adam = AdamState::new(params.len());
    let mut order = EpochOrder::new(seed, n_tasks);
    for epoch in 0..epochs {
        let idx = order.next_epoch().to_vec();
        for (b, batch) in idx.chunks(batch_size).enumerate() {
            let w = 1.0 / batch.len() as f64;
            let (loss, grad) = reduce_grads(batch, params.len(), |&i, g, s| task_grad(i, &params, g, w, s))?;
            if !loss.is_finite() {
                return Err(Error::non_finite(format!("{what} loss at epoch {epoch}, batch {b}")));
            }
            adam_step_in_place(&mut params, &grad, &mut adam, outer_lr)
                .map_err(|e| Error::non_finite(format!("{what} epoch {epoch}, batch {b}: {e}")))?;
        }
    }
    Ok(params)
}

fn with_values(like: &ParameterSet, values: &[f64]) -> ParameterSet {
    ParameterSet::new(like.shapes().to_vec(), values.to_vec()).expect("same layout")
}

/// Pooled regression without any context input.
pub fn train_noadapt(tasks: &[Task], spec: &MlpSpec, cfg: &NoAdaptConfig, seed: u64) -> Result<ParameterSet> {
    cfg.validate()?;
    spec.validate()?;
    check_tasks(tasks, spec, 0, cfg.data == NoAdaptData::TargetOnly)?;
    let pools: Vec<PairBatch> = tasks
        .iter()
        .map(|t| match cfg.data {
            NoAdaptData::TargetOnly => t.target_batch(),
            NoAdaptData::ContextAndTarget => {
                let mut b = t.context_batch();
                for (x, y) in t.target_x.iter().zip(&t.target_y) {
                    b.push(x, y).expect("validated task");
                }
                b
            }
        })
        .collect();
    let init = initial_params(spec, seed);
    let values = run_outer_loop(
        tasks.len(),
        init.values().to_vec(),
        cfg.outer_lr,
        cfg.epochs,
        cfg.batch_size,
        seed,
        "noadapt",
        |i, p, g, w, s| {
            let theta = with_values(&init, p);
            let net = Network::new(spec, &theta)?;
            Ok(accumulate_param_grad(&net, &pools[i], &[], w, Some(g), None, s))
        },
    )?;
    Ok(with_values(&init, &values))
}

/// Adapts all weights with `k` gradient steps on the context pairs.
pub fn fomaml_adapt(spec: &MlpSpec, theta: &ParameterSet, context: &PairBatch, k: usize, alpha: f64) -> Result<ParameterSet> {
    let mut adapted = theta.clone();
    let mut s = GradScratch::default();
    let mut g = vec![0.0; theta.len()];
    for step in 0..k {
        g.fill(0.0);
        let net = Network::new(spec, &adapted)?;
        let loss = accumulate_param_grad(&net, context, &[], 1.0, Some(&mut g), None, &mut s);
        if !loss.is_finite() {
            return Err(Error::non_finite(format!("adaptation loss at inner step {step}")));
        }
        crate::optim::gd_step_in_place(adapted.values_mut(), &g, alpha)?;
    }
    Ok(adapted)
}

/// First-order MAML: the target-pair gradient at the adapted weights is
/// applied to the shared weights directly.
pub fn train_fomaml(tasks: &[Task], spec: &MlpSpec, cfg: &FoMamlConfig, seed: u64) -> Result<ParameterSet> {
    cfg.validate()?;
    spec.validate()?;
    check_tasks(tasks, spec, 0, true)?;
    let ctx: Vec<PairBatch> = tasks.iter().map(|t| t.context_batch().canonical()).collect();
    let tgt: Vec<PairBatch> = tasks.iter().map(Task::target_batch).collect();
    let init = initial_params(spec, seed);
    let values = run_outer_loop(
        tasks.len(),
        init.values().to_vec(),
        cfg.outer_lr,
        cfg.epochs,
        cfg.batch_size,
        seed,
        "fomaml",
        |i, p, g, w, s| {
            let adapted = fomaml_adapt(spec, &with_values(&init, p), &ctx[i], cfg.k, cfg.alpha)?;
            let net = Network::new(spec, &adapted)?;
            Ok(accumulate_param_grad(&net, &tgt[i], &[], w, Some(g), None, s))
        },
    )?;
    Ok(with_values(&init, &values))
}

/// A jointly trained encoder/decoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEncoderModel {
    pub spec: MlpSpec,
    pub enc_spec: MlpSpec,
    pub theta: ParameterSet,
    pub psi: ParameterSet,
}

/// Mean of the encoder over all pairs, in batch order.
pub fn encode_context(enc: &Network<'_>, batch: &PairBatch) -> Vec<f64> {
    let mut c = vec![0.0; enc.output_dim()];
    let mut input = Vec::with_capacity(enc.input_dim());
    let mut tape = Tape::default();
    for i in 0..batch.len() {
        input.clear();
        input.extend_from_slice(batch.x(i));
        input.extend_from_slice(batch.y(i));
        for (a, v) in c.iter_mut().zip(enc.forward(&input, &mut tape)) {
            *a += v;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    c.iter_mut().for_each(|v| *v *= inv);
    c
}

impl SetEncoderModel {
    /// Context from the (canonicalized) context pairs of a task.
    pub fn context(&self, context: &PairBatch) -> Result<Vec<f64>> {
        let enc = Network::new(&self.enc_spec, &self.psi)?;
        Ok(encode_context(&enc, &context.canonical()))
    }
}

/// Decoder `f(x; c)` and encoder `g(x, y)` trained end to end on target pairs,
/// with `c` the mean of `g` over the context pairs.
pub fn train_setencoder(tasks: &[Task], spec: &MlpSpec, cfg: &SetEncoderConfig, seed: u64) -> Result<SetEncoderModel> {
    cfg.validate()?;
    spec.validate()?;
    check_tasks(tasks, spec, cfg.d_c, true)?;
    let enc_spec = cfg.encoder_spec(tasks[0].x_dim(), tasks[0].y_dim())?;
    let ctx: Vec<PairBatch> = tasks.iter().map(|t| t.context_batch().canonical()).collect();
    let tgt: Vec<PairBatch> = tasks.iter().map(Task::target_batch).collect();
    let theta0 = initial_params(spec, seed);
    let psi0 = init_params(&enc_spec, rand::Rng::gen(&mut rng::stream(seed, "metalearn.encoder")));
    let split = theta0.len();
    let mut joint = theta0.values().to_vec();
    joint.extend_from_slice(psi0.values());
    let values = run_outer_loop(
        tasks.len(),
        joint,
        cfg.outer_lr,
        cfg.epochs,
        cfg.batch_size,
        seed,
        "set encoder",
        |i, p, g, w, s| {
            let theta = with_values(&theta0, &p[..split]);
            let psi = with_values(&psi0, &p[split..]);
            let dec = Network::new(spec, &theta)?;
            let enc = Network::new(&enc_spec, &psi)?;
            let c = encode_context(&enc, &ctx[i]);
            let mut gc = vec![0.0; cfg.d_c];
            let (g_theta, g_psi) = g.split_at_mut(split);
            let loss = accumulate_param_grad(&dec, &tgt[i], &c, w, Some(g_theta), Some(&mut gc), s);
            // Back through the mean pool into every encoder evaluation.
            let n = ctx[i].len() as f64;
            let up: Vec<f64> = gc.iter().map(|v| v / n).collect();
            let mut tape = Tape::default();
            let mut input = Vec::new();
            for j in 0..ctx[i].len() {
                input.clear();
                input.extend_from_slice(ctx[i].x(j));
                input.extend_from_slice(ctx[i].y(j));
                enc.forward(&input, &mut tape);
                enc.backward(&mut tape, &up, Some(g_psi), None);
            }
            Ok(loss)
        },
    )?;
    Ok(SetEncoderModel {
        spec: spec.clone(),
        enc_spec,
        theta: with_values(&theta0, &values[..split]),
        psi: with_values(&psi0, &values[split..]),
    })
}

/// Minimum-norm least-squares coefficients (ascending degree) of a
/// polynomial through the given points.
pub fn classical_sysid_poly(context_x: &[f64], context_y: &[f64], degree: usize) -> Result<Vec<f64>> {
    ensure_len("context targets", context_y.len(), context_x.len())?;
    if context_x.is_empty() {
        return Err(Error::invalid("least-squares fit needs at least one point"));
    }
    let m = context_x.len();
    let v = DMatrix::from_fn(m, degree + 1, |i, j| context_x[i].powi(j as i32));
    let y = DVector::from_column_slice(context_y);
    let svd = v.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (m.max(degree + 1) as f64) * f64::EPSILON;
    let coef = svd
        .solve(&y, tol)
        .map_err(|e| Error::invalid(format!("least-squares solve failed: {e}")))?;
    Ok(coef.iter().copied().collect())
}

/// Target MSE of a non-adaptive regressor on each task.
pub fn noadapt_task_mse(spec: &MlpSpec, theta: &ParameterSet, tasks: &[Task]) -> Result<Vec<f64>> {
    let net = Network::new(spec, theta)?;
    Ok(tasks.par_iter().map(|t| batch_mse(&net, &t.target_batch(), &[])).collect())
}

/// Target MSE after `k` adaptation steps on each task's context pairs.
pub fn fomaml_task_mse(spec: &MlpSpec, theta: &ParameterSet, tasks: &[Task], k: usize, alpha: f64) -> Result<Vec<f64>> {
    let r: Vec<Result<f64>> = tasks
        .par_iter()
        .map(|t| {
            let adapted = fomaml_adapt(spec, theta, &t.context_batch().canonical(), k, alpha)?;
            Ok(batch_mse(&Network::new(spec, &adapted)?, &t.target_batch(), &[]))
        })
        .collect();
    r.into_iter().collect()
}

pub fn setencoder_task_mse(model: &SetEncoderModel, tasks: &[Task]) -> Result<Vec<f64>> {
    let dec = Network::new(&model.spec, &model.theta)?;
    let enc = Network::new(&model.enc_spec, &model.psi)?;
    Ok(tasks
        .par_iter()
        .map(|t| {
            let c = encode_context(&enc, &t.context_batch().canonical());
            batch_mse(&dec, &t.target_batch(), &c)
        })
        .collect())
}

/// Target MSE of a degree-`degree` least-squares fit to each task's context
/// pairs (scalar input and output).
pub fn classical_task_mse(tasks: &[Task], degree: usize) -> Result<Vec<f64>> {
    tasks
        .iter()
        .map(|t| {
            let cx: Vec<f64> = t.context_x.iter().map(|x| x[0]).collect();
            let cy: Vec<f64> = t.context_y.iter().map(|y| y[0]).collect();
            let coef = classical_sysid_poly(&cx, &cy, degree)?;
            let se: f64 = t
                .target_x
                .iter()
                .zip(&t.target_y)
                .map(|(x, y)| {
                    let f = coef.iter().rev().fold(0.0, |acc, a| acc * x[0] + a);
                    (f - y[0]) * (f - y[0])
                })
                .sum();
            Ok(se / t.n_prime() as f64)
        })
        .collect()
}
