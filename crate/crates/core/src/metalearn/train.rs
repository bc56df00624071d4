use std::io::Write;

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use super::{infer_contexts, MetaSysIdConfig, Task, TrainedModel};
use crate::diffnet::{init_params, MlpSpec, Network, PairBatch, ParameterSet, Tape};
use crate::error::{Error, Result};
use crate::optim::{adam_step_in_place, ema_update_in_place, AdamState, EmaConfig};
use crate::rng;

/// Tasks per unit of parallel work when summing per-task gradients. Fixed so
/// the reduction tree, and therefore every rounding, is schedule independent.
pub(crate) const REDUCE_CHUNK: usize = 16;

/// Hooks into [`meta_train_observed`]. Every method has an empty default.
pub trait TrainObserver {
    /// After contexts for a batch were inferred, before the outer step.
    fn after_inner(&mut self, _epoch: usize, _batch: usize, _theta: &ParameterSet, _theta_bar: &ParameterSet, _contexts: &[Vec<f64>]) {}
    /// After the outer step and the EMA update of a batch.
    fn after_outer(&mut self, _epoch: usize, _batch: usize, _theta: &ParameterSet, _theta_bar: &ParameterSet, _contexts: &[Vec<f64>]) {}
}

impl TrainObserver for () {}

/// Counters describing which network every gradient was taken against.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainStats {
    /// Context gradient evaluations against the EMA parameters.
    pub inner_grads_target_net: u64,
    /// Context gradient evaluations against the live parameters.
    pub inner_grads_live_net: u64,
    /// Parameter gradients taken in outer steps.
    pub outer_param_grads: u64,
    /// Context gradients taken in outer steps.
    pub outer_context_grads: u64,
    pub outer_steps: u64,
}

/// Output of [`meta_train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    /// Mean outer loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub stats: TrainStats,
}

/// Initial parameters for a training seed.
pub fn initial_params(spec: &MlpSpec, seed: u64) -> ParameterSet {
    init_params(spec, rng::stream(seed, "metalearn.init").gen())
}

/// Task visiting order for every epoch of a run.
pub(crate) struct EpochOrder {
    rng: rng::Rng,
    order: Vec<usize>,
}

impl EpochOrder {
    pub(crate) fn new(seed: u64, n: usize) -> Self {
        EpochOrder {
            rng: rng::stream(seed, "metalearn.order"),
            order: (0..n).collect(),
        }
    }

    pub(crate) fn next_epoch(&mut self) -> &[usize] {
        self.order.shuffle(&mut self.rng);
        &self.order
    }
}

pub(crate) fn check_tasks(tasks: &[Task], spec: &MlpSpec, extra_inputs: usize, need_targets: bool) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::invalid("no training tasks"));
    }
    for (i, t) in tasks.iter().enumerate() {
        t.validate()?;
        if need_targets && t.n_prime() == 0 {
            return Err(Error::invalid(format!("task {i} has no target pairs")));
        }
        if t.x_dim() + extra_inputs != spec.input_dim() || t.y_dim() != spec.output_dim() {
            return Err(Error::shape(format!(
                "task {i} is {}->{} but the network is {}->{} with {extra_inputs} context inputs",
                t.x_dim(),
                t.y_dim(),
                spec.input_dim(),
                spec.output_dim()
            )));
        }
    }
    Ok(())
}

/// Buffers for [`accumulate_param_grad`].
#[derive(Default, Clone)]
pub(crate) struct GradScratch {
    pub tape: Tape,
    pub input: Vec<f64>,
    pub upstream: Vec<f64>,
    pub input_grad: Vec<f64>,
}

/// Mean over points of `|f(concat(x, suffix)) - y|^2`. Adds `weight` times
/// its parameter gradient into `param_grad` and, when given, `weight` times
/// its gradient with respect to `suffix` into `suffix_grad`.
pub(crate) fn accumulate_param_grad(
    net: &Network<'_>,
    batch: &PairBatch,
    suffix: &[f64],
    weight: f64,
    param_grad: Option<&mut [f64]>,
    mut suffix_grad: Option<&mut [f64]>,
    s: &mut GradScratch,
) -> f64 {
    let n = batch.len();
    let scale = weight / n as f64;
    let mut param_grad = param_grad;
    let mut loss = 0.0;
    s.upstream.resize(batch.y_dim(), 0.0);
    s.input_grad.resize(net.input_dim(), 0.0);
    for i in 0..n {
        s.input.clear();
        s.input.extend_from_slice(batch.x(i));
        s.input.extend_from_slice(suffix);
        let out = net.forward(&s.input, &mut s.tape);
        for ((u, &f), &y) in s.upstream.iter_mut().zip(out).zip(batch.y(i)) {
            let r = f - y;
            loss += r * r;
            *u = 2.0 * r * scale;
        }
        let want_input = suffix_grad.is_some();
        net.backward(
            &mut s.tape,
            &s.upstream,
            param_grad.as_deref_mut(),
            if want_input { Some(&mut s.input_grad) } else { None },
        );
        if let Some(g) = suffix_grad.as_deref_mut() {
            for (gi, &v) in g.iter_mut().zip(&s.input_grad[batch.x_dim()..]) {
                *gi += v;
            }
        }
    }
    loss / n as f64
}

/// Sums `f(task, grad, scratch) -> loss` over `items` in fixed-size chunks,
/// combining chunk results in order.
pub(crate) fn reduce_grads<T: Sync>(
    items: &[T],
    n_params: usize,
    f: impl Fn(&T, &mut [f64], &mut GradScratch) -> Result<f64> + Sync,
) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<Result<(f64, Vec<f64>)>> = items
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; n_params];
            let mut s = GradScratch::default();
            let mut loss = 0.0;
            for item in chunk {
                loss += f(item, &mut g, &mut s)?;
            }
            Ok((loss, g))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; n_params];
    for p in parts {
        let (l, g) = p?;
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// Meta-trains with the EMA target network: per batch, contexts are fitted
/// from zero against `theta_bar`, the live `theta` takes one Adam step on
/// the target-pair loss with contexts held fixed, and `theta_bar` moves
/// towards `theta` by `tau`.
pub fn meta_train(tasks: &[Task], spec: &MlpSpec, cfg: &MetaSysIdConfig, seed: u64) -> Result<TrainOutcome> {
    meta_train_observed(tasks, spec, cfg, seed, &mut ())
}

pub fn meta_train_observed(
    tasks: &[Task],
    spec: &MlpSpec,
    cfg: &MetaSysIdConfig,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    check_tasks(tasks, spec, cfg.d_c, true)?;
    let ctx: Vec<PairBatch> = tasks.iter().map(|t| t.context_batch().canonical()).collect();
    let tgt: Vec<PairBatch> = tasks.iter().map(Task::target_batch).collect();
    let mut theta = initial_params(spec, seed);
    let mut theta_bar = theta.clone();
    let mut adam = AdamState::new(theta.len());
    let ema = EmaConfig::new(cfg.tau)?;
    let settings = cfg.inference();
    let mut order = EpochOrder::new(seed, tasks.len());
    let mut stats = TrainStats::default();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let idx = order.next_epoch().to_vec();
        let mut epoch_loss = 0.0;
        for (b, batch) in idx.chunks(cfg.batch_size).enumerate() {
            let contexts = {
                let target_net = Network::new(spec, &theta_bar)?;
                let batches: Vec<&PairBatch> = batch.iter().map(|&i| &ctx[i]).collect();
                infer_contexts(&target_net, &batches, cfg.d_c, &settings)
                    .map_err(|e| Error::non_finite(format!("epoch {epoch}, batch {b}: {e}")))?
            };
            stats.inner_grads_target_net += (batch.len() * settings.steps) as u64;
            observer.after_inner(epoch, b, &theta, &theta_bar, &contexts);

            let live = Network::new(spec, &theta)?;
            let items: Vec<(usize, &Vec<f64>)> = batch.iter().copied().zip(&contexts).collect();
            let w = 1.0 / batch.len() as f64;
            let (loss_sum, grad) = reduce_grads(&items, theta.len(), |&(i, c), g, s| {
                Ok(accumulate_param_grad(&live, &tgt[i], c, w, Some(g), None, s))
            })?;
            stats.outer_param_grads += batch.len() as u64;
            let loss = loss_sum / batch.len() as f64;
            if !loss.is_finite() {
                return Err(Error::non_finite(format!("outer loss at epoch {epoch}, batch {b}")));
            }
            adam_step_in_place(theta.values_mut(), &grad, &mut adam, cfg.outer_lr)
                .map_err(|e| Error::non_finite(format!("epoch {epoch}, batch {b}: {e}")))?;
            ema_update_in_place(&theta, &mut theta_bar, ema)?;
            stats.outer_steps += 1;
            observer.after_outer(epoch, b, &theta, &theta_bar, &contexts);
            epoch_loss += loss_sum;
        }
        let mean = epoch_loss / tasks.len() as f64;
        debug!("meta-train epoch {epoch}: outer loss {mean:.6e}");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome {
        model: TrainedModel {
            spec: spec.clone(),
            theta,
            theta_bar,
            cfg: cfg.clone(),
        },
        epoch_losses,
        stats,
    })
}

/// Loss trace CSV: `epoch,mean_outer_loss`, preceded by the digest comment.
pub fn write_loss_csv<W: Write>(mut w: W, losses: &[f64], digest: Option<&str>) -> Result<()> {
    if let Some(d) = digest {
        writeln!(w, "# config_digest: {d}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "mean_outer_loss"])?;
    for (e, l) in losses.iter().enumerate() {
        out.write_record([e.to_string(), crate::systems::fmt_f64(*l)])?;
    }
    out.flush()?;
    Ok(())
}
