use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ContextVector, Task, TrainedModel};
use crate::diffnet::{Network, PairBatch, SharedSuffixScratch};
use crate::error::{ensure_len, Error, Result};
use crate::optim::{InnerOptimizer, InnerState};

/// How a context is fitted: step count, step size and optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSettings {
    pub steps: usize,
    pub alpha: f64,
    pub optimizer: InnerOptimizer,
}

/// Reusable buffers for fitting contexts against a fixed network.
#[derive(Default, Clone)]
pub struct ContextSolver {
    scratch: SharedSuffixScratch,
    prefix: Vec<f64>,
    grad: Vec<f64>,
}

impl ContextSolver {
    /// Fits `c` from zero. Losses are summed in batch order, so pass a
    /// [canonical](PairBatch::canonical) batch when order must not matter.
    /// With `trace`, the loss before every step and after the last one is
    /// appended (`steps + 1` entries).
    pub fn solve(
        &mut self,
        net: &Network<'_>,
        batch: &PairBatch,
        d_c: usize,
        settings: &InferenceSettings,
        trace: Option<&mut Vec<f64>>,
    ) -> Result<Vec<f64>> {
        self.solve_from(net, batch, vec![0.0; d_c], settings, trace)
    }

    /// As [`solve`](Self::solve) but starting from `c0`.
    pub fn solve_from(
        &mut self,
        net: &Network<'_>,
        batch: &PairBatch,
        c0: Vec<f64>,
        settings: &InferenceSettings,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let mut c = c0;
        self.grad.clear();
        self.grad.resize(c.len(), 0.0);
        let mut opt = InnerState::new(settings.optimizer, c.len());
        net.prepare_prefix(batch, &mut self.prefix)?;
        for step in 0..settings.steps {
            let loss = net.shared_suffix_mse_prepared(batch, &self.prefix, &c, Some(&mut self.grad), &mut self.scratch)?;
            if !loss.is_finite() || self.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::non_finite(format!("context loss at inner step {step}")));
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(loss);
            }
            opt.step(&mut c, &self.grad, settings.alpha)?;
        }
        if let Some(t) = trace {
            let loss = net.shared_suffix_mse_prepared(batch, &self.prefix, &c, None, &mut self.scratch)?;
            if !loss.is_finite() {
                return Err(Error::non_finite(format!("context loss at inner step {}", settings.steps)));
            }
            t.push(loss);
        }
        Ok(c)
    }
}

/// Fits a context for one system from its context pairs, starting at zero.
/// Uses the model's step size and optimizer; `use_target_net` selects the
/// EMA copy instead of the live parameters.
pub fn infer_context(
    model: &TrainedModel,
    context_x: &[Vec<f64>],
    context_y: &[Vec<f64>],
    steps: usize,
    use_target_net: bool,
) -> Result<(ContextVector, Vec<f64>)> {
    model.validate()?;
    if context_x.is_empty() {
        return Err(Error::invalid("context inference needs at least one pair"));
    }
    let batch = PairBatch::from_pairs(context_x, context_y)?;
    ensure_len("context input width", batch.x_dim(), model.x_dim())?;
    let net = Network::new(&model.spec, model.params(use_target_net))?;
    let settings = InferenceSettings {
        steps,
        ..model.cfg.inference()
    };
    let mut trace = Vec::with_capacity(steps + 1);
    let c = ContextSolver::default().solve(&net, &batch.canonical(), model.cfg.d_c, &settings, Some(&mut trace))?;
    Ok((ContextVector { values: c }, trace))
}

/// Contexts for many (canonical) batches. Work may run on several threads;
/// results come back in input order and do not depend on scheduling.
pub fn infer_contexts(
    net: &Network<'_>,
    batches: &[&PairBatch],
    d_c: usize,
    settings: &InferenceSettings,
) -> Result<Vec<Vec<f64>>> {
    let results: Vec<Result<Vec<f64>>> = batches
        .par_iter()
        .map_init(ContextSolver::default, |solver, b| solver.solve(net, b, d_c, settings, None))
        .collect();
    results.into_iter().collect()
}

/// Mean squared error of `f(x; c)` over a batch, averaged over points and
/// output dimensions.
pub fn batch_mse(net: &Network<'_>, batch: &PairBatch, c: &[f64]) -> f64 {
    let mut input = Vec::with_capacity(net.input_dim());
    let mut tape = crate::diffnet::Tape::default();
    let mut total = 0.0;
    for i in 0..batch.len() {
        input.clear();
        input.extend_from_slice(batch.x(i));
        input.extend_from_slice(c);
        let out = net.forward(&input, &mut tape);
        total += out.iter().zip(batch.y(i)).map(|(f, y)| (f - y) * (f - y)).sum::<f64>();
    }
    total / (batch.len() * batch.y_dim()) as f64
}

/// Per-task outcome of adapting on context pairs and scoring target pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEval {
    pub context: Vec<f64>,
    pub target_mse: f64,
}

/// Infers every task's context (from zero) and scores its target pairs.
pub fn evaluate_tasks(
    model: &TrainedModel,
    tasks: &[Task],
    settings: &InferenceSettings,
    use_target_net: bool,
) -> Result<Vec<TaskEval>> {
    model.validate()?;
    let infer_net = Network::new(&model.spec, model.params(use_target_net))?;
    let live = Network::new(&model.spec, &model.theta)?;
    let results: Vec<Result<TaskEval>> = tasks
        .par_iter()
        .map_init(ContextSolver::default, |solver, t| {
            let c = solver.solve(&infer_net, &t.context_batch().canonical(), model.cfg.d_c, settings, None)?;
            let target_mse = batch_mse(&live, &t.target_batch(), &c);
            Ok(TaskEval { context: c, target_mse })
        })
        .collect();
    results.into_iter().collect()
}
