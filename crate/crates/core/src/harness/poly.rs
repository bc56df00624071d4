//! Polynomial regression studies: method comparison over context sizes,
//! test-time inference budget, and parameter interpolation between families.

use rand::distributions::{Distribution, Uniform};

use super::config::{ExperimentConfig, Method, PolyConfig};
use super::metrics::mean;
use super::report::MetricsReport;
use super::{derive_seed, digest_tasks, OutDir};
use crate::diffnet::{interpolate_params, Activation, MlpSpec, Network, ParameterSet, Tape};
use crate::error::{Error, Result};
use crate::metalearn::{
    classical_task_mse, evaluate_tasks, fomaml_task_mse, meta_train, noadapt_task_mse, setencoder_task_mse, train_fomaml,
    train_noadapt, train_setencoder, write_loss_csv, InferenceSettings, MetaSysIdConfig, SetEncoderModel, Task,
    TrainedModel,
};
use crate::metalearn::classical_sysid_poly;
use crate::rng;
use crate::systems::{fmt_f64, sample_poly_tasks, sample_poly_tasks_degree};

/// Degree of the least-squares baseline: the true family degree.
pub const CLASSICAL_DEGREE: usize = 4;

/// Train tasks and test tasks of one seed. Test tasks carry the largest
/// evaluated context size and are truncated for smaller ones.
#[derive(Debug, Clone)]
pub struct PolyData {
    pub train: Vec<Task>,
    pub test: Vec<Task>,
    pub digest: String,
}

pub fn poly_data(cfg: &PolyConfig, seed: u64) -> PolyData {
    let n_test = cfg.eval_context.iter().copied().max().unwrap_or(cfg.n_context);
    let train = sample_poly_tasks(derive_seed(seed, "harness.poly.train"), cfg.train_tasks, cfg.n_context, cfg.n_target);
    let test = sample_poly_tasks(derive_seed(seed, "harness.poly.test"), cfg.test_tasks, n_test, cfg.n_target);
    let digest = super::combine_digests(&[&digest_tasks(&train), &digest_tasks(&test)]);
    PolyData { train, test, digest }
}

/// `[1 + d_c, hidden..., 1]` with SiLU.
pub fn poly_spec(cfg: &PolyConfig, d_c: usize) -> Result<MlpSpec> {
    let mut sizes = vec![1 + d_c];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    MlpSpec::new(sizes, Activation::Silu)
}

/// A trained polynomial regressor of any method.
#[derive(Debug, Clone)]
pub enum PolyModel {
    Meta(TrainedModel),
    Fomaml { spec: MlpSpec, theta: ParameterSet, k: usize, alpha: f64 },
    SetEncoder(SetEncoderModel),
    NoAdapt { spec: MlpSpec, theta: ParameterSet },
    Classical,
}

impl PolyModel {
    /// Per-task target MSE after adapting on each task's context pairs.
    pub fn task_mse(&self, tasks: &[Task]) -> Result<Vec<f64>> {
        match self {
            PolyModel::Meta(m) => Ok(evaluate_tasks(m, tasks, &m.cfg.inference(), false)?
                .into_iter()
                .map(|e| e.target_mse)
                .collect()),
            PolyModel::Fomaml { spec, theta, k, alpha } => fomaml_task_mse(spec, theta, tasks, *k, *alpha),
            PolyModel::SetEncoder(m) => setencoder_task_mse(m, tasks),
            PolyModel::NoAdapt { spec, theta } => noadapt_task_mse(spec, theta, tasks),
            PolyModel::Classical => classical_task_mse(tasks, CLASSICAL_DEGREE),
        }
    }
}

/// Meta-trains on `tasks`, returning the model and per-epoch losses.
pub fn train_meta(tasks: &[Task], cfg: &PolyConfig, meta: &MetaSysIdConfig, seed: u64) -> Result<(TrainedModel, Vec<f64>)> {
    let spec = poly_spec(cfg, meta.d_c)?;
    let out = meta_train(tasks, &spec, meta, derive_seed(seed, "harness.poly.meta"))?;
    Ok((out.model, out.epoch_losses))
}

/// Trains one method on `data.train`.
pub fn train_poly(method: Method, train: &[Task], cfg: &PolyConfig, seed: u64) -> Result<(PolyModel, Vec<f64>)> {
    Ok(match method {
        Method::MetaSysId => {
            let (m, losses) = train_meta(train, cfg, &cfg.meta, seed)?;
            (PolyModel::Meta(m), losses)
        }
        Method::Fomaml => {
            let spec = poly_spec(cfg, 0)?;
            let theta = train_fomaml(train, &spec, &cfg.fomaml, derive_seed(seed, "harness.poly.fomaml"))?;
            let (k, alpha) = (cfg.fomaml.k, cfg.fomaml.alpha);
            (PolyModel::Fomaml { spec, theta, k, alpha }, Vec::new())
        }
        Method::SetEncoder => {
            let spec = poly_spec(cfg, cfg.set_encoder.d_c)?;
            let m = train_setencoder(train, &spec, &cfg.set_encoder, derive_seed(seed, "harness.poly.set_encoder"))?;
            (PolyModel::SetEncoder(m), Vec::new())
        }
        Method::NoAdapt => {
            let spec = poly_spec(cfg, 0)?;
            let theta = train_noadapt(train, &spec, &cfg.noadapt, derive_seed(seed, "harness.poly.no_adapt"))?;
            (PolyModel::NoAdapt { spec, theta }, Vec::new())
        }
        Method::ClassicalSysId => (PolyModel::Classical, Vec::new()),
        Method::Oracle => return Err(Error::Config("no oracle method for polynomial regression".into())),
    })
}

pub fn truncated(tasks: &[Task], n: usize) -> Result<Vec<Task>> {
    tasks.iter().map(|t| t.truncate_context(n)).collect()
}

pub fn mse_metric(method: Method, n: usize) -> String {
    format!("mse/{}/N={n}", method.name())
}

/// Scores `model` at every evaluated context size, recording
/// `mse/<method>/N=<n>` and appending per-task rows.
pub fn score_poly(
    method: Method,
    model: &PolyModel,
    test: &[Task],
    cfg: &PolyConfig,
    seed: u64,
    report: &mut MetricsReport,
    rows: &mut Vec<Vec<String>>,
) -> Result<()> {
    for &n in &cfg.eval_context {
        let mse = model.task_mse(&truncated(test, n)?)?;
        report.record(&mse_metric(method, n), seed, mean(&mse));
        for (i, v) in mse.iter().enumerate() {
            rows.push(vec![method.name().into(), n.to_string(), i.to_string(), fmt_f64(*v)]);
        }
    }
    Ok(())
}

fn write_losses(out: &OutDir, method: Method, losses: &[f64], digest: &str) -> Result<()> {
    if losses.is_empty() {
        return Ok(());
    }
    if let Some(w) = out.create(&format!("loss_{}.csv", method.name()))? {
        write_loss_csv(w, losses, Some(digest))?;
    }
    Ok(())
}

pub fn run_polynomial(cfg: &ExperimentConfig, digest: &str, seed: u64, out: &OutDir) -> Result<MetricsReport> {
    let pc = &cfg.polynomial;
    let out = out.seed(seed);
    let data = poly_data(pc, seed);
    let mut report = MetricsReport::new(cfg.experiment.name(), digest);
    report.data_digests.insert(seed, data.digest.clone());
    let mut rows = Vec::new();
    let mut result = Ok(());
    for method in cfg.methods() {
        log::info!("seed {seed}: training {}", method.name());
        let step = train_poly(method, &data.train, pc, seed).and_then(|(model, losses)| {
            write_losses(&out, method, &losses, digest)?;
            score_poly(method, &model, &data.test, pc, seed, &mut report, &mut rows)
        });
        if let Err(e) = step {
            report.failures.push(format!("seed {seed}, {}: {e}", method.name()));
            result = Err(e);
            break;
        }
    }
    out.write_csv("task_mse.csv", digest, &["method", "n_context", "task", "mse"], &rows)?;
    result.map(|_| report)
}

/// Mean test MSE at `n` context points for each inference step count.
pub fn budget_curve(model: &TrainedModel, test: &[Task], n: usize, steps: &[usize]) -> Result<Vec<f64>> {
    let tasks = truncated(test, n)?;
    steps
        .iter()
        .map(|&k| {
            let settings = InferenceSettings {
                steps: k,
                ..model.cfg.inference()
            };
            let e = evaluate_tasks(model, &tasks, &settings, false)?;
            Ok(mean(&e.iter().map(|e| e.target_mse).collect::<Vec<_>>()))
        })
        .collect()
}

pub fn budget_metric(steps: usize) -> String {
    format!("budget/steps={steps}")
}

pub fn run_budget_sweep(cfg: &ExperimentConfig, digest: &str, seed: u64, out: &OutDir) -> Result<MetricsReport> {
    let pc = &cfg.polynomial;
    let bc = &cfg.budget_sweep;
    let out = out.seed(seed);
    let data = poly_data(pc, seed);
    let mut report = MetricsReport::new(cfg.experiment.name(), digest);
    report.data_digests.insert(seed, data.digest.clone());
    let (model, losses) = train_meta(&data.train, pc, &pc.meta, seed)?;
    write_losses(&out, Method::MetaSysId, &losses, digest)?;
    let curve = budget_curve(&model, &data.test, bc.n_context, &bc.steps)?;
    let mut rows = Vec::new();
    for (k, v) in bc.steps.iter().zip(&curve) {
        report.record(&budget_metric(*k), seed, *v);
        rows.push(vec![k.to_string(), fmt_f64(*v)]);
    }
    out.write_csv("budget.csv", digest, &["steps", "mse"], &rows)?;
    Ok(report)
}

/// Curves of interpolated networks on a grid, with summary statistics per
/// mixing weight.
#[derive(Debug, Clone)]
pub struct InterpolationResult {
    pub grid: Vec<f64>,
    /// `curves[l][j]` is the curve of context `j` at `lambdas[l]`.
    pub curves: Vec<Vec<Vec<f64>>>,
    /// Mean residual MSE of a straight-line fit, per lambda.
    pub linear_residual: Vec<f64>,
    /// Mean absolute quadratic coefficient of a quadratic fit, per lambda.
    pub quad_coef: Vec<f64>,
}

/// Evaluates `f(x; c)` with parameters `(1 - lambda) theta1 + lambda theta2`
/// for random contexts and summarizes how linear or quadratic the curves are.
pub fn interpolate_families(
    spec: &MlpSpec,
    theta1: &ParameterSet,
    theta2: &ParameterSet,
    d_c: usize,
    cfg: &super::config::InterpolationConfig,
    seed: u64,
) -> Result<InterpolationResult> {
    let mut r = rng::stream(seed, "harness.interpolation.contexts");
    let u = Uniform::new_inclusive(-cfg.context_range, cfg.context_range);
    let contexts: Vec<Vec<f64>> = (0..cfg.n_contexts).map(|_| (0..d_c).map(|_| u.sample(&mut r)).collect()).collect();
    let m = cfg.grid_points;
    let grid: Vec<f64> = (0..m).map(|i| -1.0 + 2.0 * i as f64 / (m - 1) as f64).collect();
    let mut res = InterpolationResult {
        grid: grid.clone(),
        curves: Vec::new(),
        linear_residual: Vec::new(),
        quad_coef: Vec::new(),
    };
    let mut tape = Tape::default();
    for &lambda in &cfg.lambdas {
        let theta = interpolate_params(theta1, theta2, lambda)?;
        let net = Network::new(spec, &theta)?;
        let mut curves = Vec::with_capacity(contexts.len());
        let (mut lin, mut quad) = (Vec::new(), Vec::new());
        for c in &contexts {
            let ys: Vec<f64> = grid
                .iter()
                .map(|&x| {
                    let mut input = vec![x];
                    input.extend_from_slice(c);
                    net.forward(&input, &mut tape)[0]
                })
                .collect();
            let line = classical_sysid_poly(&grid, &ys, 1)?;
            let resid = grid
                .iter()
                .zip(&ys)
                .map(|(x, y)| {
                    let f = line[0] + line[1] * x;
                    (f - y) * (f - y)
                })
                .sum::<f64>()
                / m as f64;
            lin.push(resid);
            quad.push(classical_sysid_poly(&grid, &ys, 2)?[2].abs());
            curves.push(ys);
        }
        res.linear_residual.push(mean(&lin));
        res.quad_coef.push(mean(&quad));
        res.curves.push(curves);
    }
    Ok(res)
}

pub fn run_interpolation(cfg: &ExperimentConfig, digest: &str, seed: u64, out: &OutDir) -> Result<MetricsReport> {
    let pc = &cfg.polynomial;
    let ic = &cfg.interpolation;
    let out = out.seed(seed);
    let [d1, d2] = ic.degrees;
    let train1 = sample_poly_tasks_degree(derive_seed(seed, "harness.interp.a"), pc.train_tasks, pc.n_context, pc.n_target, d1);
    let train2 = sample_poly_tasks_degree(derive_seed(seed, "harness.interp.b"), pc.train_tasks, pc.n_context, pc.n_target, d2);
    let mut report = MetricsReport::new(cfg.experiment.name(), digest);
    report
        .data_digests
        .insert(seed, super::combine_digests(&[&digest_tasks(&train1), &digest_tasks(&train2)]));
    // Both families share the seed, hence the initialization, so their
    // parameters are comparable.
    let (m1, _) = train_meta(&train1, pc, &pc.meta, seed)?;
    let (m2, _) = train_meta(&train2, pc, &pc.meta, seed)?;
    let res = interpolate_families(&m1.spec, &m1.theta, &m2.theta, pc.meta.d_c, ic, seed)?;
    let mut rows = Vec::new();
    for (l, &lambda) in ic.lambdas.iter().enumerate() {
        report.record(&format!("interp/lambda={lambda}/linear_residual"), seed, res.linear_residual[l]);
        report.record(&format!("interp/lambda={lambda}/quad_coef"), seed, res.quad_coef[l]);
        for (j, curve) in res.curves[l].iter().enumerate() {
            for (x, y) in res.grid.iter().zip(curve) {
                rows.push(vec![fmt_f64(lambda), j.to_string(), fmt_f64(*x), fmt_f64(*y)]);
            }
        }
    }
    out.write_csv("interpolation.csv", digest, &["lambda", "context", "x", "y"], &rows)?;
    Ok(report)
}
