//! Receding-horizon control of the planar rotorcraft through a
//! context-conditioned one-step dynamics model.
//!
//! Each control step infers a context from the trailing transitions, plans
//! `horizon` actions by gradient descent on the predicted tracking cost
//! (gradients by reverse accumulation through the model rollout), applies
//! the first action to the true simulator and shifts the plan.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diffnet::{MlpSpec, Network, PairBatch, ParameterSet, Tape};
use crate::error::{ensure_len, Error, Result};
use crate::metalearn::{ContextSolver, InferenceSettings, Normalizer, TrainedModel};
use crate::optim::InnerOptimizer;
use crate::systems::{
    clamp_action, drone_features, drone_features_vjp, drone_step, drone_step_vjp, fmt_f64, steps_for, transition_target,
    DroneAction, DroneState, Trajectory, WindProfile, ACTION_BOUND, DRONE_ACTION_NAMES, DRONE_STATE_NAMES, FEATURE_DIM,
    HOVER_ACTION,
};

/// What the planner drives towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MpcCost {
    /// Squared `(x, y)` error to a reference trajectory.
    TrackReference,
    /// Squared `(x, y, phi)` distance from the origin.
    #[default]
    StabilizeOrigin,
}

impl MpcCost {
    /// Number of leading state coordinates that enter the cost.
    pub fn dims(self) -> usize {
        match self {
            MpcCost::TrackReference => 2,
            MpcCost::StabilizeOrigin => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub plan_iters: usize,
    pub plan_lr: f64,
    pub cost: MpcCost,
    /// Box bound on every action coordinate, at most the simulator's clamp.
    pub action_bound: f64,
    /// Step halvings tried when a descent step raises the cost.
    pub max_halvings: usize,
    /// Planner weight on the reference heading when tracking. Reported
    /// tracking costs stay position-only.
    pub track_phi_weight: f64,
    /// Transitions used for context inference at control time.
    pub history: usize,
    pub inference: InferenceSettings,
    /// Start each inference from the previous context instead of zero.
    pub warm_context: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon: 10,
            plan_iters: 20,
            plan_lr: 1000.0,
            cost: MpcCost::StabilizeOrigin,
            action_bound: ACTION_BOUND,
            max_halvings: 5,
            track_phi_weight: 1.0,
            history: 25,
            inference: InferenceSettings {
                steps: 50,
                alpha: 1e-3,
                optimizer: InnerOptimizer::Adam,
            },
            warm_context: false,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("mpc horizon must be at least 1"));
        }
        if self.plan_iters == 0 {
            return Err(Error::invalid("mpc plan_iters must be at least 1"));
        }
        if !(self.plan_lr.is_finite() && self.plan_lr > 0.0) {
            return Err(Error::invalid(format!("mpc plan_lr must be positive, got {}", self.plan_lr)));
        }
        if !(self.action_bound > 0.0 && self.action_bound <= ACTION_BOUND) {
            return Err(Error::invalid(format!("mpc action_bound must lie in (0, {ACTION_BOUND}]")));
        }
        if !(self.track_phi_weight.is_finite() && self.track_phi_weight >= 0.0) {
            return Err(Error::invalid("mpc track_phi_weight must be non-negative"));
        }
        if !(self.inference.alpha.is_finite() && self.inference.alpha >= 0.0) {
            return Err(Error::invalid("mpc inference alpha must be non-negative"));
        }
        Ok(())
    }

    fn clamp(&self, a: &DroneAction) -> DroneAction {
        a.map(|u| u.clamp(-self.action_bound, self.action_bound))
    }

    /// Per-coordinate weights of `(x, y, phi)` in the planning objective.
    fn plan_weights(&self) -> [f64; 3] {
        match self.cost {
            MpcCost::TrackReference => [1.0, 1.0, self.track_phi_weight],
            MpcCost::StabilizeOrigin => [1.0; 3],
        }
    }
}

/// A planned action window and the model's predicted cost for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub actions: Vec<DroneAction>,
    pub predicted_cost: f64,
    /// Set when the rollout went non-finite and the initialization was returned.
    pub diverged: bool,
}

impl Plan {
    pub fn hover(horizon: usize) -> Self {
        Plan {
            actions: vec![HOVER_ACTION; horizon],
            predicted_cost: f64::NAN,
            diverged: false,
        }
    }

    /// Drops the first action and repeats the last one.
    pub fn shifted(&self, horizon: usize) -> Vec<DroneAction> {
        let last = self.actions.last().copied().unwrap_or(HOVER_ACTION);
        (0..horizon).map(|h| self.actions.get(h + 1).copied().unwrap_or(last)).collect()
    }
}

/// One observed `(state, action, next state)` step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: DroneState,
    pub action: DroneAction,
    pub next: DroneState,
}

/// A one-step dynamics model with a context input, used by the planner.
pub trait ContextDynamics {
    /// Context for the next planning call. `true_wind` is only read by the
    /// oracle; `prev` is the last context, used when warm-starting.
    fn infer_context(
        &mut self,
        history: &[Transition],
        true_wind: f64,
        prev: Option<&[f64]>,
        settings: &InferenceSettings,
    ) -> Result<Vec<f64>>;

    fn step(&mut self, s: &DroneState, a: &DroneAction, c: &[f64]) -> DroneState;

    /// `(lam^T ds'/ds, lam^T ds'/da)` at `(s, a)`.
    fn step_vjp(&mut self, s: &DroneState, a: &DroneAction, c: &[f64], lam: &DroneState) -> (DroneState, DroneAction);
}

/// The true simulator, with the current wind as its context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleDynamics {
    pub dt: f64,
}

impl ContextDynamics for OracleDynamics {
    fn infer_context(&mut self, _: &[Transition], true_wind: f64, _: Option<&[f64]>, _: &InferenceSettings) -> Result<Vec<f64>> {
        Ok(vec![true_wind])
    }

    fn step(&mut self, s: &DroneState, a: &DroneAction, c: &[f64]) -> DroneState {
        drone_step(s, a, c[0], self.dt)
    }

    fn step_vjp(&mut self, s: &DroneState, a: &DroneAction, c: &[f64], lam: &DroneState) -> (DroneState, DroneAction) {
        drone_step_vjp(s, a, c[0], self.dt, lam)
    }
}

/// `s' = s + f(features(s, a); c) * dt` with standardized network inputs and
/// outputs. With no context (`d_c = 0`) this is the non-adaptive baseline.
pub struct LearnedDynamics<'a> {
    net: Network<'a>,
    infer_net: Option<Network<'a>>,
    d_c: usize,
    norm: Normalizer,
    dt: f64,
    tape: Tape,
    input: Vec<f64>,
    input_grad: Vec<f64>,
    solver: ContextSolver,
}

impl<'a> LearnedDynamics<'a> {
    /// Meta-SysId model. Contexts are inferred with the live parameters, or
    /// with the EMA copy when `use_target_net` is set.
    pub fn meta(model: &'a TrainedModel, norm: Normalizer, dt: f64, use_target_net: bool) -> Result<Self> {
        model.validate()?;
        let mut d = Self::build(&model.spec, &model.theta, model.cfg.d_c, norm, dt)?;
        d.infer_net = Some(Network::new(&model.spec, model.params(use_target_net))?);
        Ok(d)
    }

    pub fn noadapt(spec: &MlpSpec, theta: &'a ParameterSet, norm: Normalizer, dt: f64) -> Result<Self> {
        Self::build(spec, theta, 0, norm, dt)
    }

    fn build(spec: &MlpSpec, theta: &'a ParameterSet, d_c: usize, norm: Normalizer, dt: f64) -> Result<Self> {
        ensure_len("dynamics model input", spec.input_dim(), FEATURE_DIM + d_c)?;
        ensure_len("dynamics model output", spec.output_dim(), 6)?;
        ensure_len("normalizer input width", norm.x_dim(), FEATURE_DIM)?;
        ensure_len("normalizer output width", norm.y_dim(), 6)?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        Ok(LearnedDynamics {
            net: Network::new(spec, theta)?,
            infer_net: None,
            d_c,
            norm,
            dt,
            tape: Tape::default(),
            input: Vec::with_capacity(FEATURE_DIM + d_c),
            input_grad: vec![0.0; FEATURE_DIM + d_c],
            solver: ContextSolver::default(),
        })
    }

    fn load_input(&mut self, s: &DroneState, a: &DroneAction, c: &[f64]) {
        let x = self.norm.apply_x(&drone_features(s, &clamp_action(a)));
        self.input.clear();
        self.input.extend_from_slice(&x);
        self.input.extend_from_slice(c);
    }
}

impl ContextDynamics for LearnedDynamics<'_> {
    fn infer_context(
        &mut self,
        history: &[Transition],
        _: f64,
        prev: Option<&[f64]>,
        settings: &InferenceSettings,
    ) -> Result<Vec<f64>> {
        let c0 = match prev {
            Some(p) if p.len() == self.d_c => p.to_vec(),
            _ => vec![0.0; self.d_c],
        };
        let Some(net) = self.infer_net.as_ref() else {
            return Ok(c0);
        };
        if history.is_empty() {
            return Ok(c0);
        }
        let mut batch = PairBatch::new(FEATURE_DIM, 6);
        for t in history {
            let x = self.norm.apply_x(&drone_features(&t.state, &t.action));
            let y = self.norm.apply_y(&transition_target(&t.state, &t.next, self.dt));
            batch.push(&x, &y)?;
        }
        self.solver.solve_from(net, &batch.canonical(), c0, settings, None)
    }

    fn step(&mut self, s: &DroneState, a: &DroneAction, c: &[f64]) -> DroneState {
        self.load_input(s, a, c);
        let out = self.net.forward(&self.input, &mut self.tape);
        let f = self.norm.invert_y(out);
        let mut next = *s;
        for (n, d) in next.iter_mut().zip(f) {
            *n += d * self.dt;
        }
        next
    }

    fn step_vjp(&mut self, s: &DroneState, a: &DroneAction, c: &[f64], lam: &DroneState) -> (DroneState, DroneAction) {
        self.load_input(s, a, c);
        self.net.forward(&self.input, &mut self.tape);
        let upstream: Vec<f64> = lam.iter().zip(&self.norm.y_std).map(|(l, sd)| l * self.dt * sd).collect();
        self.net.backward(&mut self.tape, &upstream, None, Some(&mut self.input_grad));
        let g_feat: Vec<f64> = self.input_grad[..FEATURE_DIM].iter().zip(&self.norm.x_std).map(|(g, sd)| g / sd).collect();
        let (mut gs, mut ga) = drone_features_vjp(s, &g_feat);
        for (g, l) in gs.iter_mut().zip(lam) {
            *g += l;
        }
        for (g, u) in ga.iter_mut().zip(a) {
            if u.abs() > ACTION_BOUND {
                *g = 0.0;
            }
        }
        (gs, ga)
    }
}

/// Predicted cost of `actions` from `s0`: mean over the window of the
/// weighted squared error of `(x, y, phi)`. Non-finite rollouts give `NaN`.
fn rollout_cost<M: ContextDynamics + ?Sized>(
    model: &mut M,
    s0: &DroneState,
    c: &[f64],
    actions: &[DroneAction],
    targets: &[[f64; 3]],
    weights: &[f64; 3],
    states: &mut Vec<DroneState>,
) -> f64 {
    states.clear();
    states.push(*s0);
    let mut j = 0.0;
    for (a, r) in actions.iter().zip(targets) {
        let s = model.step(states.last().expect("non-empty"), a, c);
        j += (0..3).map(|d| weights[d] * (s[d] - r[d]) * (s[d] - r[d])).sum::<f64>();
        states.push(s);
    }
    let j = j / actions.len() as f64;
    if j.is_finite() {
        j
    } else {
        f64::NAN
    }
}

/// Gradient of [`rollout_cost`] with respect to every action, given the
/// states recorded by the matching forward rollout.
fn rollout_grad<M: ContextDynamics + ?Sized>(
    model: &mut M,
    c: &[f64],
    actions: &[DroneAction],
    targets: &[[f64; 3]],
    weights: &[f64; 3],
    states: &[DroneState],
) -> Vec<DroneAction> {
    let h = actions.len();
    let scale = 2.0 / h as f64;
    let mut lam = [0.0; 6];
    let mut grads = vec![[0.0; 3]; h];
    for k in (0..h).rev() {
        let s_next = &states[k + 1];
        for d in 0..3 {
            lam[d] += scale * weights[d] * (s_next[d] - targets[k][d]);
        }
        let (gs, ga) = model.step_vjp(&states[k], &actions[k], c, &lam);
        grads[k] = ga;
        lam = gs;
    }
    grads
}

/// Plans `cfg.horizon` actions from `state` by gradient descent with
/// backtracking. `ref_window` holds the `(x, y, phi)` targets for the next
/// `horizon` states and is ignored when stabilizing at the origin.
pub fn plan<M: ContextDynamics + ?Sized>(
    model: &mut M,
    state: &DroneState,
    context: &[f64],
    ref_window: Option<&[[f64; 3]]>,
    cfg: &MpcConfig,
    warm_start: Option<&Plan>,
) -> Result<Plan> {
    cfg.validate()?;
    let h = cfg.horizon;
    let targets: Vec<[f64; 3]> = match cfg.cost {
        MpcCost::StabilizeOrigin => vec![[0.0; 3]; h],
        MpcCost::TrackReference => {
            let w = ref_window.ok_or_else(|| Error::invalid("reference tracking needs a reference window"))?;
            ensure_len("reference window", w.len(), h)?;
            w.to_vec()
        }
    };
    let weights = cfg.plan_weights();
    let mut actions: Vec<DroneAction> = match warm_start {
        Some(p) => p.shifted(h),
        None => vec![HOVER_ACTION; h],
    };
    for a in &mut actions {
        *a = cfg.clamp(a);
    }
    let mut states = Vec::with_capacity(h + 1);
    let mut trial_states = Vec::with_capacity(h + 1);
    let mut cost = rollout_cost(model, state, context, &actions, &targets, &weights, &mut states);
    let init = actions.clone();
    let abort = |init: Vec<DroneAction>| Plan { actions: init, predicted_cost: f64::NAN, diverged: true };
    if cost.is_nan() {
        return Ok(abort(init));
    }
    let mut trial = actions.clone();
    for _ in 0..cfg.plan_iters {
        let grad = rollout_grad(model, context, &actions, &targets, &weights, &states);
        if grad.iter().flatten().any(|g| !g.is_finite()) {
            return Ok(abort(init));
        }
        let mut lr = cfg.plan_lr;
        for _ in 0..=cfg.max_halvings {
            for ((t, a), g) in trial.iter_mut().zip(&actions).zip(&grad) {
                *t = cfg.clamp(&[a[0] - lr * g[0], a[1] - lr * g[1], a[2] - lr * g[2]]);
            }
            let c = rollout_cost(model, state, context, &trial, &targets, &weights, &mut trial_states);
            // NaN compares false, so a diverging trial is treated as an increase.
            if c <= cost {
                std::mem::swap(&mut actions, &mut trial);
                std::mem::swap(&mut states, &mut trial_states);
                cost = c;
                break;
            }
            lr *= 0.5;
        }
    }
    Ok(Plan {
        actions,
        predicted_cost: cost,
        diverged: false,
    })
}

/// One closed-loop flight. Without a reference the drone is stabilized at
/// the origin; with one, its `(x, y, phi)` columns are tracked.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub wind: WindProfile,
    pub duration: f64,
    pub dt: f64,
    pub initial_state: DroneState,
    pub reference: Option<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub traj: Trajectory,
    /// Sum of the per-step cost over every state after the initial one.
    pub total_cost: f64,
    /// `step_costs[k]` scores state `k + 1`.
    pub step_costs: Vec<f64>,
    /// Context used to choose action `k`.
    pub contexts: Vec<Vec<f64>>,
    pub planner_failures: usize,
}

fn target_at(reference: Option<&Trajectory>, k: usize) -> [f64; 3] {
    match reference {
        None => [0.0; 3],
        Some(r) => {
            let s = &r.states[k.min(r.states.len() - 1)];
            [s[0], s[1], s[2]]
        }
    }
}

fn step_cost(s: &[f64], target: &[f64; 3], dims: usize) -> f64 {
    (0..dims).map(|d| (s[d] - target[d]) * (s[d] - target[d])).sum()
}

/// Runs the receding-horizon loop against the true simulator.
pub fn run_episode<M: ContextDynamics + ?Sized>(model: &mut M, spec: &EpisodeSpec, cfg: &MpcConfig) -> Result<EpisodeResult> {
    cfg.validate()?;
    spec.wind.validate()?;
    let n = steps_for(spec.duration, spec.dt)?;
    let reference = spec.reference.as_ref();
    match (cfg.cost, reference) {
        (MpcCost::TrackReference, None) => return Err(Error::invalid("reference tracking needs a reference trajectory")),
        (MpcCost::StabilizeOrigin, Some(_)) => return Err(Error::invalid("origin stabilization takes no reference")),
        (_, Some(r)) if r.states.len() < n + 1 => return Err(Error::shape("reference shorter than the episode")),
        _ => {}
    }
    let dims = cfg.cost.dims();
    let mut s = spec.initial_state;
    let mut states = vec![s.to_vec()];
    let mut actions = Vec::with_capacity(n);
    let mut winds = Vec::with_capacity(n + 1);
    let mut step_costs = Vec::with_capacity(n);
    let mut contexts = Vec::with_capacity(n);
    let mut history: Vec<Transition> = Vec::new();
    let mut prev_plan: Option<Plan> = None;
    let mut prev_context: Option<Vec<f64>> = None;
    let mut failures = 0;
    for k in 0..n {
        let t = k as f64 * spec.dt;
        let w = spec.wind.at(t);
        let from = history.len().saturating_sub(cfg.history);
        let warm = if cfg.warm_context { prev_context.as_deref() } else { None };
        let c = match model.infer_context(&history[from..], w, warm, &cfg.inference) {
            Ok(c) => c,
            Err(e) if e.is_numerical() => {
                log::warn!("context inference failed at step {k}: {e}");
                failures += 1;
                prev_context.clone().unwrap_or_default()
            }
            Err(e) => return Err(e),
        };
        let window: Vec<[f64; 3]> = (1..=cfg.horizon).map(|h| target_at(reference, k + h)).collect();
        let p = plan(model, &s, &c, Some(&window), cfg, prev_plan.as_ref())?;
        let p = if p.diverged {
            log::warn!("planner diverged at step {k}, keeping the previous plan");
            failures += 1;
            Plan {
                actions: prev_plan.as_ref().map(|q| q.shifted(cfg.horizon)).unwrap_or_else(|| Plan::hover(cfg.horizon).actions),
                ..p
            }
        } else {
            p
        };
        let a = clamp_action(&p.actions[0]);
        let next = drone_step(&s, &a, w, spec.dt);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("simulator state at step {}", k + 1)));
        }
        history.push(Transition { state: s, action: a, next });
        step_costs.push(step_cost(&next, &target_at(reference, k + 1), dims));
        states.push(next.to_vec());
        actions.push(a.to_vec());
        winds.push(w);
        contexts.push(c.clone());
        prev_context = Some(c);
        prev_plan = Some(p);
        s = next;
    }
    winds.push(spec.wind.at(n as f64 * spec.dt));
    let mut traj = Trajectory::new(spec.dt, states);
    traj.actions = actions;
    traj.wind = winds;
    Ok(EpisodeResult {
        traj,
        total_cost: step_costs.iter().sum(),
        step_costs,
        contexts,
        planner_failures: failures,
    })
}

/// Mean over time of the squared error of the cost coordinates against
/// `reference` (or the origin when `None`).
pub fn control_cost(traj: &Trajectory, reference: Option<&Trajectory>, cost: MpcCost) -> Result<f64> {
    if traj.states.is_empty() {
        return Err(Error::invalid("control cost of an empty trajectory"));
    }
    if let Some(r) = reference {
        ensure_len("reference length", r.states.len(), traj.states.len())?;
    }
    let dims = cost.dims();
    let total: f64 = traj
        .states
        .iter()
        .enumerate()
        .map(|(k, s)| step_cost(s, &target_at(reference, k), dims))
        .sum();
    Ok(total / traj.states.len() as f64)
}

/// Per-step log: time, state, action, first principal component of the
/// inferred context, true wind and step cost. Cells with no value are empty.
pub fn write_episode_csv<W: Write>(mut w: W, ep: &EpisodeResult, context_pc1: &[f64], digest: Option<&str>) -> Result<()> {
    ensure_len("context projections", context_pc1.len(), ep.contexts.len())?;
    if let Some(d) = digest {
        writeln!(w, "# config_digest: {d}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend(DRONE_STATE_NAMES.iter().map(|s| s.to_string()));
    header.extend(DRONE_ACTION_NAMES.iter().map(|s| s.to_string()));
    header.extend(["context_pc1", "wind", "step_cost"].map(String::from));
    out.write_record(&header)?;
    let cell = |v: Option<&f64>| v.map(|x| fmt_f64(*x)).unwrap_or_default();
    for (k, s) in ep.traj.states.iter().enumerate() {
        let mut row = vec![fmt_f64(k as f64 * ep.traj.dt)];
        row.extend(s.iter().map(|v| fmt_f64(*v)));
        match ep.traj.actions.get(k) {
            Some(a) => row.extend(a.iter().map(|v| fmt_f64(*v))),
            None => row.extend(DRONE_ACTION_NAMES.iter().map(|_| String::new())),
        }
        row.push(cell(context_pc1.get(k)));
        row.push(cell(ep.traj.wind.get(k)));
        row.push(cell(k.checked_sub(1).and_then(|i| ep.step_costs.get(i))));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// One summary line per episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub seed: u64,
    pub wind: String,
    pub total_cost: f64,
}

pub fn write_summary_csv<W: Write>(mut w: W, rows: &[EpisodeSummary], digest: Option<&str>) -> Result<()> {
    if let Some(d) = digest {
        writeln!(w, "# config_digest: {d}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["episode", "seed", "wind", "total_cost"])?;
    for r in rows {
        out.write_record([r.episode.to_string(), r.seed.to_string(), r.wind.clone(), fmt_f64(r.total_cost)])?;
    }
    out.flush()?;
    Ok(())
}
