//! Rotorcraft study: learned transition models in closed-loop MPC, reference
//! tracking in constant wind and stabilization through a gust.

use rand::distributions::{Distribution, Uniform};
use rand::Rng as _;
use rayon::prelude::*;

use super::config::{DroneConfig, ExperimentConfig, Method};
use super::metrics::{mean, median, pca_1d, tv_ratio};
use super::report::MetricsReport;
use super::{combine_digests, derive_seed, digest_tasks, digest_trajectories, OutDir};
use crate::diffnet::{Activation, MlpSpec, ParameterSet};
use crate::error::{Error, Result};
use crate::metalearn::{meta_train, train_noadapt, write_loss_csv, Normalizer, Task, TrainedModel};
use crate::mpc::{
    run_episode, write_episode_csv, write_summary_csv, ContextDynamics, EpisodeResult, EpisodeSpec, EpisodeSummary,
    LearnedDynamics, MpcConfig, MpcCost, OracleDynamics,
};
use crate::rng;
use crate::systems::{
    collect_drone_dataset, drone_transition_tasks, gen_reference_trajectory, DroneRecord, DroneState, WindProfile,
    FEATURE_DIM, WIND_RANGE,
};

#[derive(Debug, Clone)]
pub struct DroneData {
    pub records: Vec<DroneRecord>,
    pub tasks: Vec<Task>,
    pub digest: String,
}

pub fn drone_data(cfg: &DroneConfig, seed: u64) -> Result<DroneData> {
    let records = collect_drone_dataset(cfg.train_traj, cfg.duration, cfg.dt, derive_seed(seed, "harness.drone.data"))?;
    let tasks = drone_transition_tasks(
        &records,
        cfg.history,
        cfg.future,
        cfg.windows_per_traj,
        derive_seed(seed, "harness.drone.windows"),
    )?;
    let digest = combine_digests(&[&digest_trajectories(records.iter().map(|r| &r.traj)), &digest_tasks(&tasks)]);
    Ok(DroneData { records, tasks, digest })
}

/// `[8 + d_c, hidden..., 6]` with SiLU.
pub fn drone_spec(cfg: &DroneConfig, d_c: usize) -> Result<MlpSpec> {
    let mut sizes = vec![FEATURE_DIM + d_c];
    sizes.extend(&cfg.hidden);
    sizes.push(6);
    MlpSpec::new(sizes, Activation::Silu)
}

#[derive(Debug, Clone)]
pub enum DroneModel {
    Meta { model: TrainedModel, norm: Normalizer },
    NoAdapt { spec: MlpSpec, theta: ParameterSet, norm: Normalizer },
    Oracle,
}

impl DroneModel {
    /// Fresh planner-facing dynamics; each concurrent episode needs its own.
    pub fn dynamics(&self, dt: f64) -> Result<Box<dyn ContextDynamics + '_>> {
        Ok(match self {
            DroneModel::Meta { model, norm } => Box::new(LearnedDynamics::meta(model, norm.clone(), dt, false)?),
            DroneModel::NoAdapt { spec, theta, norm } => Box::new(LearnedDynamics::noadapt(spec, theta, norm.clone(), dt)?),
            DroneModel::Oracle => Box::new(OracleDynamics { dt }),
        })
    }
}

/// Trains `method` on standardized transition windows.
pub fn train_drone(method: Method, data: &DroneData, cfg: &DroneConfig, seed: u64) -> Result<(DroneModel, Vec<f64>)> {
    if method == Method::Oracle {
        return Ok((DroneModel::Oracle, Vec::new()));
    }
    let norm = Normalizer::fit(&data.tasks)?;
    let tasks: Vec<Task> = data.tasks.iter().map(|t| norm.apply_task(t)).collect::<Result<_>>()?;
    Ok(match method {
        Method::MetaSysId => {
            let spec = drone_spec(cfg, cfg.meta.d_c)?;
            let out = meta_train(&tasks, &spec, &cfg.meta, derive_seed(seed, "harness.drone.meta"))?;
            (DroneModel::Meta { model: out.model, norm }, out.epoch_losses)
        }
        Method::NoAdapt => {
            let spec = drone_spec(cfg, 0)?;
            let theta = train_noadapt(&tasks, &spec, &cfg.noadapt, derive_seed(seed, "harness.drone.no_adapt"))?;
            (DroneModel::NoAdapt { spec, theta, norm }, Vec::new())
        }
        m => return Err(Error::Config(format!("{} does not apply to the drone study", m.name()))),
    })
}

/// Reference-tracking episodes: wind `~ U(0, 8)` and a fresh reference each.
pub fn tracking_episodes(cfg: &DroneConfig, seed: u64) -> Result<Vec<EpisodeSpec>> {
    let base = derive_seed(seed, "harness.drone.episodes");
    (0..cfg.episodes)
        .map(|i| {
            let mut r = rng::substream(base, "harness.drone.episode", i as u64);
            let w = Uniform::new_inclusive(WIND_RANGE.0, WIND_RANGE.1).sample(&mut r);
            let reference = gen_reference_trajectory(r.gen(), cfg.episode_duration, cfg.dt)?;
            let initial_state: DroneState = reference.states[0].clone().try_into().expect("6-dim reference");
            Ok(EpisodeSpec {
                wind: WindProfile::Constant { w },
                duration: cfg.episode_duration,
                dt: cfg.dt,
                initial_state,
                reference: Some(reference),
            })
        })
        .collect()
}

/// Gust-stabilization runs from small random position offsets.
pub fn gust_episodes(cfg: &DroneConfig, seed: u64) -> Vec<EpisodeSpec> {
    let base = derive_seed(seed, "harness.drone.gust");
    let e = cfg.eog;
    (0..cfg.eog_runs)
        .map(|i| {
            let mut r = rng::substream(base, "harness.drone.gust.offset", i as u64);
            let mut s = [0.0; 6];
            if cfg.initial_offset > 0.0 {
                let u = Uniform::new_inclusive(-cfg.initial_offset, cfg.initial_offset);
                s[0] = u.sample(&mut r);
                s[1] = u.sample(&mut r);
            }
            EpisodeSpec {
                wind: WindProfile::Eog {
                    w_bar: e.w_bar,
                    w_gust: e.w_gust,
                    period: e.period,
                    t0: e.t0,
                },
                duration: cfg.eog_duration,
                dt: cfg.dt,
                initial_state: s,
                reference: None,
            }
        })
        .collect()
}

/// Runs every episode with its own copy of the model's dynamics.
pub fn run_episodes(model: &DroneModel, specs: &[EpisodeSpec], mpc: &MpcConfig) -> Result<Vec<EpisodeResult>> {
    let r: Vec<Result<EpisodeResult>> = specs
        .par_iter()
        .map(|s| {
            let mut dyns = model.dynamics(s.dt)?;
            run_episode(dyns.as_mut(), s, mpc)
        })
        .collect();
    r.into_iter().collect()
}

/// First principal component of an episode's contexts; zeros when the
/// model has no context.
pub fn context_pc1(ep: &EpisodeResult) -> Result<Vec<f64>> {
    match ep.contexts.first() {
        Some(c) if !c.is_empty() && ep.contexts.len() >= 2 => Ok(pca_1d(&ep.contexts)?.projections),
        _ => Ok(vec![0.0; ep.contexts.len()]),
    }
}

/// Largest `|x|` over the flight.
pub fn max_abs_x(ep: &EpisodeResult) -> f64 {
    ep.traj.states.iter().map(|s| s[0].abs()).fold(0.0, f64::max)
}

/// Total variation of the context PC1 relative to the wind it should track,
/// both z-scored. `None` without a context.
pub fn context_tv_ratio(ep: &EpisodeResult) -> Result<Option<f64>> {
    if ep.contexts.first().map_or(true, |c| c.is_empty()) {
        return Ok(None);
    }
    let pc = context_pc1(ep)?;
    Ok(Some(tv_ratio(&pc, &ep.traj.wind[..pc.len()])))
}

pub fn tracking_metric(method: Method) -> String {
    format!("drone/{}/tracking_mean_total_cost", method.name())
}

pub fn gust_max_x_metric(method: Method) -> String {
    format!("drone/{}/gust_max_abs_x", method.name())
}

pub fn gust_tv_metric(method: Method) -> String {
    format!("drone/{}/gust_median_tv_ratio", method.name())
}

fn write_episodes(
    out: &OutDir,
    prefix: &str,
    method: Method,
    seed: u64,
    eps: &[EpisodeResult],
    specs: &[EpisodeSpec],
    digest: &str,
) -> Result<()> {
    let mut rows = Vec::with_capacity(eps.len());
    for (i, (ep, spec)) in eps.iter().zip(specs).enumerate() {
        if let Some(w) = out.create(&format!("{prefix}_{}_{i:02}.csv", method.name()))? {
            write_episode_csv(w, ep, &context_pc1(ep)?, Some(digest))?;
        }
        rows.push(EpisodeSummary {
            episode: i,
            seed,
            wind: spec.wind.label(),
            total_cost: ep.total_cost,
        });
    }
    if let Some(w) = out.create(&format!("{prefix}_summary_{}.csv", method.name()))? {
        write_summary_csv(w, &rows, Some(digest))?;
    }
    Ok(())
}

pub fn run_drone(cfg: &ExperimentConfig, digest: &str, seed: u64, out: &OutDir) -> Result<MetricsReport> {
    let dc = &cfg.drone;
    let out = out.seed(seed);
    let methods = cfg.methods();
    let learned = methods.iter().any(|m| *m != Method::Oracle);
    let data = if learned { Some(drone_data(dc, seed)?) } else { None };
    let tracking = tracking_episodes(dc, seed)?;
    let gusts = gust_episodes(dc, seed);
    let mut report = MetricsReport::new(cfg.experiment.name(), digest);
    let episode_digest = digest_trajectories(tracking.iter().filter_map(|s| s.reference.as_ref()));
    let data_digest = match &data {
        Some(d) => combine_digests(&[&d.digest, &episode_digest]),
        None => episode_digest,
    };
    report.data_digests.insert(seed, data_digest);
    let track_cfg = MpcConfig {
        cost: MpcCost::TrackReference,
        ..dc.mpc.clone()
    };
    let gust_cfg = MpcConfig {
        cost: MpcCost::StabilizeOrigin,
        ..dc.mpc.clone()
    };
    for method in methods {
        log::info!("seed {seed}: drone {}", method.name());
        let step = (|| -> Result<()> {
            let (model, losses) = match &data {
                Some(d) => train_drone(method, d, dc, seed)?,
                None => (DroneModel::Oracle, Vec::new()),
            };
            if !losses.is_empty() {
                if let Some(w) = out.create(&format!("loss_{}.csv", method.name()))? {
                    write_loss_csv(w, &losses, Some(digest))?;
                }
            }
            if !tracking.is_empty() {
                let eps = run_episodes(&model, &tracking, &track_cfg)?;
                let costs: Vec<f64> = eps.iter().map(|e| e.total_cost).collect();
                report.record(&tracking_metric(method), seed, mean(&costs));
                let failures: usize = eps.iter().map(|e| e.planner_failures).sum();
                report.record(&format!("drone/{}/tracking_planner_failures", method.name()), seed, failures as f64);
                write_episodes(&out, "track", method, seed, &eps, &tracking, digest)?;
            }
            if !gusts.is_empty() {
                let eps = run_episodes(&model, &gusts, &gust_cfg)?;
                let worst = eps.iter().map(max_abs_x).fold(0.0, f64::max);
                report.record(&gust_max_x_metric(method), seed, worst);
                let ratios: Vec<f64> = eps.iter().filter_map(|e| context_tv_ratio(e).transpose()).collect::<Result<_>>()?;
                if !ratios.is_empty() {
                    report.record(&gust_tv_metric(method), seed, median(&ratios));
                }
                write_episodes(&out, "gust", method, seed, &eps, &gusts, digest)?;
            }
            Ok(())
        })();
        if let Err(e) = step {
            report.failures.push(format!("seed {seed}, {}: {e}", method.name()));
            return Err(e);
        }
    }
    Ok(report)
}
