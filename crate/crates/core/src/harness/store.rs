//! Dataset export and trained-model persistence for the CLI stages that run
//! on their own (`gen-data`, `train`).

use std::collections::BTreeMap;
use std::path::PathBuf;

use super::config::{Experiment, ExperimentConfig, Method};
use super::drone::{drone_data, train_drone, DroneModel};
use super::poly::{poly_data, train_poly, PolyModel};
use super::spring::{spring_data, train_spring, SpringModel};
use super::OutDir;
use crate::diffnet::{MlpSpec, ParameterSet};
use crate::error::Result;
use crate::metalearn::{save_bundle, save_trained_model, write_loss_csv, ModelManifest, Normalizer, Task, TrainedModel};
use crate::systems::{
    fmt_f64, DatasetManifest, Trajectory, DRONE_ACTION_NAMES, DRONE_STATE_NAMES, POLY_COEFF_RANGE, POLY_X_RANGE,
    SPRING_INIT_RANGE, SPRING_PARAM_RANGE, SPRING_STATE_NAMES, WIND_RANGE,
};

fn task_rows(split: &str, tasks: &[Task], rows: &mut Vec<Vec<String>>) {
    for (i, t) in tasks.iter().enumerate() {
        let pairs = [("context", &t.context_x, &t.context_y), ("target", &t.target_x, &t.target_y)];
        for (role, xs, ys) in pairs {
            for (x, y) in xs.iter().zip(ys.iter()) {
                rows.push(vec![split.into(), i.to_string(), role.into(), fmt_f64(x[0]), fmt_f64(y[0])]);
            }
        }
    }
}

fn write_manifest(out: &OutDir, m: &DatasetManifest) -> Result<()> {
    if let Some(p) = out.path() {
        std::fs::create_dir_all(p)?;
        std::fs::write(p.join("manifest.toml"), m.to_toml()?)?;
    }
    Ok(())
}

fn write_trajs<'a>(
    out: &OutDir,
    prefix: &str,
    trajs: impl IntoIterator<Item = &'a Trajectory>,
    states: &[&str],
    actions: &[&str],
    digest: &str,
) -> Result<()> {
    for (i, t) in trajs.into_iter().enumerate() {
        if let Some(w) = out.create(&format!("{prefix}_{i:03}.csv"))? {
            t.write_csv(w, states, actions, Some(digest))?;
        }
    }
    Ok(())
}

/// Writes every seed's data as CSV with a manifest. Returns one manifest per
/// seed.
pub fn generate_data(cfg: &ExperimentConfig, out: &OutDir) -> Result<Vec<DatasetManifest>> {
    cfg.validate()?;
    let cfg = cfg.effective();
    let digest = cfg.digest()?;
    let mut manifests = Vec::new();
    for &seed in &cfg.seeds {
        let dir = out.seed(seed);
        let m = match cfg.experiment {
            Experiment::Polynomial | Experiment::BudgetSweep | Experiment::Interpolation => {
                let p = &cfg.polynomial;
                let d = poly_data(p, seed);
                let mut rows = Vec::new();
                task_rows("train", &d.train, &mut rows);
                task_rows("test", &d.test, &mut rows);
                dir.write_csv("tasks.csv", &digest, &["split", "task", "role", "x", "y"], &rows)?;
                let mut ranges = BTreeMap::new();
                ranges.insert("coefficient".to_string(), [POLY_COEFF_RANGE.0, POLY_COEFF_RANGE.1]);
                ranges.insert("x".to_string(), [POLY_X_RANGE.0, POLY_X_RANGE.1]);
                DatasetManifest {
                    kind: "polynomial".into(),
                    seed,
                    count: d.train.len() + d.test.len(),
                    dt: 0.0,
                    duration: 0.0,
                    parameter_ranges: ranges,
                    content_hash: d.digest,
                }
            }
            Experiment::MassSpring => {
                let s = &cfg.spring;
                let d = spring_data(s, seed)?;
                write_trajs(&dir, "train", d.train.iter().map(|r| &r.traj), &SPRING_STATE_NAMES, &[], &digest)?;
                write_trajs(&dir, "test", d.test.iter().map(|r| &r.traj), &SPRING_STATE_NAMES, &[], &digest)?;
                let rows: Vec<Vec<String>> = d
                    .train
                    .iter()
                    .map(|r| ("train", r))
                    .chain(d.test.iter().map(|r| ("test", r)))
                    .enumerate()
                    .map(|(i, (split, r))| {
                        let p = r.params;
                        let mut row = vec![split.to_string(), i.to_string()];
                        row.extend([p.m1, p.m2, p.k1, p.k2, p.k3].map(fmt_f64));
                        row
                    })
                    .collect();
                dir.write_csv("params.csv", &digest, &["split", "index", "m1", "m2", "k1", "k2", "k3"], &rows)?;
                let mut ranges = BTreeMap::new();
                for k in ["m1", "m2", "k1", "k2", "k3"] {
                    ranges.insert(k.to_string(), [SPRING_PARAM_RANGE.0, SPRING_PARAM_RANGE.1]);
                }
                ranges.insert("initial_state".to_string(), [SPRING_INIT_RANGE.0, SPRING_INIT_RANGE.1]);
                DatasetManifest {
                    kind: "mass_spring".into(),
                    seed,
                    count: d.train.len() + d.test.len(),
                    dt: s.dt,
                    duration: s.duration,
                    parameter_ranges: ranges,
                    content_hash: d.digest,
                }
            }
            Experiment::DroneMpc => {
                let c = &cfg.drone;
                let d = drone_data(c, seed)?;
                write_trajs(&dir, "flight", d.records.iter().map(|r| &r.traj), &DRONE_STATE_NAMES, &DRONE_ACTION_NAMES, &digest)?;
                let mut ranges = BTreeMap::new();
                ranges.insert("wind".to_string(), [WIND_RANGE.0, WIND_RANGE.1]);
                DatasetManifest {
                    kind: "drone".into(),
                    seed,
                    count: d.records.len(),
                    dt: c.dt,
                    duration: c.duration,
                    parameter_ranges: ranges,
                    content_hash: d.digest,
                }
            }
        };
        write_manifest(&dir, &m)?;
        manifests.push(m);
    }
    Ok(manifests)
}

fn save_meta(dir: &std::path::Path, model: &TrainedModel, seed: u64, digest: &str, norm: Option<&Normalizer>) -> Result<PathBuf> {
    save_trained_model(dir, Method::MetaSysId.name(), model, seed, digest, norm)
}

fn save_plain(
    dir: &std::path::Path,
    method: Method,
    spec: &MlpSpec,
    theta: &ParameterSet,
    seed: u64,
    digest: &str,
    norm: Option<&Normalizer>,
) -> Result<PathBuf> {
    let mut m = ModelManifest::new(method.name(), seed, digest, spec);
    m.normalizer = norm.cloned();
    save_bundle(dir, method.name(), m, &[("theta", theta)])
}

/// Trains every configured method for every seed and saves the parameters
/// with their manifests under `<out>/seed_<s>/`. Returns the manifest paths.
pub fn train_and_save(cfg: &ExperimentConfig, out: &OutDir) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let cfg = cfg.effective();
    let digest = cfg.digest()?;
    let mut paths = Vec::new();
    for &seed in &cfg.seeds {
        let dir = out.seed(seed);
        let Some(root) = dir.path().map(std::path::Path::to_path_buf) else {
            continue;
        };
        for method in cfg.methods() {
            if matches!(method, Method::ClassicalSysId | Method::Oracle) {
                continue;
            }
            log::info!("seed {seed}: training {}", method.name());
            let (saved, losses) = match cfg.experiment {
                Experiment::Polynomial | Experiment::BudgetSweep | Experiment::Interpolation => {
                    let d = poly_data(&cfg.polynomial, seed);
                    let (model, losses) = train_poly(method, &d.train, &cfg.polynomial, seed)?;
                    let p = match &model {
                        PolyModel::Meta(m) => save_meta(&root, m, seed, &d.digest, None)?,
                        PolyModel::Fomaml { spec, theta, .. } | PolyModel::NoAdapt { spec, theta } => {
                            save_plain(&root, method, spec, theta, seed, &d.digest, None)?
                        }
                        PolyModel::SetEncoder(m) => {
                            let mut man = ModelManifest::new(method.name(), seed, &d.digest, &m.spec);
                            man.encoder_spec = Some(m.enc_spec.clone());
                            save_bundle(&root, method.name(), man, &[("theta", &m.theta), ("psi", &m.psi)])?
                        }
                        PolyModel::Classical => unreachable!("skipped above"),
                    };
                    (p, losses)
                }
                Experiment::MassSpring => {
                    let d = spring_data(&cfg.spring, seed)?;
                    let (model, losses) = train_spring(method, &d, &cfg.spring, seed)?;
                    let p = match &model {
                        SpringModel::Meta { model, norm } => save_meta(&root, model, seed, &d.digest, Some(norm))?,
                        SpringModel::Fomaml { spec, theta, norm, .. } | SpringModel::NoAdapt { spec, theta, norm } => {
                            save_plain(&root, method, spec, theta, seed, &d.digest, Some(norm))?
                        }
                        SpringModel::Oracle => unreachable!("skipped above"),
                    };
                    (p, losses)
                }
                Experiment::DroneMpc => {
                    let d = drone_data(&cfg.drone, seed)?;
                    let (model, losses) = train_drone(method, &d, &cfg.drone, seed)?;
                    let p = match &model {
                        DroneModel::Meta { model, norm } => save_meta(&root, model, seed, &d.digest, Some(norm))?,
                        DroneModel::NoAdapt { spec, theta, norm } => {
                            save_plain(&root, method, spec, theta, seed, &d.digest, Some(norm))?
                        }
                        DroneModel::Oracle => unreachable!("skipped above"),
                    };
                    (p, losses)
                }
            };
            if !losses.is_empty() {
                if let Some(w) = dir.create(&format!("loss_{}.csv", method.name()))? {
                    write_loss_csv(w, &losses, Some(&digest))?;
                }
            }
            paths.push(saved);
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metalearn::load_trained_model;

    #[test]
    fn polynomial_data_and_models_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::new(Experiment::Polynomial);
        c.seeds = vec![3];
        c.polynomial.train_tasks = 8;
        c.polynomial.test_tasks = 4;
        c.polynomial.hidden = vec![4];
        c.polynomial.meta.epochs = 1;
        c.polynomial.meta.d_c = 2;
        c.polynomial.meta.k = 2;
        c.polynomial.fomaml.epochs = 1;
        c.polynomial.noadapt.epochs = 1;
        c.polynomial.set_encoder.epochs = 1;
        let out = OutDir::new(Some(dir.path()));
        let m = generate_data(&c, &out).unwrap();
        assert_eq!(m[0].count, 12);
        let text = std::fs::read_to_string(dir.path().join("seed_3/manifest.toml")).unwrap();
        assert_eq!(DatasetManifest::from_toml(&text).unwrap(), m[0]);
        let paths = train_and_save(&c, &out).unwrap();
        assert_eq!(paths.len(), 4);
        let (model, man) = load_trained_model(&paths[0]).unwrap();
        assert_eq!(man.data_digest, m[0].content_hash);
        assert_eq!(model.cfg.d_c, 2);
    }
}
