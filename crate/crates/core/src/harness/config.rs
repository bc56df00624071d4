use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metalearn::{FoMamlConfig, MetaSysIdConfig, NoAdaptConfig, NoAdaptData, SetEncoderConfig};
use crate::mpc::{MpcConfig, MpcCost};
use crate::optim::InnerOptimizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Polynomial,
    MassSpring,
    DroneMpc,
    Interpolation,
    BudgetSweep,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Polynomial => "polynomial",
            Experiment::MassSpring => "mass_spring",
            Experiment::DroneMpc => "drone_mpc",
            Experiment::Interpolation => "interpolation",
            Experiment::BudgetSweep => "budget_sweep",
        }
    }

    /// Methods run when the config lists none.
    pub fn default_methods(self) -> Vec<Method> {
        use Method::*;
        match self {
            Experiment::Polynomial => vec![MetaSysId, Fomaml, SetEncoder, NoAdapt, ClassicalSysId],
            Experiment::MassSpring => vec![MetaSysId, NoAdapt, Oracle],
            Experiment::DroneMpc => vec![MetaSysId, NoAdapt, Oracle],
            Experiment::Interpolation | Experiment::BudgetSweep => vec![MetaSysId],
        }
    }

    fn supports(self, m: Method) -> bool {
        use Method::*;
        match self {
            Experiment::Polynomial => m != Oracle,
            Experiment::MassSpring => matches!(m, MetaSysId | Fomaml | NoAdapt | Oracle),
            Experiment::DroneMpc => matches!(m, MetaSysId | NoAdapt | Oracle),
            Experiment::Interpolation | Experiment::BudgetSweep => m == MetaSysId,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MetaSysId,
    Fomaml,
    SetEncoder,
    NoAdapt,
    ClassicalSysId,
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::MetaSysId => "meta_sys_id",
            Method::Fomaml => "fomaml",
            Method::SetEncoder => "set_encoder",
            Method::NoAdapt => "no_adapt",
            Method::ClassicalSysId => "classical_sys_id",
            Method::Oracle => "oracle",
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

/// Everything one run needs. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Use the long training schedules instead of the reduced defaults.
    #[serde(default)]
    pub full_budget: bool,
    #[serde(default)]
    pub polynomial: PolyConfig,
    #[serde(default)]
    pub spring: SpringConfig,
    #[serde(default)]
    pub drone: DroneConfig,
    #[serde(default)]
    pub budget_sweep: BudgetSweepConfig,
    #[serde(default)]
    pub interpolation: InterpolationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolyConfig {
    pub train_tasks: usize,
    pub test_tasks: usize,
    /// Context points per training task.
    pub n_context: usize,
    pub n_target: usize,
    /// Context sizes evaluated at test time.
    pub eval_context: Vec<usize>,
    pub hidden: Vec<usize>,
    pub full_budget_epochs: usize,
    pub meta: MetaSysIdConfig,
    pub fomaml: FoMamlConfig,
    pub noadapt: NoAdaptConfig,
    pub set_encoder: SetEncoderConfig,
}

impl Default for PolyConfig {
    fn default() -> Self {
        PolyConfig {
            train_tasks: 500,
            test_tasks: 200,
            n_context: 5,
            n_target: 15,
            eval_context: vec![1, 3, 5, 10],
            hidden: vec![64, 32],
            full_budget_epochs: 4048,
            meta: MetaSysIdConfig::polynomial(),
            fomaml: FoMamlConfig {
                k: 4,
                alpha: 0.001,
                outer_lr: 0.001,
                epochs: 1000,
                batch_size: 256,
            },
            noadapt: NoAdaptConfig {
                outer_lr: 0.001,
                epochs: 1000,
                batch_size: 256,
                data: NoAdaptData::ContextAndTarget,
            },
            set_encoder: SetEncoderConfig {
                hidden: vec![32],
                d_c: 32,
                outer_lr: 0.001,
                epochs: 1000,
                batch_size: 256,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpringConfig {
    pub train_traj: usize,
    pub test_traj: usize,
    pub duration: f64,
    pub dt: f64,
    /// Block length `N` in states.
    pub window: usize,
    pub windows_per_traj: usize,
    /// First predicted state index on test trajectories.
    pub rollout_start: usize,
    pub rollout_steps: usize,
    pub hidden: Vec<usize>,
    pub full_budget_epochs: usize,
    pub meta: MetaSysIdConfig,
    pub fomaml: FoMamlConfig,
    pub noadapt: NoAdaptConfig,
}

impl Default for SpringConfig {
    fn default() -> Self {
        SpringConfig {
            train_traj: 100,
            test_traj: 50,
            duration: 10.0,
            dt: 1e-3,
            window: 25,
            windows_per_traj: 20,
            rollout_start: 50,
            rollout_steps: 975,
            hidden: vec![64, 32],
            full_budget_epochs: 512,
            meta: MetaSysIdConfig {
                k: 50,
                alpha: 0.001,
                tau: 0.1,
                d_c: 32,
                inner_optimizer: InnerOptimizer::Gd,
                outer_lr: 0.001,
                epochs: 128,
                batch_size: 512,
            },
            fomaml: FoMamlConfig {
                k: 5,
                alpha: 0.001,
                outer_lr: 0.001,
                epochs: 128,
                batch_size: 512,
            },
            noadapt: NoAdaptConfig {
                outer_lr: 0.001,
                epochs: 128,
                batch_size: 512,
                data: NoAdaptData::ContextAndTarget,
            },
        }
    }
}

/// Extreme-operating-gust parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EogConfig {
    pub w_bar: f64,
    pub w_gust: f64,
    pub period: f64,
    pub t0: f64,
}

impl Default for EogConfig {
    fn default() -> Self {
        EogConfig {
            w_bar: 4.0,
            w_gust: 6.0,
            period: 3.0,
            t0: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DroneConfig {
    pub train_traj: usize,
    pub duration: f64,
    pub dt: f64,
    pub history: usize,
    pub future: usize,
    pub windows_per_traj: usize,
    pub hidden: Vec<usize>,
    pub full_budget_epochs: usize,
    pub meta: MetaSysIdConfig,
    pub noadapt: NoAdaptConfig,
    pub mpc: MpcConfig,
    /// Reference-tracking episodes in constant wind.
    pub episodes: usize,
    pub episode_duration: f64,
    pub eog: EogConfig,
    /// Stabilization runs under the gust.
    pub eog_runs: usize,
    pub eog_duration: f64,
    /// Initial positions of gust runs are drawn from `U(-offset, offset)`.
    pub initial_offset: f64,
}

impl Default for DroneConfig {
    fn default() -> Self {
        DroneConfig {
            train_traj: 500,
            duration: 10.0,
            dt: 0.02,
            history: 25,
            future: 25,
            windows_per_traj: 4,
            hidden: vec![64, 32],
            full_budget_epochs: 512,
            meta: MetaSysIdConfig {
                k: 50,
                alpha: 0.001,
                tau: 0.1,
                d_c: 32,
                inner_optimizer: InnerOptimizer::Adam,
                outer_lr: 0.001,
                epochs: 100,
                batch_size: 32,
            },
            noadapt: NoAdaptConfig {
                outer_lr: 0.001,
                epochs: 100,
                batch_size: 32,
                data: NoAdaptData::ContextAndTarget,
            },
            mpc: MpcConfig {
                cost: MpcCost::TrackReference,
                ..MpcConfig::default()
            },
            episodes: 20,
            episode_duration: 10.0,
            eog: EogConfig::default(),
            eog_runs: 10,
            eog_duration: 10.0,
            initial_offset: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetSweepConfig {
    pub steps: Vec<usize>,
    /// Context size used for the sweep.
    pub n_context: usize,
}

impl Default for BudgetSweepConfig {
    fn default() -> Self {
        BudgetSweepConfig {
            steps: vec![10, 20, 40, 60, 80, 100],
            n_context: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpolationConfig {
    pub lambdas: Vec<f64>,
    pub n_contexts: usize,
    pub context_range: f64,
    pub grid_points: usize,
    /// Polynomial degrees of the two training families.
    pub degrees: [usize; 2],
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        InterpolationConfig {
            lambdas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            n_contexts: 16,
            context_range: 0.025,
            grid_points: 41,
            degrees: [1, 2],
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(bad(format!("{name} must be positive, got {v}")))
    }
}

fn nonzero(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(bad(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    /// Defaults for `experiment`.
    pub fn new(experiment: Experiment) -> Self {
        ExperimentConfig {
            experiment,
            methods: Vec::new(),
            seeds: default_seeds(),
            full_budget: false,
            polynomial: PolyConfig::default(),
            spring: SpringConfig::default(),
            drone: DroneConfig::default(),
            budget_sweep: BudgetSweepConfig::default(),
            interpolation: InterpolationConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn methods(&self) -> Vec<Method> {
        if self.methods.is_empty() {
            self.experiment.default_methods()
        } else {
            self.methods.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(bad("at least one seed is required"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(bad("seeds must be distinct"));
        }
        for m in self.methods() {
            if !self.experiment.supports(m) {
                return Err(bad(format!("method {} does not apply to {}", m.name(), self.experiment.name())));
            }
        }
        let p = &self.polynomial;
        nonzero("polynomial.train_tasks", p.train_tasks)?;
        nonzero("polynomial.test_tasks", p.test_tasks)?;
        nonzero("polynomial.n_context", p.n_context)?;
        nonzero("polynomial.n_target", p.n_target)?;
        if p.eval_context.is_empty() || p.eval_context.contains(&0) {
            return Err(bad("polynomial.eval_context needs positive sizes"));
        }
        if p.hidden.contains(&0) {
            return Err(bad("polynomial.hidden widths must be positive"));
        }
        p.meta.validate()?;
        p.fomaml.validate()?;
        p.noadapt.validate()?;
        p.set_encoder.validate()?;

        let s = &self.spring;
        nonzero("spring.train_traj", s.train_traj)?;
        nonzero("spring.test_traj", s.test_traj)?;
        nonzero("spring.window", s.window)?;
        nonzero("spring.windows_per_traj", s.windows_per_traj)?;
        positive("spring.duration", s.duration)?;
        positive("spring.dt", s.dt)?;
        if s.rollout_steps == 0 || s.rollout_steps % s.window != 0 {
            return Err(bad("spring.rollout_steps must be a positive multiple of spring.window"));
        }
        if s.rollout_start < 2 * s.window {
            return Err(bad("spring.rollout_start must leave room for the adaptation windows"));
        }
        let states = (s.duration / s.dt).round() as usize + 1;
        if s.rollout_start + s.rollout_steps > states {
            return Err(bad("spring rollout runs past the end of the trajectories"));
        }
        s.meta.validate()?;
        s.fomaml.validate()?;
        s.noadapt.validate()?;

        let d = &self.drone;
        nonzero("drone.train_traj", d.train_traj)?;
        nonzero("drone.history", d.history)?;
        nonzero("drone.future", d.future)?;
        nonzero("drone.windows_per_traj", d.windows_per_traj)?;
        positive("drone.duration", d.duration)?;
        positive("drone.dt", d.dt)?;
        positive("drone.episode_duration", d.episode_duration)?;
        positive("drone.eog_duration", d.eog_duration)?;
        if !(d.initial_offset >= 0.0 && d.initial_offset.is_finite()) {
            return Err(bad("drone.initial_offset must be >= 0"));
        }
        d.meta.validate()?;
        d.noadapt.validate()?;
        d.mpc.validate()?;
        crate::systems::WindProfile::Eog {
            w_bar: d.eog.w_bar,
            w_gust: d.eog.w_gust,
            period: d.eog.period,
            t0: d.eog.t0,
        }
        .validate()
        .map_err(|e| bad(format!("drone.eog: {e}")))?;

        let b = &self.budget_sweep;
        if b.steps.is_empty() {
            return Err(bad("budget_sweep.steps is empty"));
        }
        nonzero("budget_sweep.n_context", b.n_context)?;

        let i = &self.interpolation;
        if i.lambdas.is_empty() || i.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(bad("interpolation.lambdas must lie in [0, 1]"));
        }
        nonzero("interpolation.n_contexts", i.n_contexts)?;
        positive("interpolation.context_range", i.context_range)?;
        if i.grid_points < 2 {
            return Err(bad("interpolation.grid_points must be at least 2"));
        }
        if i.degrees.iter().any(|&g| g > 4) {
            return Err(bad("interpolation.degrees must be at most 4"));
        }
        Ok(())
    }

    /// The config actually run: with `full_budget`, every training schedule
    /// uses its long epoch count.
    pub fn effective(&self) -> ExperimentConfig {
        let mut c = self.clone();
        if c.full_budget {
            let e = c.polynomial.full_budget_epochs;
            c.polynomial.meta.epochs = e;
            c.polynomial.fomaml.epochs = e;
            c.polynomial.noadapt.epochs = e;
            c.polynomial.set_encoder.epochs = e;
            let e = c.spring.full_budget_epochs;
            c.spring.meta.epochs = e;
            c.spring.fomaml.epochs = e;
            c.spring.noadapt.epochs = e;
            let e = c.drone.full_budget_epochs;
            c.drone.meta.epochs = e;
            c.drone.noadapt.epochs = e;
        }
        c
    }

    /// Hex SHA-256 of the serialized effective config, without the seed list
    /// so reports for different seeds of one setup can be aggregated.
    pub fn digest(&self) -> Result<String> {
        let mut c = self.effective();
        c.seeds.clear();
        c.full_budget = false;
        Ok(hex_digest(c.to_toml()?.as_bytes()))
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        for e in [
            Experiment::Polynomial,
            Experiment::MassSpring,
            Experiment::DroneMpc,
            Experiment::Interpolation,
            Experiment::BudgetSweep,
        ] {
            let mut c = ExperimentConfig::new(e);
            c.methods = e.default_methods();
            let text = c.to_toml().unwrap();
            let back = ExperimentConfig::from_toml(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_toml().unwrap(), text);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("experiment = \"polynomial\"\nseeds = [1]\n").is_ok());
        assert!(ExperimentConfig::from_toml("experiment = \"polynomial\"\nsedes = [1]\n").is_err());
        let typo = "experiment = \"polynomial\"\n[polynomial.meta]\nk = 10\nalpah = 0.1\n";
        assert!(ExperimentConfig::from_toml(typo).is_err());
    }

    #[test]
    fn bounds_are_checked() {
        let mut c = ExperimentConfig::new(Experiment::Polynomial);
        c.validate().unwrap();
        c.polynomial.meta.tau = 1.5;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::new(Experiment::MassSpring);
        c.spring.rollout_steps = 30;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::new(Experiment::Polynomial);
        c.methods = vec![Method::Oracle];
        assert!(c.validate().is_err());
        c.methods.clear();
        c.seeds = vec![1, 1];
        assert!(c.validate().is_err());
    }

    #[test]
    fn digest_ignores_seeds_but_not_settings() {
        let a = ExperimentConfig::new(Experiment::Polynomial);
        let mut b = a.clone();
        b.seeds = vec![9];
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        b.polynomial.meta.k = 7;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
        let mut f = a.clone();
        f.full_budget = true;
        assert_ne!(a.digest().unwrap(), f.digest().unwrap());
        assert_eq!(f.effective().polynomial.meta.epochs, 4048);
    }
}
