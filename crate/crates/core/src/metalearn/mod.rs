//! Bi-level meta-training with an EMA target network, test-time context
//! inference, and the baseline learners it is compared against.

mod baselines;
mod infer;
mod normalize;
mod persist;
mod task;
mod train;

pub use baselines::*;
pub use infer::*;
pub use normalize::*;
pub use persist::*;
pub use task::*;
pub use train::*;

use serde::{Deserialize, Serialize};

use crate::diffnet::{MlpSpec, ParameterSet};
use crate::error::{ensure_finite, Error, Result};
use crate::optim::InnerOptimizer;

/// Identified context `c`, the trailing slice of the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    pub values: Vec<f64>,
}

impl ContextVector {
    pub fn zeros(d_c: usize) -> Self {
        ContextVector { values: vec![0.0; d_c] }
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure_finite("context", &values)?;
        Ok(ContextVector { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSysIdConfig {
    /// Inner (context) steps per task.
    pub k: usize,
    /// Inner step size.
    pub alpha: f64,
    /// EMA weight on the live parameters.
    pub tau: f64,
    pub d_c: usize,
    pub inner_optimizer: InnerOptimizer,
    pub outer_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl MetaSysIdConfig {
    /// Polynomial-regression settings at the reduced epoch budget.
    pub fn polynomial() -> Self {
        MetaSysIdConfig {
            k: 100,
            alpha: 0.001,
            tau: 0.1,
            d_c: 32,
            inner_optimizer: InnerOptimizer::Gd,
            outer_lr: 0.001,
            epochs: 1000,
            batch_size: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be > 0");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.d_c == 0 {
            return bad("d_c must be >= 1");
        }
        if !(self.outer_lr >= 0.0 && self.outer_lr.is_finite()) {
            return bad("outer_lr must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }

    pub fn inference(&self) -> InferenceSettings {
        InferenceSettings {
            steps: self.k,
            alpha: self.alpha,
            optimizer: self.inner_optimizer,
        }
    }
}

/// Live parameters, their EMA target copy, and the settings they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: MlpSpec,
    pub theta: ParameterSet,
    pub theta_bar: ParameterSet,
    pub cfg: MetaSysIdConfig,
}

impl TrainedModel {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.cfg.validate()?;
        self.theta.ensure_matches(&self.spec)?;
        self.theta_bar.ensure_matches(&self.spec)?;
        if self.spec.input_dim() <= self.cfg.d_c {
            return Err(Error::shape(format!(
                "network input {} leaves no room for x next to a {}-dim context",
                self.spec.input_dim(),
                self.cfg.d_c
            )));
        }
        Ok(())
    }

    /// Width of `x`, the non-context part of the input.
    pub fn x_dim(&self) -> usize {
        self.spec.input_dim() - self.cfg.d_c
    }

    pub fn params(&self, use_target_net: bool) -> &ParameterSet {
        if use_target_net {
            &self.theta_bar
        } else {
            &self.theta
        }
    }
}

/// `forward(theta, concat(x, c))`, always with the live parameters.
pub fn predict_adapted(model: &TrainedModel, c: &ContextVector, x: &[f64]) -> Result<Vec<f64>> {
    crate::error::ensure_len("context", c.len(), model.cfg.d_c)?;
    crate::error::ensure_len("input", x.len(), model.x_dim())?;
    let mut input = x.to_vec();
    input.extend_from_slice(&c.values);
    crate::diffnet::forward(&model.spec, &model.theta, &input)
}
