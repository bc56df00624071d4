use serde::{Deserialize, Serialize};

use crate::diffnet::PairBatch;
use crate::error::{ensure_finite, Error, Result};
use crate::systems::{PolySystem, SpringParams};

/// Ground-truth constants of the system a task was drawn from. Kept for
/// oracles and diagnostics; learners never read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SystemParams {
    Polynomial(PolySystem),
    Spring(SpringParams),
    /// Constant wind speed along x (m/s).
    Wind(f64),
    Unknown,
}

/// Context (adaptation) pairs and target (evaluation) pairs from one system.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub context_x: Vec<Vec<f64>>,
    pub context_y: Vec<Vec<f64>>,
    pub target_x: Vec<Vec<f64>>,
    pub target_y: Vec<Vec<f64>>,
    pub system: SystemParams,
}

impl Task {
    pub fn new(
        context_x: Vec<Vec<f64>>,
        context_y: Vec<Vec<f64>>,
        target_x: Vec<Vec<f64>>,
        target_y: Vec<Vec<f64>>,
        system: SystemParams,
    ) -> Result<Self> {
        let t = Task {
            context_x,
            context_y,
            target_x,
            target_y,
            system,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_x.is_empty() {
            return Err(Error::invalid("task needs at least one context pair"));
        }
        if self.context_x.len() != self.context_y.len() || self.target_x.len() != self.target_y.len() {
            return Err(Error::shape("task inputs and outputs differ in count"));
        }
        let (dx, dy) = (self.x_dim(), self.y_dim());
        let xs = self.context_x.iter().chain(&self.target_x);
        let ys = self.context_y.iter().chain(&self.target_y);
        for x in xs {
            if x.len() != dx {
                return Err(Error::shape(format!("task input width {} != {dx}", x.len())));
            }
            ensure_finite("task input", x)?;
        }
        for y in ys {
            if y.len() != dy {
                return Err(Error::shape(format!("task output width {} != {dy}", y.len())));
            }
            ensure_finite("task output", y)?;
        }
        Ok(())
    }

    /// Number of context pairs, N.
    pub fn n(&self) -> usize {
        self.context_x.len()
    }

    /// Number of target pairs, N'.
    pub fn n_prime(&self) -> usize {
        self.target_x.len()
    }

    pub fn x_dim(&self) -> usize {
        self.context_x[0].len()
    }

    pub fn y_dim(&self) -> usize {
        self.context_y[0].len()
    }

    pub fn context_batch(&self) -> PairBatch {
        PairBatch::from_pairs(&self.context_x, &self.context_y).expect("validated task")
    }

    pub fn target_batch(&self) -> PairBatch {
        let mut b = PairBatch::new(self.x_dim(), self.y_dim());
        for (x, y) in self.target_x.iter().zip(&self.target_y) {
            b.push(x, y).expect("validated task");
        }
        b
    }

    /// The same system with only the first `n` context pairs kept.
    pub fn truncate_context(&self, n: usize) -> Result<Task> {
        if n == 0 || n > self.n() {
            return Err(Error::invalid(format!("cannot keep {n} of {} context pairs", self.n())));
        }
        let mut t = self.clone();
        t.context_x.truncate(n);
        t.context_y.truncate(n);
        Ok(t)
    }
}
