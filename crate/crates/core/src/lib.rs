//! Context identification for families of systems that share an unknown law
//! and differ by a low-dimensional context.
//!
//! A shared network `f(x; c)` is meta-trained so that, for a new system, the
//! context `c` can be recovered by a few gradient steps on a handful of
//! observations. Training is first order: contexts are inferred against an
//! exponential-moving-average copy of the parameters, and only the live
//! parameters receive gradient updates.
//!
//! Modules:
//! - [`diffnet`]: MLPs with exact reverse-mode gradients (parameters and inputs).
//! - [`optim`]: gradient descent, Adam, EMA target updates.
//! - [`metalearn`]: the EMA bi-level trainer, context inference and baselines.
//! - [`systems`]: polynomial, mass-spring and planar-rotorcraft task generators.
//! - [`mpc`]: gradient-based receding-horizon control through learned models.
//! - [`harness`]: configuration, metrics, persistence and experiment drivers.

pub mod diffnet;
pub mod error;
pub mod harness;
pub mod optim;
pub mod metalearn;
pub mod mpc;
pub mod rng;
pub mod systems;

pub use error::{Error, Result};
