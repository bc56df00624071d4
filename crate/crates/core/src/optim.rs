//! First-order optimizers and the EMA target update.
//!
//! The `_in_place` variants are what the training loops use; the value
//! returning functions wrap them for callers that prefer pure style.

use serde::{Deserialize, Serialize};

use crate::diffnet::ParameterSet;
use crate::error::{ensure_finite, ensure_len, Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `values - alpha * grad`.
pub fn gd_step(values: &[f64], grad: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let mut out = values.to_vec();
    gd_step_in_place(&mut out, grad, alpha)?;
    Ok(out)
}

pub fn gd_step_in_place(values: &mut [f64], grad: &[f64], alpha: f64) -> Result<()> {
    ensure_len("gradient", grad.len(), values.len())?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("step size must be finite and >= 0, got {alpha}")));
    }
    ensure_finite("gradient", grad)?;
    for (v, g) in values.iter_mut().zip(grad) {
        *v -= alpha * g;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    /// Clears the moments so the state can be reused for a new problem.
    pub fn reset(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.t = 0;
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam step, returning the new values and state.
pub fn adam_step(
    values: &[f64],
    grad: &[f64],
    state: &AdamState,
    lr: f64,
) -> Result<(Vec<f64>, AdamState)> {
    let mut out = values.to_vec();
    let mut st = state.clone();
    adam_step_in_place(&mut out, grad, &mut st, lr)?;
    Ok((out, st))
}

pub fn adam_step_in_place(
    values: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    ensure_len("gradient", grad.len(), values.len())?;
    ensure_len("adam moments", state.m.len(), values.len())?;
    ensure_len("adam moments", state.v.len(), values.len())?;
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    ensure_finite("gradient", grad)?;
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((x, &g), m), v) in values
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *x -= lr * mh / (vh.sqrt() + state.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmaConfig {
    pub tau: f64,
}

impl EmaConfig {
    pub fn new(tau: f64) -> Result<Self> {
        let c = EmaConfig { tau };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau > 0.0 && self.tau <= 1.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!("tau must lie in (0, 1], got {}", self.tau)))
        }
    }
}

/// `tau * theta + (1 - tau) * theta_bar`.
pub fn ema_update(theta: &ParameterSet, theta_bar: &ParameterSet, cfg: EmaConfig) -> Result<ParameterSet> {
    let mut out = theta_bar.clone();
    ema_update_in_place(theta, &mut out, cfg)?;
    Ok(out)
}

pub fn ema_update_in_place(theta: &ParameterSet, theta_bar: &mut ParameterSet, cfg: EmaConfig) -> Result<()> {
    cfg.validate()?;
    theta.ensure_same_shape(theta_bar)?;
    let tau = cfg.tau;
    for (b, &t) in theta_bar.values_mut().iter_mut().zip(theta.values()) {
        // Increment form: equal inputs stay bitwise equal, tau == 1 copies.
        *b = if tau == 1.0 { t } else { *b + tau * (t - *b) };
    }
    Ok(())
}

/// Optimizer used for context inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InnerOptimizer {
    #[default]
    Gd,
    Adam,
}

/// Reusable state for a sequence of inner steps.
#[derive(Debug, Clone)]
pub enum InnerState {
    Gd,
    Adam(AdamState),
}

impl InnerState {
    pub fn new(kind: InnerOptimizer, len: usize) -> Self {
        match kind {
            InnerOptimizer::Gd => InnerState::Gd,
            InnerOptimizer::Adam => InnerState::Adam(AdamState::new(len)),
        }
    }

    pub fn step(&mut self, values: &mut [f64], grad: &[f64], alpha: f64) -> Result<()> {
        match self {
            InnerState::Gd => gd_step_in_place(values, grad, alpha),
            InnerState::Adam(s) => adam_step_in_place(values, grad, s, alpha),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::LayerShape;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::distributions::{Distribution, Uniform};

    fn ps(v: Vec<f64>) -> ParameterSet {
        let shapes = vec![LayerShape {
            rows: v.len(),
            cols: 0,
            bias_len: v.len(),
        }];
        ParameterSet::new(shapes, v).unwrap()
    }

    #[test]
    fn gd_on_shifted_square() {
        // f(c) = (c - 3)^2, grad = 2(c - 3).
        let mut c = vec![0.0];
        let mut seen = Vec::new();
        for _ in 0..3 {
            let g = [2.0 * (c[0] - 3.0)];
            c = gd_step(&c, &g, 0.25).unwrap();
            seen.push(c[0]);
        }
        assert_eq!(seen, vec![1.5, 2.25, 2.625]);
        assert_eq!(gd_step(&[1.0, 2.0], &[0.0, 0.0], 0.5).unwrap(), vec![1.0, 2.0]);
        assert_eq!(gd_step(&[1.0, 2.0], &[3.0, 4.0], 0.0).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn gd_rejects_bad_input() {
        assert!(gd_step(&[1.0], &[f64::NAN], 0.1).is_err());
        assert!(gd_step(&[1.0], &[f64::INFINITY], 0.1).is_err());
        assert!(gd_step(&[1.0], &[1.0, 2.0], 0.1).is_err());
        assert!(gd_step(&[1.0], &[1.0], -0.1).is_err());
    }

    #[test]
    fn gd_converges_on_spd_quadratics() {
        let mut r = crate::rng::stream(4, "test.spd");
        let u = Uniform::new_inclusive(-1.0, 1.0);
        for _ in 0..10 {
            let m = DMatrix::from_fn(4, 4, |_, _| u.sample(&mut r));
            let a = &m * m.transpose() + DMatrix::identity(4, 4) * 0.5;
            let b = DVector::from_fn(4, |_, _| u.sample(&mut r));
            let want = a.clone().cholesky().unwrap().solve(&b);
            let lmax = a.symmetric_eigenvalues().max();
            let alpha = 0.9 / lmax;
            let f = |c: &DVector<f64>| 0.5 * c.dot(&(&a * c)) - b.dot(c);
            let mut c = vec![0.0; 4];
            let mut prev = f(&DVector::from_vec(c.clone()));
            let mut steps = 0;
            loop {
                let cv = DVector::from_vec(c.clone());
                let g = &a * &cv - &b;
                if (&cv - &want).amax() < 1e-8 {
                    break;
                }
                c = gd_step(&c, g.as_slice(), alpha).unwrap();
                let now = f(&DVector::from_vec(c.clone()));
                assert!(now <= prev + 1e-15, "objective rose");
                prev = now;
                steps += 1;
                assert!(steps <= 10_000);
            }
        }
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let st = AdamState::new(1);
        let (x, st) = adam_step(&[0.0], &[2.0], &st, 1e-3).unwrap();
        assert_eq!(st.t, 1);
        assert!((x[0] + 1e-3).abs() < 1e-6 * 1e-3 + 1e-12);
        let expected = -1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((x[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_grad_is_null() {
        let st = AdamState::new(2);
        let (x, st) = adam_step(&[1.0, -1.0], &[0.0, 0.0], &st, 1e-3).unwrap();
        assert_eq!(x, vec![1.0, -1.0]);
        assert_eq!(st.m, vec![0.0, 0.0]);
        assert_eq!(st.v, vec![0.0, 0.0]);
    }

    #[test]
    fn adam_constant_grad_steps_approach_lr() {
        let mut st = AdamState::new(1);
        let mut x = vec![0.0];
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = x[0];
            adam_step_in_place(&mut x, &[0.7], &mut st, 1e-3).unwrap();
            last = before - x[0];
        }
        assert!((last - 1e-3).abs() < 1e-9, "{last}");
        assert!(adam_step(&[0.0], &[f64::NAN], &AdamState::new(1), 1e-3).is_err());
    }

    proptest! {
        #[test]
        fn adam_second_moment_nonnegative(gs in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
            let mut st = AdamState::new(1);
            let mut x = vec![0.0];
            for g in gs {
                adam_step_in_place(&mut x, &[g], &mut st, 1e-2).unwrap();
                prop_assert!(st.v[0] >= 0.0);
            }
        }

        #[test]
        fn ema_stays_between(a in proptest::collection::vec(-10f64..10.0, 1..8), tau in 0.01f64..1.0) {
            let b: Vec<f64> = a.iter().map(|x| 1.5 - x * 0.5).collect();
            let out = ema_update(&ps(a.clone()), &ps(b.clone()), EmaConfig::new(tau).unwrap()).unwrap();
            for ((o, x), y) in out.values().iter().zip(&a).zip(&b) {
                prop_assert!(*o >= x.min(*y) && *o <= x.max(*y));
            }
        }
    }

    #[test]
    fn ema_examples() {
        let theta = ps(vec![1.0, -3.25]);
        let bar = ps(vec![0.0, 7.0]);
        assert_eq!(ema_update(&theta, &bar, EmaConfig::new(1.0).unwrap()).unwrap(), theta);
        let out = ema_update(&ps(vec![1.0]), &ps(vec![0.0]), EmaConfig::new(0.1).unwrap()).unwrap();
        assert!((out.values()[0] - 0.1).abs() < 1e-15);
        assert!(EmaConfig::new(0.0).is_err());
        assert!(EmaConfig::new(1.5).is_err());
        assert!(ema_update(&ps(vec![1.0]), &ps(vec![1.0, 2.0]), EmaConfig::new(0.5).unwrap()).is_err());
    }

    #[test]
    fn ema_converges_geometrically() {
        let theta = ps(vec![2.0]);
        let mut bar = ps(vec![0.0]);
        let cfg = EmaConfig::new(0.1).unwrap();
        for k in 1..=50 {
            ema_update_in_place(&theta, &mut bar, cfg).unwrap();
            let err = 2.0 - bar.values()[0];
            assert!((err - 2.0 * 0.9f64.powi(k)).abs() < 1e-12);
        }
    }
}
