//! Central finite-difference checks of [`backward`](super::backward).
//!
//! The oracle only ever calls [`forward`](super::forward), so it shares no
//! code path with the reverse pass it is checking.

use rand::distributions::{Distribution, Uniform};
use rand::Rng as _;

use super::{backward, forward, init_params, Activation, MlpSpec, ParameterSet};
use crate::error::Result;
use crate::rng;

/// Finite-difference step used by the checks.
pub const STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const REL_TOL: f64 = 1e-4;
/// Absolute tolerance used when the analytic value is below [`SMALL`].
pub const ABS_TOL: f64 = 1e-7;
pub const SMALL: f64 = 1e-4;

/// Central differences of `upstream . forward(params, input)`.
pub fn finite_difference(
    spec: &MlpSpec,
    params: &ParameterSet,
    input: &[f64],
    upstream: &[f64],
    h: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let objective = |p: &ParameterSet, x: &[f64]| -> Result<f64> {
        let y = forward(spec, p, x)?;
        Ok(y.iter().zip(upstream).map(|(a, b)| a * b).sum())
    };
    let mut wrt_params = Vec::with_capacity(params.len());
    let mut shifted = params.clone();
    for i in 0..params.len() {
        let orig = shifted.values()[i];
        shifted.values_mut()[i] = orig + h;
        let plus = objective(&shifted, input)?;
        shifted.values_mut()[i] = orig - h;
        let minus = objective(&shifted, input)?;
        shifted.values_mut()[i] = orig;
        wrt_params.push((plus - minus) / (2.0 * h));
    }
    let mut wrt_inputs = Vec::with_capacity(input.len());
    let mut x = input.to_vec();
    for i in 0..input.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = objective(params, &x)?;
        x[i] = orig - h;
        let minus = objective(params, &x)?;
        x[i] = orig;
        wrt_inputs.push((plus - minus) / (2.0 * h));
    }
    Ok((wrt_params, wrt_inputs))
}

/// Whether `analytic` agrees with `numeric` under the suite tolerances.
pub fn agrees(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    if analytic.abs() < SMALL {
        diff < ABS_TOL
    } else {
        diff / analytic.abs().max(numeric.abs()) < REL_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub networks: usize,
    pub coordinates: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub max_abs_error_small: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Random network with 2 to 4 affine layers, every width in `1..=8`.
pub fn random_case(seed: u64) -> (MlpSpec, ParameterSet, Vec<f64>, Vec<f64>) {
    let mut r = rng::stream(seed, "gradcheck.case");
    let depth = r.gen_range(2..=4);
    let sizes: Vec<usize> = (0..=depth).map(|_| r.gen_range(1..=8)).collect();
    let acts = (0..depth - 1)
        .map(|_| {
            if r.gen_bool(0.8) {
                Activation::Silu
            } else {
                Activation::Identity
            }
        })
        .collect();
    let spec = MlpSpec::with_activations(sizes, acts).expect("valid random spec");
    let mut params = init_params(&spec, r.gen());
    // Non-zero biases so every code path contributes.
    let u = Uniform::new_inclusive(-0.5, 0.5);
    for v in params.values_mut() {
        *v += u.sample(&mut r);
    }
    let unit = Uniform::new_inclusive(-1.0, 1.0);
    let input = (0..spec.input_dim()).map(|_| unit.sample(&mut r)).collect();
    let upstream = (0..spec.output_dim()).map(|_| unit.sample(&mut r)).collect();
    (spec, params, input, upstream)
}

/// Runs `n` random cases and compares every gradient coordinate.
pub fn check_random_networks(n: usize, seed: u64) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        networks: n,
        coordinates: 0,
        failures: 0,
        max_rel_error: 0.0,
        max_abs_error_small: 0.0,
    };
    for case in 0..n {
        let (spec, params, input, upstream) = random_case(seed.wrapping_add(case as u64));
        let g = backward(&spec, &params, &input, &upstream)?;
        let (fp, fi) = finite_difference(&spec, &params, &input, &upstream, STEP)?;
        let pairs = g
            .wrt_params
            .iter()
            .zip(&fp)
            .chain(g.wrt_inputs.iter().zip(&fi));
        for (&a, &f) in pairs {
            report.coordinates += 1;
            let diff = (a - f).abs();
            if a.abs() < SMALL {
                report.max_abs_error_small = report.max_abs_error_small.max(diff);
            } else {
                report.max_rel_error = report
                    .max_rel_error
                    .max(diff / a.abs().max(f.abs()));
            }
            if !agrees(a, f) {
                report.failures += 1;
            }
        }
    }
    Ok(report)
}
