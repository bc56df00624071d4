use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::metalearn::{SystemParams, Task};
use crate::rng;

pub const POLY_COEFF_RANGE: (f64, f64) = (0.1, 2.5);
pub const POLY_X_RANGE: (f64, f64) = (-1.0, 1.0);

/// Quartic `a0 + a1 x + ... + a4 x^4`, coefficients in ascending degree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolySystem {
    pub coeffs: [f64; 5],
}

pub fn eval_poly(sys: &PolySystem, x: f64) -> f64 {
    sys.coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

/// Polynomial task: coefficients `~ U(0.1, 2.5)`, inputs `~ U(-1, 1)`.
pub fn sample_poly_task(seed: u64, n: usize, n_prime: usize) -> Task {
    sample_poly_task_degree(seed, n, n_prime, 4)
}

/// As [`sample_poly_task`] with every coefficient above `degree` set to zero.
/// The random stream is consumed identically for every degree.
pub fn sample_poly_task_degree(seed: u64, n: usize, n_prime: usize, degree: usize) -> Task {
    let mut r = rng::stream(seed, "systems.poly");
    let coef = Uniform::new_inclusive(POLY_COEFF_RANGE.0, POLY_COEFF_RANGE.1);
    let xs = Uniform::new_inclusive(POLY_X_RANGE.0, POLY_X_RANGE.1);
    let mut coeffs = [0.0; 5];
    for (d, c) in coeffs.iter_mut().enumerate() {
        let v = coef.sample(&mut r);
        *c = if d <= degree { v } else { 0.0 };
    }
    let sys = PolySystem { coeffs };
    let mut draw = |k: usize| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (0..k)
            .map(|_| {
                let x = xs.sample(&mut r);
                (vec![x], vec![eval_poly(&sys, x)])
            })
            .unzip()
    };
    let (cx, cy) = draw(n);
    let (tx, ty) = draw(n_prime);
    Task {
        context_x: cx,
        context_y: cy,
        target_x: tx,
        target_y: ty,
        system: SystemParams::Polynomial(sys),
    }
}

/// `count` tasks; task `i` uses its own seed stream so suites nest.
pub fn sample_poly_tasks(seed: u64, count: usize, n: usize, n_prime: usize) -> Vec<Task> {
    sample_poly_tasks_degree(seed, count, n, n_prime, 4)
}

pub fn sample_poly_tasks_degree(seed: u64, count: usize, n: usize, n_prime: usize, degree: usize) -> Vec<Task> {
    (0..count)
        .map(|i| sample_poly_task_degree(task_seed(seed, i), n, n_prime, degree))
        .collect()
}

fn task_seed(seed: u64, i: usize) -> u64 {
    use rand::Rng as _;
    rng::substream(seed, "systems.poly.task", i as u64).gen()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_degree_zeroes_high_coefficients() {
        let t = sample_poly_task_degree(3, 2, 2, 1);
        let SystemParams::Polynomial(sys) = t.system else { panic!() };
        assert_eq!(&sys.coeffs[2..], &[0.0; 3]);
        let full = sample_poly_task(3, 2, 2);
        let SystemParams::Polynomial(f) = full.system else { panic!() };
        assert_eq!(&sys.coeffs[..2], &f.coeffs[..2]);
        assert_eq!(t.context_x, full.context_x);
    }

    #[test]
    fn horner_examples() {
        let p = |c: [f64; 5]| PolySystem { coeffs: c };
        assert_eq!(eval_poly(&p([1.0, 0.0, 0.0, 0.0, 0.0]), 3.7), 1.0);
        assert_eq!(eval_poly(&p([0.0, 0.0, 0.0, 0.0, 1.0]), 2.0), 16.0);
        assert_eq!(eval_poly(&p([1.0; 5]), 1.0), 5.0);
    }

    #[test]
    fn task_shape_and_consistency() {
        let t = sample_poly_task(9, 5, 15);
        assert_eq!((t.n(), t.n_prime()), (5, 15));
        let SystemParams::Polynomial(sys) = t.system else { panic!() };
        assert!(sys.coeffs.iter().all(|c| (0.1..=2.5).contains(c)));
        for (x, y) in t.context_x.iter().chain(&t.target_x).zip(t.context_y.iter().chain(&t.target_y)) {
            assert!((-1.0..=1.0).contains(&x[0]));
            assert_eq!(y[0], eval_poly(&sys, x[0]));
        }
        assert_eq!(t, sample_poly_task(9, 5, 15));
        assert_ne!(t.system, sample_poly_task(10, 5, 15).system);
    }

    #[test]
    fn suites_nest() {
        let a = sample_poly_tasks(3, 10, 5, 15);
        let b = sample_poly_tasks(3, 4, 5, 15);
        assert_eq!(&a[..4], &b[..]);
    }
}
