use rand::distributions::{Distribution, Uniform};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ode::rk4_step;
use super::{steps_for, Trajectory};
use crate::error::{Error, Result};
use crate::metalearn::{SystemParams, Task};
use crate::rng;

pub const SPRING_PARAM_RANGE: (f64, f64) = (0.75, 1.25);
pub const SPRING_INIT_RANGE: (f64, f64) = (-1.0, 1.0);

/// Masses (kg) and spring constants (N/m) of the two-mass, three-spring chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringParams {
    pub m1: f64,
    pub m2: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

/// `(x1, x2, v1, v2)`.
pub type SpringState = [f64; 4];

impl SpringParams {
    pub fn unit() -> Self {
        SpringParams {
            m1: 1.0,
            m2: 1.0,
            k1: 1.0,
            k2: 1.0,
            k3: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.m1, self.m2, self.k1, self.k2, self.k3];
        if all.iter().all(|v| v.is_finite()) && self.m1 > 0.0 && self.m2 > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!("masses must be positive and finite: {self:?}")))
        }
    }

    pub fn sample(rng: &mut rng::Rng) -> Self {
        let u = Uniform::new_inclusive(SPRING_PARAM_RANGE.0, SPRING_PARAM_RANGE.1);
        SpringParams {
            m1: u.sample(rng),
            m2: u.sample(rng),
            k1: u.sample(rng),
            k2: u.sample(rng),
            k3: u.sample(rng),
        }
    }
}

pub fn spring_coeff_matrix(p: &SpringParams) -> Result<[[f64; 2]; 2]> {
    p.validate()?;
    Ok(coeff_unchecked(p))
}

fn coeff_unchecked(p: &SpringParams) -> [[f64; 2]; 2] {
    [
        [-(p.k1 + p.k2) / p.m1, p.k2 / p.m1],
        [p.k2 / p.m2, -(p.k2 + p.k3) / p.m2],
    ]
}

pub fn spring_derivative(p: &SpringParams, s: &SpringState) -> SpringState {
    let k = coeff_unchecked(p);
    [
        s[2],
        s[3],
        k[0][0] * s[0] + k[0][1] * s[1],
        k[1][0] * s[0] + k[1][1] * s[1],
    ]
}

pub fn spring_energy(p: &SpringParams, s: &SpringState) -> f64 {
    let (x1, x2, v1, v2) = (s[0], s[1], s[2], s[3]);
    0.5 * (p.m1 * v1 * v1 + p.m2 * v2 * v2)
        + 0.5 * (p.k1 * x1 * x1 + p.k2 * (x2 - x1) * (x2 - x1) + p.k3 * x2 * x2)
}

pub fn simulate_spring(p: &SpringParams, s0: &SpringState, duration: f64, dt: f64) -> Result<Trajectory> {
    p.validate()?;
    let n = steps_for(duration, dt)?;
    let mut states = Vec::with_capacity(n + 1);
    let mut s = *s0;
    states.push(s.to_vec());
    for _ in 0..n {
        s = rk4_step(|x| spring_derivative(p, x), &s, dt)?;
        states.push(s.to_vec());
    }
    Ok(Trajectory::new(dt, states))
}

/// One simulated system: its constants and the state trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SpringRecord {
    pub params: SpringParams,
    pub traj: Trajectory,
}

/// `count` independent trajectories, params `~ U(0.75, 1.25)`, initial
/// positions and velocities `~ U(-1, 1)`.
pub fn spring_dataset(seed: u64, count: usize, duration: f64, dt: f64) -> Result<Vec<SpringRecord>> {
    (0..count)
        .map(|i| {
            let mut r = rng::substream(seed, "systems.spring", i as u64);
            let params = SpringParams::sample(&mut r);
            let u = Uniform::new_inclusive(SPRING_INIT_RANGE.0, SPRING_INIT_RANGE.1);
            let s0 = [u.sample(&mut r), u.sample(&mut r), u.sample(&mut r), u.sample(&mut r)];
            Ok(SpringRecord {
                params,
                traj: simulate_spring(&params, &s0, duration, dt)?,
            })
        })
        .collect()
}

fn flat(states: &[Vec<f64>]) -> Vec<f64> {
    states.iter().flatten().copied().collect()
}

/// Window ending at `t0`: the adaptation pair maps states `[t0-2n, t0-n)` to
/// `[t0-n, t0)`; the target pair maps `[t0-n, t0)` to `[t0, t0+n)`.
pub fn spring_window_task(rec: &SpringRecord, t0: usize, n: usize) -> Result<Task> {
    let s = &rec.traj.states;
    if n == 0 || t0 < 2 * n || t0 + n > s.len() {
        return Err(Error::invalid(format!(
            "window at {t0} with block {n} does not fit {} states",
            s.len()
        )));
    }
    Task::new(
        vec![flat(&s[t0 - 2 * n..t0 - n])],
        vec![flat(&s[t0 - n..t0])],
        vec![flat(&s[t0 - n..t0])],
        vec![flat(&s[t0..t0 + n])],
        SystemParams::Spring(rec.params),
    )
}

/// `per_traj` windows with uniformly drawn end points from every record.
pub fn spring_tasks(records: &[SpringRecord], n: usize, per_traj: usize, seed: u64) -> Result<Vec<Task>> {
    let mut out = Vec::with_capacity(records.len() * per_traj);
    for (i, rec) in records.iter().enumerate() {
        let mut r = rng::substream(seed, "systems.spring.windows", i as u64);
        let hi = rec.traj.states.len() - n;
        if hi < 2 * n {
            return Err(Error::invalid("trajectory too short for one window"));
        }
        for _ in 0..per_traj {
            out.push(spring_window_task(rec, r.gen_range(2 * n..=hi), n)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn coefficient_matrix() {
        assert_eq!(spring_coeff_matrix(&SpringParams::unit()).unwrap(), [[-2.0, 1.0], [1.0, -2.0]]);
        let mut p = SpringParams::unit();
        p.k2 = 0.0;
        let k = spring_coeff_matrix(&p).unwrap();
        assert_eq!((k[0][1], k[1][0]), (0.0, 0.0));
        p.m1 = 0.0;
        assert!(spring_coeff_matrix(&p).is_err());
        // Equal masses: m K is the symmetric stiffness matrix.
        let p = SpringParams { m1: 1.1, m2: 1.1, k1: 0.8, k2: 1.2, k3: 0.8 };
        let k = spring_coeff_matrix(&p).unwrap();
        assert!(close(p.m1 * k[0][1], p.m2 * k[1][0], 1e-15));
    }

    #[test]
    fn derivative_examples() {
        let p = SpringParams::unit();
        assert_eq!(spring_derivative(&p, &[0.0; 4]), [0.0; 4]);
        assert_eq!(spring_derivative(&p, &[1.0, 1.0, 0.0, 0.0]), [0.0, 0.0, -1.0, -1.0]);
        assert_eq!(spring_derivative(&p, &[1.0, -1.0, 0.0, 0.0]), [0.0, 0.0, -3.0, 3.0]);
    }

    #[test]
    fn energy_examples() {
        let p = SpringParams::unit();
        assert_eq!(spring_energy(&p, &[0.0; 4]), 0.0);
        assert_eq!(spring_energy(&p, &[1.0, 0.0, 0.0, 0.0]), 1.0);
        assert_eq!(spring_energy(&p, &[0.0, 0.0, 1.0, 1.0]), 1.0);
    }

    #[test]
    fn symmetric_mode_has_period_two_pi() {
        let p = SpringParams::unit();
        let n = 6284;
        let dt = std::f64::consts::TAU / n as f64;
        let mut s = [1.0, 1.0, 0.0, 0.0];
        for _ in 0..n {
            s = rk4_step(|x| spring_derivative(&p, x), &s, dt).unwrap();
        }
        for (a, b) in s.iter().zip([1.0, 1.0, 0.0, 0.0]) {
            assert!(close(*a, b, 1e-6), "{s:?}");
        }
    }

    #[test]
    fn simulation_lengths() {
        let p = SpringParams::unit();
        assert_eq!(simulate_spring(&p, &[1.0, 0.0, 0.0, 0.0], 0.0, 1e-3).unwrap().states.len(), 1);
        assert_eq!(simulate_spring(&p, &[1.0, 0.0, 0.0, 0.0], 10.0, 1e-3).unwrap().states.len(), 10001);
        assert!(simulate_spring(&p, &[0.0; 4], 1.0, 0.3).is_err());
    }

    #[test]
    fn windows() {
        let recs = spring_dataset(1, 2, 0.2, 1e-3).unwrap();
        let t = spring_window_task(&recs[0], 50, 25).unwrap();
        assert_eq!((t.x_dim(), t.y_dim()), (100, 100));
        assert_eq!(t.context_y[0], t.target_x[0]);
        assert_eq!(&t.target_y[0][..4], &recs[0].traj.states[50][..]);
        assert!(spring_window_task(&recs[0], 49, 25).is_err());
        assert!(spring_window_task(&recs[0], 200, 25).is_err());
        let tasks = spring_tasks(&recs, 25, 3, 0).unwrap();
        assert_eq!(tasks.len(), 6);
    }

    #[test]
    fn energy_is_conserved() {
        let recs = spring_dataset(5, 20, 10.0, 1e-3).unwrap();
        for rec in &recs {
            let e0 = spring_energy(&rec.params, &rec.traj.states[0].clone().try_into().unwrap());
            let worst = rec
                .traj
                .states
                .iter()
                .map(|s| (spring_energy(&rec.params, &s.clone().try_into().unwrap()) - e0).abs() / e0)
                .fold(0.0, f64::max);
            assert!(worst < 1e-6, "relative drift {worst}");
        }
    }

    #[test]
    fn halving_dt_shrinks_error_fourth_order() {
        let p = SpringParams { m1: 0.8, m2: 1.2, k1: 1.1, k2: 0.9, k3: 1.2 };
        let s0 = [0.7, -0.3, 0.2, 0.5];
        let end = |dt: f64| simulate_spring(&p, &s0, 2.0, dt).unwrap().states.last().unwrap().clone();
        let truth = end(1e-4);
        let err = |dt: f64| {
            end(dt).iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.04), err(0.02));
        assert!(e1 / e2 >= 8.0 && e1 / e2 <= 32.0, "ratio {}", e1 / e2);
    }
}
