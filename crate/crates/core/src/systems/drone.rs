//! Planar fully actuated rotorcraft with quadratic drag in a horizontal wind.
//!
//! State order is `(x, y, phi, vx, vy, omega)`, actions `(ux, uy, uphi)`.

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::ode::{rk4_step_vjp, rk4_unchecked};
use super::reference::{gen_reference_trajectory, REF_WAYPOINT_SPACING};
use super::{steps_for, Trajectory};
use crate::error::{Error, Result};
use crate::metalearn::{SystemParams, Task};
use crate::rng;

pub const GRAVITY: f64 = 9.81;
pub const DRAG_BETA1: f64 = 0.1;
pub const DRAG_BETA2: f64 = 1.0;
pub const ACTION_BOUND: f64 = 20.0;
pub const PD_KP: f64 = 10.0;
pub const PD_KD: f64 = 0.1;
pub const WIND_RANGE: (f64, f64) = (0.0, 8.0);

pub type DroneState = [f64; 6];
pub type DroneAction = [f64; 3];

pub const HOVER_ACTION: DroneAction = [0.0, GRAVITY, 0.0];

/// Wind speed along x as a function of time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindProfile {
    Constant { w: f64 },
    Eog { w_bar: f64, w_gust: f64, period: f64, t0: f64 },
}

impl WindProfile {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            WindProfile::Constant { w } => w,
            WindProfile::Eog { w_bar, w_gust, period, t0 } => eog_wind(t, w_bar, w_gust, period, t0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            WindProfile::Constant { w } => w.is_finite(),
            WindProfile::Eog { w_bar, w_gust, period, t0 } => {
                w_bar > 0.0 && w_gust > 0.0 && period > 0.0 && t0 >= 0.0 && t0.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad wind profile {self:?}")))
        }
    }

    /// Short label used in summaries.
    pub fn label(&self) -> String {
        match *self {
            WindProfile::Constant { w } => format!("const:{w}"),
            WindProfile::Eog { w_bar, w_gust, period, t0 } => format!("eog:{w_bar}:{w_gust}:{period}:{t0}"),
        }
    }
}

/// Extreme operating gust: a dip, a spike, a dip and recovery over `[t0, t0 + T]`.
pub fn eog_wind(t: f64, w_bar: f64, w_gust: f64, period: f64, t0: f64) -> f64 {
    if t < t0 || t > t0 + period {
        return w_bar;
    }
    let s = t - t0;
    w_bar
        - 0.37
            * w_gust
            * (3.0 * std::f64::consts::PI * s / period).sin()
            * (1.0 - (2.0 * std::f64::consts::PI * s / period).cos())
}

pub fn clamp_action(a: &DroneAction) -> DroneAction {
    a.map(|u| u.clamp(-ACTION_BOUND, ACTION_BOUND))
}

/// Time derivative of the state under action `a` and wind `w`.
pub fn drone_derivative(s: &DroneState, a: &DroneAction, w: f64) -> DroneState {
    let (sn, c) = s[2].sin_cos();
    let rx = s[3] - w;
    let v1 = rx * c + s[4] * sn;
    let v2 = -rx * sn + s[4] * c;
    let f1 = a[0] - DRAG_BETA1 * v1 * v1.abs();
    let f2 = a[1] - DRAG_BETA2 * v2 * v2.abs();
    [
        s[3],
        s[4],
        s[5],
        c * f1 - sn * f2,
        sn * f1 + c * f2 - GRAVITY,
        a[2],
    ]
}

/// `(lam^T d f/ds, lam^T d f/da)` for [`drone_derivative`].
pub fn drone_derivative_vjp(s: &DroneState, a: &DroneAction, w: f64, lam: &DroneState) -> (DroneState, DroneAction) {
    let (sn, c) = s[2].sin_cos();
    let rx = s[3] - w;
    let v1 = rx * c + s[4] * sn;
    let v2 = -rx * sn + s[4] * c;
    let f1 = a[0] - DRAG_BETA1 * v1 * v1.abs();
    let f2 = a[1] - DRAG_BETA2 * v2 * v2.abs();

    let g_f1 = lam[3] * c + lam[4] * sn;
    let g_f2 = -lam[3] * sn + lam[4] * c;
    let mut g_phi = lam[3] * (-sn * f1 - c * f2) + lam[4] * (c * f1 - sn * f2);
    let g_v1 = g_f1 * (-2.0 * DRAG_BETA1 * v1.abs());
    let g_v2 = g_f2 * (-2.0 * DRAG_BETA2 * v2.abs());
    g_phi += g_v1 * v2 - g_v2 * v1;
    let gs = [
        0.0,
        0.0,
        g_phi,
        lam[0] + g_v1 * c - g_v2 * sn,
        lam[1] + g_v1 * sn + g_v2 * c,
        lam[2],
    ];
    (gs, [g_f1, g_f2, lam[5]])
}

/// One RK4 step with the (clamped) action and wind held over the step.
pub fn drone_step(s: &DroneState, a: &DroneAction, w: f64, dt: f64) -> DroneState {
    let a = clamp_action(a);
    rk4_unchecked(&|x: &DroneState| drone_derivative(x, &a, w), s, dt)
}

/// VJP of [`drone_step`] with respect to the state and the unclamped action.
/// Coordinates sitting on the clamp get zero action gradient.
pub fn drone_step_vjp(s: &DroneState, a: &DroneAction, w: f64, dt: f64, lam: &DroneState) -> (DroneState, DroneAction) {
    let ac = clamp_action(a);
    let (gs, mut ga) = rk4_step_vjp(
        |x: &DroneState, u: &DroneAction| drone_derivative(x, u, w),
        |x: &DroneState, u: &DroneAction, l: &DroneState| drone_derivative_vjp(x, u, w, l),
        s,
        &ac,
        dt,
        lam,
    );
    for (g, (&raw, &cl)) in ga.iter_mut().zip(a.iter().zip(&ac)) {
        if raw != cl {
            *g = 0.0;
        }
    }
    (gs, ga)
}

/// Per-axis PD law with gravity feed-forward on `uy`, clamped to the bounds.
pub fn pd_controller(s: &DroneState, ref_pos: &[f64; 3], ref_vel: &[f64; 3], kp: f64, kd: f64) -> DroneAction {
    let mut a = [0.0; 3];
    for i in 0..3 {
        a[i] = kp * (ref_pos[i] - s[i]) + kd * (ref_vel[i] - s[3 + i]);
    }
    a[1] += GRAVITY;
    clamp_action(&a)
}

/// Closed-loop rollout of the PD controller tracking `reference` in `wind`.
pub fn simulate_pd(reference: &Trajectory, wind: &WindProfile, s0: &DroneState) -> Result<Trajectory> {
    let dt = reference.dt;
    let n = reference.states.len().saturating_sub(1);
    let mut s = *s0;
    let mut states = Vec::with_capacity(n + 1);
    let mut actions = Vec::with_capacity(n);
    let mut winds = Vec::with_capacity(n + 1);
    states.push(s.to_vec());
    for k in 0..n {
        let r = &reference.states[k];
        let a = pd_controller(&s, &[r[0], r[1], r[2]], &[r[3], r[4], r[5]], PD_KP, PD_KD);
        let w = wind.at(k as f64 * dt);
        winds.push(w);
        s = drone_step(&s, &a, w, dt);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("drone state at step {}", k + 1)));
        }
        states.push(s.to_vec());
        actions.push(a.to_vec());
    }
    winds.push(wind.at(n as f64 * dt));
    let mut t = Trajectory::new(dt, states);
    t.actions = actions;
    t.wind = winds;
    Ok(t)
}

/// A PD-controlled flight in constant wind together with its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct DroneRecord {
    pub wind: f64,
    pub reference: Trajectory,
    pub traj: Trajectory,
}

/// `n_traj` flights of `duration` seconds, wind `~ U(0, 8)` per flight.
pub fn collect_drone_dataset(n_traj: usize, duration: f64, dt: f64, seed: u64) -> Result<Vec<DroneRecord>> {
    steps_for(duration, dt)?;
    if duration < REF_WAYPOINT_SPACING {
        return Err(Error::invalid("drone flights must last at least one waypoint interval"));
    }
    (0..n_traj)
        .map(|i| {
            let mut r = rng::substream(seed, "systems.drone", i as u64);
            let wind = Uniform::new_inclusive(WIND_RANGE.0, WIND_RANGE.1).sample(&mut r);
            let ref_seed = rand::Rng::gen(&mut r);
            let reference = gen_reference_trajectory(ref_seed, duration, dt)?;
            let s0: DroneState = reference.states[0].clone().try_into().expect("6-dim reference");
            let traj = simulate_pd(&reference, &WindProfile::Constant { w: wind }, &s0)?;
            Ok(DroneRecord { wind, reference, traj })
        })
        .collect()
}

pub const FEATURE_DIM: usize = 8;

/// Model input for one transition: `(sin phi, cos phi, vx, vy, omega, ux, uy, uphi)`.
/// Position is dropped because the dynamics do not depend on it.
pub fn drone_features(s: &DroneState, a: &DroneAction) -> [f64; FEATURE_DIM] {
    let (sn, c) = s[2].sin_cos();
    [sn, c, s[3], s[4], s[5], a[0], a[1], a[2]]
}

pub fn drone_features_vjp(s: &DroneState, g: &[f64]) -> (DroneState, DroneAction) {
    let (sn, c) = s[2].sin_cos();
    (
        [0.0, 0.0, g[0] * c - g[1] * sn, g[2], g[3], g[4]],
        [g[5], g[6], g[7]],
    )
}

/// Finite-difference state derivative `(s_{t+1} - s_t) / dt`, the regression
/// target of the learned dynamics.
pub fn transition_target(s: &[f64], next: &[f64], dt: f64) -> Vec<f64> {
    s.iter().zip(next).map(|(a, b)| (b - a) / dt).collect()
}

/// Windows of `history` transitions (adaptation) followed by `future`
/// transitions (targets), `per_traj` windows per flight.
pub fn drone_transition_tasks(
    records: &[DroneRecord],
    history: usize,
    future: usize,
    per_traj: usize,
    seed: u64,
) -> Result<Vec<Task>> {
    let mut out = Vec::with_capacity(records.len() * per_traj);
    for (i, rec) in records.iter().enumerate() {
        let traj = &rec.traj;
        let n_trans = traj.actions.len();
        if n_trans < history + future {
            return Err(Error::invalid("flight too short for one window"));
        }
        let mut r = rng::substream(seed, "systems.drone.windows", i as u64);
        for _ in 0..per_traj {
            let start = rand::Rng::gen_range(&mut r, 0..=n_trans - history - future);
            let pairs = |from: usize, len: usize| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
                (from..from + len)
                    .map(|k| {
                        let s: DroneState = traj.states[k].clone().try_into().expect("6-dim state");
                        let a: DroneAction = traj.actions[k].clone().try_into().expect("3-dim action");
                        (
                            drone_features(&s, &a).to_vec(),
                            transition_target(&traj.states[k], &traj.states[k + 1], traj.dt),
                        )
                    })
                    .unzip()
            };
            let (cx, cy) = pairs(start, history);
            let (tx, ty) = pairs(start + history, future);
            out.push(Task::new(cx, cy, tx, ty, SystemParams::Wind(rec.wind))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hover_is_a_fixed_point() {
        let d = drone_derivative(&[0.0; 6], &HOVER_ACTION, 0.0);
        assert_eq!(d, [0.0; 6]);
        let norm: f64 = d.iter().map(|v| v * v).sum();
        assert_eq!(norm, 0.0);
    }

    #[test]
    fn free_fall_and_wind_cancellation() {
        assert_eq!(drone_derivative(&[0.0; 6], &[0.0; 3], 0.0), [0.0, 0.0, 0.0, 0.0, -GRAVITY, 0.0]);
        let d = drone_derivative(&[0.0, 0.0, 0.0, 3.0, 0.0, 0.0], &[0.0; 3], 3.0);
        assert_eq!(d, [3.0, 0.0, 0.0, 0.0, -GRAVITY, 0.0]);
        // Still air, drone moving: drag opposes motion.
        let d = drone_derivative(&[0.0, 0.0, 0.0, 3.0, 0.0, 0.0], &[0.0; 3], 0.0);
        assert!((d[3] + 0.9).abs() < 1e-15);
    }

    #[test]
    fn derivative_vjp_matches_finite_differences() {
        let s = [0.3, -0.2, 0.4, 1.1, -0.6, 0.2];
        let a = [1.5, 8.0, -0.4];
        let lam = [0.3, -0.7, 1.2, 0.5, -1.5, 0.9];
        let w = 3.5;
        let (gs, ga) = drone_derivative_vjp(&s, &a, w, &lam);
        let obj = |s: &DroneState, a: &DroneAction| {
            drone_derivative(s, a, w).iter().zip(&lam).map(|(x, l)| x * l).sum::<f64>()
        };
        let h = 1e-6;
        for i in 0..6 {
            let (mut p, mut m) = (s, s);
            p[i] += h;
            m[i] -= h;
            let fd = (obj(&p, &a) - obj(&m, &a)) / (2.0 * h);
            assert!((fd - gs[i]).abs() < 1e-7, "state {i}: {fd} vs {}", gs[i]);
        }
        for i in 0..3 {
            let (mut p, mut m) = (a, a);
            p[i] += h;
            m[i] -= h;
            let fd = (obj(&s, &p) - obj(&s, &m)) / (2.0 * h);
            assert!((fd - ga[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn step_vjp_respects_clamp() {
        let s = [0.0; 6];
        let (_, ga) = drone_step_vjp(&s, &[25.0, 9.0, 0.0], 0.0, 0.02, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(ga[0], 0.0);
        assert!(ga[1] != 0.0);
    }

    #[test]
    fn eog_profile() {
        let (wb, wg, tp, t0) = (4.0, 6.0, 3.0, 5.0);
        assert_eq!(eog_wind(t0, wb, wg, tp, t0), wb);
        assert!((eog_wind(t0 + tp, wb, wg, tp, t0) - wb).abs() < 1e-12);
        assert!((eog_wind(t0 + tp - 1e-9, wb, wg, tp, t0) - wb).abs() < 1e-6);
        let quarter = eog_wind(t0 + tp / 4.0, wb, wg, tp, t0);
        assert!((quarter - (4.0 - 2.22 * std::f64::consts::FRAC_1_SQRT_2)).abs() < 1e-12);
        assert!((quarter - 2.430223).abs() < 1e-6);
        assert_eq!(eog_wind(0.0, wb, wg, tp, t0), wb);
    }

    #[test]
    fn pd_examples() {
        let z = [0.0; 3];
        assert_eq!(pd_controller(&[0.0; 6], &z, &z, PD_KP, PD_KD), HOVER_ACTION);
        assert_eq!(pd_controller(&[0.0; 6], &[1.0, 0.0, 0.0], &z, PD_KP, PD_KD)[0], 10.0);
        assert_eq!(pd_controller(&[0.0; 6], &[10.0, 0.0, 0.0], &z, PD_KP, PD_KD)[0], ACTION_BOUND);
    }

    #[test]
    fn hover_flight_stays_put() {
        let still = Trajectory::new(0.02, vec![vec![0.0; 6]; 501]);
        let t = simulate_pd(&still, &WindProfile::Constant { w: 0.0 }, &[0.0; 6]).unwrap();
        assert!(t.states.iter().all(|s| s[0].abs() < 0.1 && s[1].abs() < 0.1));
    }

    #[test]
    fn dataset_shapes() {
        let d = collect_drone_dataset(3, 10.0, 0.02, 7).unwrap();
        assert_eq!(d.len(), 3);
        for r in &d {
            assert_eq!(r.traj.states.len(), 501);
            assert_eq!(r.traj.actions.len(), 500);
            assert!((0.0..=8.0).contains(&r.wind));
            assert!(r.traj.wind.iter().all(|&w| w == r.wind));
        }
        assert_eq!(d, collect_drone_dataset(3, 10.0, 0.02, 7).unwrap());
        let tasks = drone_transition_tasks(&d, 25, 25, 2, 0).unwrap();
        assert_eq!(tasks.len(), 6);
        assert_eq!((tasks[0].n(), tasks[0].x_dim(), tasks[0].y_dim()), (25, FEATURE_DIM, 6));
    }
}
