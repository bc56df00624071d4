//! Smooth random reference trajectories for the rotorcraft.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};

use super::{steps_for, Trajectory};
use crate::error::{Error, Result};
use crate::rng;

pub const REF_WAYPOINT_SPACING: f64 = 1.0;
pub const REF_POS_STEP: f64 = 1.0;
pub const REF_ANGLE_STEP: f64 = 0.3;

/// Cubic spline with zero slope at both ends (clamped).
#[derive(Debug, Clone, PartialEq)]
pub struct ClampedSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots.
    moments: Vec<f64>,
}

impl ClampedSpline {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return Err(Error::invalid("spline needs at least two knots and one value per knot"));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("spline knots must be strictly increasing"));
        }
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let slope: Vec<f64> = (0..n - 1).map(|i| (values[i + 1] - values[i]) / h[i]).collect();
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        a[(0, 0)] = 2.0 * h[0];
        a[(0, 1)] = h[0];
        b[0] = 6.0 * slope[0];
        for i in 1..n - 1 {
            a[(i, i - 1)] = h[i - 1];
            a[(i, i)] = 2.0 * (h[i - 1] + h[i]);
            a[(i, i + 1)] = h[i];
            b[i] = 6.0 * (slope[i] - slope[i - 1]);
        }
        a[(n - 1, n - 2)] = h[n - 2];
        a[(n - 1, n - 1)] = 2.0 * h[n - 2];
        b[n - 1] = -6.0 * slope[n - 2];
        let moments = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::invalid("singular spline system"))?;
        Ok(ClampedSpline {
            knots,
            values,
            moments: moments.iter().copied().collect(),
        })
    }

    fn segment(&self, t: f64) -> usize {
        let last = self.knots.len() - 2;
        match self.knots.binary_search_by(|k| k.total_cmp(&t)) {
            Ok(i) => i.min(last),
            Err(i) => i.saturating_sub(1).min(last),
        }
    }

    /// Value and first derivative at `t` (clamped to the knot range).
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let t = t.clamp(self.knots[0], *self.knots.last().expect("non-empty"));
        let i = self.segment(t);
        let (t0, t1) = (self.knots[i], self.knots[i + 1]);
        let h = t1 - t0;
        let (m0, m1) = (self.moments[i], self.moments[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (a, b) = (t1 - t, t - t0);
        let c0 = y0 / h - m0 * h / 6.0;
        let c1 = y1 / h - m1 * h / 6.0;
        let value = m0 * a * a * a / (6.0 * h) + m1 * b * b * b / (6.0 * h) + c0 * a + c1 * b;
        let slope = -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - c0 + c1;
        (value, slope)
    }
}

/// Random-walk waypoints every second from the origin, splined per axis,
/// sampled every `dt`. States are `(x, y, phi, vx, vy, omega)`.
pub fn gen_reference_trajectory(seed: u64, duration: f64, dt: f64) -> Result<Trajectory> {
    let n = steps_for(duration, dt)?;
    let (splines, _) = reference_splines(seed, duration)?;
    let states = (0..=n)
        .map(|k| {
            let t = k as f64 * dt;
            let mut s = vec![0.0; 6];
            for (axis, sp) in splines.iter().enumerate() {
                let (v, d) = sp.eval(t);
                s[axis] = v;
                s[3 + axis] = d;
            }
            s
        })
        .collect();
    Ok(Trajectory::new(dt, states))
}

/// The per-axis splines and their waypoint times.
pub fn reference_splines(seed: u64, duration: f64) -> Result<([ClampedSpline; 3], Vec<f64>)> {
    if !(duration > 0.0) {
        return Err(Error::invalid("reference duration must be positive"));
    }
    let mut r = rng::stream(seed, "systems.reference");
    let segments = (duration / REF_WAYPOINT_SPACING).ceil() as usize;
    let mut knots: Vec<f64> = (0..segments).map(|i| i as f64 * REF_WAYPOINT_SPACING).collect();
    knots.push(duration);
    let steps = [
        Uniform::new_inclusive(-REF_POS_STEP, REF_POS_STEP),
        Uniform::new_inclusive(-REF_POS_STEP, REF_POS_STEP),
        Uniform::new_inclusive(-REF_ANGLE_STEP, REF_ANGLE_STEP),
    ];
    let mut values = vec![vec![0.0; knots.len()]; 3];
    for k in 1..knots.len() {
        for axis in 0..3 {
            values[axis][k] = values[axis][k - 1] + steps[axis].sample(&mut r);
        }
    }
    let mk = |axis: usize| ClampedSpline::new(knots.clone(), values[axis].clone());
    Ok(([mk(0)?, mk(1)?, mk(2)?], knots))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_interpolates_and_is_clamped() {
        let s = ClampedSpline::new(vec![0.0, 1.0, 2.5, 3.0], vec![0.0, 2.0, -1.0, 0.5]).unwrap();
        for (t, y) in [(0.0, 0.0), (1.0, 2.0), (2.5, -1.0), (3.0, 0.5)] {
            assert!((s.eval(t).0 - y).abs() < 1e-12);
        }
        assert!(s.eval(0.0).1.abs() < 1e-12);
        assert!(s.eval(3.0).1.abs() < 1e-12);
        // Derivative continuity across interior knots.
        for t in [1.0, 2.5] {
            let l = s.eval(t - 1e-9).1;
            let r = s.eval(t + 1e-9).1;
            assert!((l - r).abs() < 1e-6);
        }
        // Slope matches differences of the value.
        let h = 1e-6;
        for t in [0.3, 1.7, 2.8] {
            let fd = (s.eval(t + h).0 - s.eval(t - h).0) / (2.0 * h);
            assert!((fd - s.eval(t).1).abs() < 1e-6);
        }
    }

    #[test]
    fn reference_passes_through_waypoints() {
        let traj = gen_reference_trajectory(3, 10.0, 0.02).unwrap();
        assert_eq!(traj.states.len(), 501);
        assert_eq!(traj, gen_reference_trajectory(3, 10.0, 0.02).unwrap());
        let (splines, knots) = reference_splines(3, 10.0).unwrap();
        for (i, t) in knots.iter().enumerate() {
            let k = (t / 0.02).round() as usize;
            for axis in 0..3 {
                assert!((traj.states[k][axis] - splines[axis].values[i]).abs() < 1e-9);
            }
        }
        assert!(traj.states[0].iter().all(|v| v.abs() < 1e-12));
        // C1: sampled velocities have no jumps at the waypoints.
        for k in 1..traj.states.len() - 1 {
            for axis in 0..3 {
                let jump = (traj.states[k + 1][3 + axis] - traj.states[k][3 + axis]).abs();
                assert!(jump < 0.2, "velocity jump {jump} at {k}");
            }
        }
    }

    #[test]
    fn finite_difference_velocity_is_continuous_at_knots() {
        let (splines, knots) = reference_splines(11, 10.0).unwrap();
        let h = 1e-8;
        for t in &knots[1..knots.len() - 1] {
            for sp in &splines {
                let left = (sp.eval(*t).0 - sp.eval(t - h).0) / h;
                let right = (sp.eval(t + h).0 - sp.eval(*t).0) / h;
                assert!((left - right).abs() < 1e-6);
            }
        }
    }
}
