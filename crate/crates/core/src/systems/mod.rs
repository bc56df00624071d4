//! Task generators and simulators: quartic polynomials, the two-mass spring
//! chain and the planar rotorcraft, plus reference trajectories and the PD
//! controller used to collect flight data.

mod drone;
mod ode;
mod poly;
mod reference;
mod spring;

pub use drone::*;
pub use ode::{rk4_step, rk4_step_vjp};
pub use poly::*;
pub use reference::*;
pub use spring::*;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of `dt` steps in `duration`; fails unless the ratio is integral.
pub fn steps_for(duration: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) || !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::invalid(format!("need dt > 0 and duration >= 0, got dt={dt}, duration={duration}")));
    }
    let n = (duration / dt).round();
    if (n * dt - duration).abs() > 1e-9 * duration.max(1.0) {
        return Err(Error::invalid(format!("duration {duration} is not a whole number of steps of {dt}")));
    }
    Ok(n as usize)
}

/// Uniformly sampled state sequence, optionally with the action applied at
/// each step and the wind at each sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
    /// Empty, or one entry per transition (`states.len() - 1`).
    pub actions: Vec<Vec<f64>>,
    /// Empty, or one entry per state.
    pub wind: Vec<f64>,
}

impl Trajectory {
    pub fn new(dt: f64, states: Vec<Vec<f64>>) -> Self {
        Trajectory {
            dt,
            states,
            actions: Vec::new(),
            wind: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid("trajectory dt must be positive"));
        }
        if self.states.is_empty() {
            return Err(Error::invalid("trajectory has no states"));
        }
        let d = self.states[0].len();
        if self.states.iter().any(|s| s.len() != d) {
            return Err(Error::shape("ragged trajectory states"));
        }
        if !self.actions.is_empty() && self.actions.len() + 1 != self.states.len() {
            return Err(Error::shape(format!(
                "{} actions for {} states",
                self.actions.len(),
                self.states.len()
            )));
        }
        if !self.wind.is_empty() && self.wind.len() != self.states.len() {
            return Err(Error::shape("wind series must align with states"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// CSV with columns `t, <state names>, <action names>, wind`. The action
    /// cells of the final row are empty. `digest` becomes a leading comment.
    pub fn write_csv<W: Write>(
        &self,
        mut w: W,
        state_names: &[&str],
        action_names: &[&str],
        digest: Option<&str>,
    ) -> Result<()> {
        self.validate()?;
        if state_names.len() != self.states[0].len() {
            return Err(Error::shape("state column names"));
        }
        let has_actions = !self.actions.is_empty();
        if has_actions && action_names.len() != self.actions[0].len() {
            return Err(Error::shape("action column names"));
        }
        if let Some(d) = digest {
            writeln!(w, "# config_digest: {d}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(state_names.iter().map(|s| s.to_string()));
        if has_actions {
            header.extend(action_names.iter().map(|s| s.to_string()));
        }
        if !self.wind.is_empty() {
            header.push("wind".into());
        }
        out.write_record(&header)?;
        for (k, s) in self.states.iter().enumerate() {
            let mut row = vec![fmt_f64(k as f64 * self.dt)];
            row.extend(s.iter().map(|v| fmt_f64(*v)));
            if has_actions {
                match self.actions.get(k) {
                    Some(a) => row.extend(a.iter().map(|v| fmt_f64(*v))),
                    None => row.extend(action_names.iter().map(|_| String::new())),
                }
            }
            if let Some(w) = self.wind.get(k) {
                row.push(fmt_f64(*w));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Shortest decimal that round-trips, so CSVs are exact and byte-stable.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub const DRONE_STATE_NAMES: [&str; 6] = ["x", "y", "phi", "vx", "vy", "omega"];
pub const DRONE_ACTION_NAMES: [&str; 3] = ["ux", "uy", "uphi"];
pub const SPRING_STATE_NAMES: [&str; 4] = ["x1", "x2", "v1", "v2"];

/// Description of a generated dataset, written next to the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub kind: String,
    pub seed: u64,
    pub count: usize,
    pub dt: f64,
    pub duration: f64,
    pub parameter_ranges: BTreeMap<String, [f64; 2]>,
    pub content_hash: String,
}

impl DatasetManifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_counts() {
        assert_eq!(steps_for(10.0, 1e-3).unwrap(), 10000);
        assert_eq!(steps_for(10.0, 0.02).unwrap(), 500);
        assert_eq!(steps_for(0.0, 0.02).unwrap(), 0);
        assert!(steps_for(1.0, 0.3).is_err());
        assert!(steps_for(1.0, 0.0).is_err());
    }

    #[test]
    fn trajectory_csv() {
        let mut t = Trajectory::new(0.5, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        t.actions = vec![vec![0.25]];
        t.wind = vec![4.0, 4.0];
        let mut buf = Vec::new();
        t.write_csv(&mut buf, &["a", "b"], &["u"], Some("abc")).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "# config_digest: abc\nt,a,b,u,wind\n0.0,1.0,2.0,0.25,4.0\n0.5,3.0,4.0,,4.0\n");
        t.actions.push(vec![1.0]);
        assert!(t.validate().is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let mut ranges = BTreeMap::new();
        ranges.insert("wind".to_string(), [0.0, 8.0]);
        let m = DatasetManifest {
            kind: "drone".into(),
            seed: 3,
            count: 500,
            dt: 0.02,
            duration: 10.0,
            parameter_ranges: ranges,
            content_hash: "00".into(),
        };
        assert_eq!(DatasetManifest::from_toml(&m.to_toml().unwrap()).unwrap(), m);
    }
}
