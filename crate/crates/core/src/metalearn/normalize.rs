use serde::{Deserialize, Serialize};

use super::Task;
use crate::error::{ensure_len, Error, Result};

/// Per-coordinate affine standardization of inputs and outputs, fitted on a
/// training set and stored with the model so predictions can be mapped back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

fn moments<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for r in rows {
        n += 1;
        for i in 0..d {
            sum[i] += r[i];
            sq[i] += r[i] * r[i];
        }
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let var = (q / n - m * m).max(0.0);
            if var.sqrt() > 1e-12 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl Normalizer {
    pub fn identity(x_dim: usize, y_dim: usize) -> Self {
        Normalizer {
            x_mean: vec![0.0; x_dim],
            x_std: vec![1.0; x_dim],
            y_mean: vec![0.0; y_dim],
            y_std: vec![1.0; y_dim],
        }
    }

    /// Statistics over every context and target pair of `tasks`.
    pub fn fit(tasks: &[Task]) -> Result<Self> {
        let first = tasks.first().ok_or_else(|| Error::invalid("cannot fit a normalizer to no tasks"))?;
        let (dx, dy) = (first.x_dim(), first.y_dim());
        let (x_mean, x_std) = moments(tasks.iter().flat_map(|t| t.context_x.iter().chain(&t.target_x)), dx);
        let (y_mean, y_std) = moments(tasks.iter().flat_map(|t| t.context_y.iter().chain(&t.target_y)), dy);
        Ok(Normalizer { x_mean, x_std, y_mean, y_std })
    }

    pub fn x_dim(&self) -> usize {
        self.x_mean.len()
    }

    pub fn y_dim(&self) -> usize {
        self.y_mean.len()
    }

    pub fn apply_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.x_mean).zip(&self.x_std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn apply_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.y_mean).zip(&self.y_std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn invert_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.y_mean).zip(&self.y_std).map(|((v, m), s)| v * s + m).collect()
    }

    pub fn apply_task(&self, t: &Task) -> Result<Task> {
        ensure_len("normalizer input width", t.x_dim(), self.x_dim())?;
        ensure_len("normalizer output width", t.y_dim(), self.y_dim())?;
        let xs = |v: &[Vec<f64>]| v.iter().map(|x| self.apply_x(x)).collect();
        let ys = |v: &[Vec<f64>]| v.iter().map(|y| self.apply_y(y)).collect();
        Task::new(xs(&t.context_x), ys(&t.context_y), xs(&t.target_x), ys(&t.target_y), t.system.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metalearn::SystemParams;

    #[test]
    fn fit_and_invert() {
        let t = Task::new(
            vec![vec![1.0, 5.0], vec![3.0, 5.0]],
            vec![vec![10.0], vec![20.0]],
            vec![],
            vec![],
            SystemParams::Unknown,
        )
        .unwrap();
        let n = Normalizer::fit(&[t.clone()]).unwrap();
        assert_eq!(n.x_mean, vec![2.0, 5.0]);
        assert_eq!(n.x_std, vec![1.0, 1.0]);
        assert_eq!(n.y_std, vec![5.0]);
        let nt = n.apply_task(&t).unwrap();
        assert_eq!(nt.context_x[0], vec![-1.0, 0.0]);
        assert_eq!(n.invert_y(&nt.context_y[1]), vec![20.0]);
    }
}
