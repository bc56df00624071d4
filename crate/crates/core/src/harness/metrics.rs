use crate::error::{Error, Result};

/// Mean over steps and dimensions of the squared error of the first `n`
/// predicted states.
pub fn n_step_mse(pred: &[Vec<f64>], truth: &[Vec<f64>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n_step_mse needs n >= 1"));
    }
    if pred.len() < n || truth.len() < n {
        return Err(Error::shape(format!(
            "need {n} steps, have {} predicted and {} true",
            pred.len(),
            truth.len()
        )));
    }
    sq_err_mean(&pred[..n], &truth[..n])
}

/// Squared error over the whole rollout. Returns `(mse, diverged)`; a
/// non-finite rollout scores `+inf` and is flagged.
pub fn rollout_mse(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<(f64, bool)> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(format!("rollout lengths {} and {}", pred.len(), truth.len())));
    }
    let m = sq_err_mean(pred, truth)?;
    if m.is_finite() {
        Ok((m, false))
    } else {
        Ok((f64::INFINITY, true))
    }
}

fn sq_err_mean(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if p.len() != t.len() {
            return Err(Error::shape(format!("state widths {} and {}", p.len(), t.len())));
        }
        for (a, b) in p.iter().zip(t) {
            total += (a - b) * (a - b);
        }
        count += p.len();
    }
    if count == 0 {
        return Err(Error::shape("empty states"));
    }
    Ok(total / count as f64)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Median; NaN-free input assumed, `+inf` allowed.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Sum of absolute successive differences.
pub fn total_variation(v: &[f64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Z-scores with the population moments; a constant series maps to zeros.
pub fn zscore(v: &[f64]) -> Vec<f64> {
    let m = mean(v);
    let s = std_dev(v);
    if !(s > 1e-12) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - m) / s).collect()
}

/// First principal component of row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca1 {
    pub mean: Vec<f64>,
    pub axis: Vec<f64>,
    pub projections: Vec<f64>,
}

/// Projects `rows` onto their leading principal axis. The covariance is the
/// population one; the axis comes from power iteration started at the centered
/// row of largest norm, and its sign makes the first nonzero projection
/// positive. Zero covariance gives axis `e1` and zero projections.
pub fn pca_1d(rows: &[Vec<f64>]) -> Result<Pca1> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::invalid("pca needs at least two vectors"));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::shape("pca rows must share a positive width"));
    }
    let mut mu = vec![0.0; d];
    for r in rows {
        for (m, v) in mu.iter_mut().zip(r) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mu).map(|(v, m)| v - m).collect()).collect();
    let mut cov = vec![0.0; d * d];
    for r in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += r[i] * r[j];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= n as f64);

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let start = centered
        .iter()
        .max_by(|a, b| norm(a).total_cmp(&norm(b)))
        .expect("nonempty");
    let mut e1 = vec![0.0; d];
    e1[0] = 1.0;
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if !(trace > 1e-300) {
        return Ok(Pca1 {
            mean: mu,
            axis: e1,
            projections: vec![0.0; n],
        });
    }
    let mut v: Vec<f64> = start.iter().map(|x| x / norm(start)).collect();
    for _ in 0..200 {
        let mut w = vec![0.0; d];
        for i in 0..d {
            w[i] = (0..d).map(|j| cov[i * d + j] * v[j]).sum();
        }
        let wn = norm(&w);
        if !(wn > 0.0) {
            break;
        }
        w.iter_mut().for_each(|x| *x /= wn);
        let change = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if change < 1e-10 {
            break;
        }
    }
    let mut proj: Vec<f64> = centered.iter().map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
    if let Some(first) = proj.iter().find(|p| **p != 0.0) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
            proj.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(Pca1 {
        mean: mu,
        axis: v,
        projections: proj,
    })
}

/// Total variation of the z-scored `series` divided by that of the z-scored
/// `reference`. Measures how much smoother or rougher a signal is than the
/// quantity it tracks.
pub fn tv_ratio(series: &[f64], reference: &[f64]) -> f64 {
    total_variation(&zscore(series)) / total_variation(&zscore(reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n_step_examples() {
        let p = vec![vec![1.0, 1.0], vec![3.0, 0.0]];
        let t = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(n_step_mse(&p, &t, 1).unwrap(), 0.5);
        assert_eq!(n_step_mse(&p, &t, 2).unwrap(), 1.25);
        assert!(n_step_mse(&p, &t, 0).is_err());
        assert!(n_step_mse(&p, &t, 3).is_err());
    }

    #[test]
    fn diverged_rollouts_are_flagged() {
        let t = vec![vec![0.0]; 3];
        let p4 = vec![vec![0.5, 0.0, 0.0, 0.0]; 2];
        assert_eq!(n_step_mse(&p4, &vec![vec![0.0; 4]; 2], 2).unwrap(), 0.0625);
        assert_eq!(rollout_mse(&t, &t).unwrap(), (0.0, false));
        let p = vec![vec![0.0], vec![f64::NAN], vec![0.0]];
        assert_eq!(rollout_mse(&p, &t).unwrap(), (f64::INFINITY, true));
        assert!(rollout_mse(&p[..2], &t).is_err());
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[1.0, f64::INFINITY, 2.0]), 2.0);
        assert_eq!(std_dev(&[1.0, 3.0]), 1.0);
        assert_eq!(total_variation(&[0.0, 2.0, 1.0]), 3.0);
        assert_eq!(zscore(&[5.0, 5.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let t = i as f64 / 10.0 - 2.5;
                let wobble = 0.01 * ((i * 7) % 5) as f64;
                vec![3.0 * t + 1.0, -4.0 * t + wobble, 2.0]
            })
            .collect();
        let p = pca_1d(&rows).unwrap();
        assert!((p.axis[0].abs() - 0.6).abs() < 1e-3, "{:?}", p.axis);
        assert!((p.axis[1].abs() - 0.8).abs() < 1e-3);
        assert!(p.axis[2].abs() < 1e-9);
        assert!(p.projections[0] > 0.0);
        let flat = pca_1d(&vec![vec![1.0, 2.0]; 4]).unwrap();
        assert_eq!(flat.axis, vec![1.0, 0.0]);
        assert_eq!(flat.projections, vec![0.0; 4]);
    }

    #[test]
    fn pca_axis_aligned_example() {
        let rows = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![2.0, 0.0], vec![-2.0, 0.0]];
        let p = pca_1d(&rows).unwrap();
        assert_eq!(p.axis, vec![1.0, 0.0]);
        assert_eq!(p.projections, vec![1.0, -1.0, 2.0, -2.0]);
        assert!(pca_1d(&rows[..1]).is_err());
    }

    #[test]
    fn projection_variance_is_top_eigenvalue() {
        use nalgebra::DMatrix;
        use rand::Rng;
        let mut r = crate::rng::stream(4, "test.pca");
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let t: f64 = r.gen_range(-1.0..1.0);
                (0..5).map(|j| t * (j as f64 + 1.0) + 0.3 * r.gen_range(-1.0..1.0)).collect()
            })
            .collect();
        let p = pca_1d(&rows).unwrap();
        let m = DMatrix::from_fn(30, 5, |i, j| rows[i][j] - p.mean[j]);
        let cov = m.transpose() * &m / 30.0;
        let top = cov.symmetric_eigen().eigenvalues.max();
        let var = p.projections.iter().map(|x| x * x).sum::<f64>() / 30.0;
        assert!((var - top).abs() < 1e-8, "{var} vs {top}");
    }

    #[test]
    fn tv_ratio_is_scale_free() {
        let w: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin()).collect();
        let scaled: Vec<f64> = w.iter().map(|v| 7.0 * v - 3.0).collect();
        assert!((tv_ratio(&scaled, &w) - 1.0).abs() < 1e-12);
    }
}
