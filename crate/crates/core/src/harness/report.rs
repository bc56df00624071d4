use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{mean, std_dev};
use crate::error::{Error, Result};
use crate::systems::fmt_f64;

/// Per-seed metric values of one experiment plus the digests that tie them to
/// their config and data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub experiment: String,
    pub config_digest: String,
    /// metric -> seed -> value
    pub per_seed: BTreeMap<String, BTreeMap<u64, f64>>,
    /// seed -> digest of the data that seed was run on
    pub data_digests: BTreeMap<u64, String>,
    /// Human-readable notes about failed stages, in occurrence order.
    pub failures: Vec<String>,
}

/// Mean and population std of one metric over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl MetricsReport {
    pub fn new(experiment: &str, config_digest: &str) -> Self {
        MetricsReport {
            experiment: experiment.to_string(),
            config_digest: config_digest.to_string(),
            ..Default::default()
        }
    }

    pub fn record(&mut self, metric: &str, seed: u64, value: f64) {
        self.per_seed.entry(metric.to_string()).or_default().insert(seed, value);
    }

    pub fn get(&self, metric: &str, seed: u64) -> Option<f64> {
        self.per_seed.get(metric).and_then(|m| m.get(&seed)).copied()
    }

    pub fn values(&self, metric: &str) -> Vec<f64> {
        self.per_seed.get(metric).map(|m| m.values().copied().collect()).unwrap_or_default()
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.per_seed.values().flat_map(|m| m.keys().copied()).collect();
        s.extend(self.data_digests.keys());
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn aggregate(&self) -> Vec<Aggregate> {
        self.per_seed
            .iter()
            .map(|(k, m)| {
                let v: Vec<f64> = m.values().copied().collect();
                Aggregate {
                    metric: k.clone(),
                    n: v.len(),
                    mean: mean(&v),
                    std: std_dev(&v),
                }
            })
            .collect()
    }

    /// Folds another seed's report into this one. Reports from different
    /// configs, or that disagree on a seed's data, are refused.
    pub fn merge(&mut self, other: &MetricsReport) -> Result<()> {
        if other.config_digest != self.config_digest || other.experiment != self.experiment {
            return Err(Error::invalid(format!(
                "cannot merge reports of different configs ({} vs {})",
                self.config_digest, other.config_digest
            )));
        }
        for (seed, d) in &other.data_digests {
            if let Some(mine) = self.data_digests.get(seed) {
                if mine != d {
                    return Err(Error::invalid(format!("seed {seed} ran on different data in the two reports")));
                }
            }
        }
        for (metric, m) in &other.per_seed {
            for (seed, v) in m {
                self.record(metric, *seed, *v);
            }
        }
        self.data_digests.extend(other.data_digests.iter().map(|(k, v)| (*k, v.clone())));
        self.failures.extend(other.failures.iter().cloned());
        Ok(())
    }

    fn header(&self) -> String {
        format!("# config_digest: {}\n# experiment: {}\n", self.config_digest, self.experiment)
    }

    pub fn write_metrics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.header().as_bytes())?;
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["metric", "seed", "value"])?;
        for (k, m) in &self.per_seed {
            for (seed, v) in m {
                c.write_record([k.clone(), seed.to_string(), fmt_f64(*v)])?;
            }
        }
        c.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.header().as_bytes())?;
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["metric", "n", "mean", "std"])?;
        for a in self.aggregate() {
            c.write_record([a.metric, a.n.to_string(), fmt_f64(a.mean), fmt_f64(a.std)])?;
        }
        c.flush()?;
        Ok(())
    }

    /// Writes `metrics.csv`, `summary.csv` and `report.toml` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_metrics_csv(std::fs::File::create(dir.join("metrics.csv"))?)?;
        self.write_summary_csv(std::fs::File::create(dir.join("summary.csv"))?)?;
        std::fs::write(dir.join("report.toml"), self.to_toml()?)?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        // TOML keys must be strings, so seeds go through a string-keyed mirror.
        let mirror = ReportToml::from(self);
        toml::to_string(&mirror).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mirror: ReportToml = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        mirror.try_into()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportToml {
    experiment: String,
    config_digest: String,
    per_seed: BTreeMap<String, BTreeMap<String, f64>>,
    data_digests: BTreeMap<String, String>,
    failures: Vec<String>,
}

impl From<&MetricsReport> for ReportToml {
    fn from(r: &MetricsReport) -> Self {
        ReportToml {
            experiment: r.experiment.clone(),
            config_digest: r.config_digest.clone(),
            per_seed: r
                .per_seed
                .iter()
                .map(|(k, m)| (k.clone(), m.iter().map(|(s, v)| (s.to_string(), *v)).collect()))
                .collect(),
            data_digests: r.data_digests.iter().map(|(s, d)| (s.to_string(), d.clone())).collect(),
            failures: r.failures.clone(),
        }
    }
}

impl TryFrom<ReportToml> for MetricsReport {
    type Error = Error;

    fn try_from(t: ReportToml) -> Result<Self> {
        let seed = |s: &str| s.parse::<u64>().map_err(|_| Error::Format(format!("bad seed key {s:?}")));
        let mut per_seed = BTreeMap::new();
        for (k, m) in t.per_seed {
            let mut inner = BTreeMap::new();
            for (s, v) in m {
                inner.insert(seed(&s)?, v);
            }
            per_seed.insert(k, inner);
        }
        let mut data_digests = BTreeMap::new();
        for (s, d) in t.data_digests {
            data_digests.insert(seed(&s)?, d);
        }
        Ok(MetricsReport {
            experiment: t.experiment,
            config_digest: t.config_digest,
            per_seed,
            data_digests,
            failures: t.failures,
        })
    }
}
