use serde::Serialize;

use super::config::Variant;
use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::metrics::{metric_table, MetricReport};

pub const METRIC_NAMES: [&str; 5] = ["mae", "rmse", "rae", "pcc", "ccc"];

/// Loss and validation history of one curriculum stage.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageCurve {
    pub horizon: usize,
    /// Mean training loss over each epoch's batches, each taken before its update.
    pub train_loss: Vec<f64>,
    /// Validation MAE (persons) after each epoch's update.
    pub val_mae: Vec<f64>,
    /// Validation MAE of the weights the stage started from.
    pub initial_val_mae: f64,
    /// Epoch whose weights were kept; `None` keeps the starting weights.
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: MetricReport,
    /// Validation MAE of the selected weights at the full horizon.
    pub val_mae: Option<f64>,
    /// Capped flows in the causal rollouts over the test windows.
    pub clamp_events: usize,
    pub curves: Vec<StageCurve>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    /// 95% half-width; `None` for a single seed.
    pub ci_half_width: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub variant: Variant,
    pub t_pre: usize,
    /// Sorted by seed.
    pub seeds: Vec<SeedResult>,
}

impl RunReport {
    pub fn new(variant: Variant, t_pre: usize, mut seeds: Vec<SeedResult>) -> Self {
        seeds.sort_by_key(|s| s.seed);
        Self { variant, t_pre, seeds }
    }

    /// Union of two reports over disjoint seed sets; the result does not
    /// depend on argument order.
    pub fn merge(self, other: RunReport) -> Result<RunReport> {
        if self.variant != other.variant || self.t_pre != other.t_pre {
            return Err(Error::InvalidArgument(format!(
                "cannot merge {} T_pre={} with {} T_pre={}",
                self.variant, self.t_pre, other.variant, other.t_pre
            )));
        }
        let mut seeds = self.seeds;
        for s in other.seeds {
            if seeds.iter().any(|r| r.seed == s.seed) {
                return Err(Error::InvalidArgument(format!("seed {} appears in both reports", s.seed)));
            }
            seeds.push(s);
        }
        Ok(RunReport::new(self.variant, self.t_pre, seeds))
    }

    pub fn summary(&self) -> Vec<MetricSummary> {
        (0..METRIC_NAMES.len())
            .map(|k| {
                let values: Vec<f64> = self.seeds.iter().map(|s| s.metrics.values()[k]).collect();
                let (mean, ci_half_width) = mean_ci(&values);
                MetricSummary {
                    metric: METRIC_NAMES[k].to_owned(),
                    mean,
                    ci_half_width,
                }
            })
            .collect()
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary().into_iter().find(|m| m.metric == metric).map(|m| m.mean)
    }

    pub fn metric_table(&self) -> Result<CsvTable> {
        let rows: Vec<_> = self.seeds.iter().map(|s| (self.t_pre, s.seed, s.metrics.clone())).collect();
        metric_table(&rows)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            #[serde(flatten)]
            report: &'a RunReport,
            summary: Vec<MetricSummary>,
        }
        serde_json::to_string_pretty(&Out {
            report: self,
            summary: self.summary(),
        })
        .expect("report is plain data")
    }
}

/// Mean and `1.96 · s / √n` with the sample standard deviation `s`.
pub fn mean_ci(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(1.96 * var.sqrt() / n.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(seed: u64, mae: f64) -> SeedResult {
        SeedResult {
            seed,
            metrics: MetricReport {
                mae,
                rmse: mae,
                rae: 1.0,
                pcc: 0.5,
                ccc: 0.5,
                flags: vec![],
            },
            val_mae: None,
            clamp_events: 0,
            curves: vec![],
        }
    }

    #[test]
    fn confidence_interval() {
        // Sample std of [1, 3] is √2.
        let (m, ci) = mean_ci(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((ci.unwrap() - 1.96).abs() < 1e-12);
        assert_eq!(mean_ci(&[4.0]), (4.0, None));
        let r = RunReport::new(Variant::Full, 7, vec![result(0, 2.0)]);
        assert!(r.summary().iter().all(|m| m.ci_half_width.is_none()));
    }

    #[test]
    fn merge_is_order_independent() {
        let a = RunReport::new(Variant::Full, 7, vec![result(2, 1.0)]);
        let b = RunReport::new(Variant::Full, 7, vec![result(0, 3.0), result(1, 2.0)]);
        let ab = a.clone().merge(b.clone()).unwrap();
        assert_eq!(ab, b.clone().merge(a.clone()).unwrap());
        assert_eq!(ab.mean("mae"), Some(2.0));
        assert!(ab.clone().merge(a).is_err());
        assert!(RunReport::new(Variant::CausalFree, 7, vec![]).merge(b).is_err());
    }
}
