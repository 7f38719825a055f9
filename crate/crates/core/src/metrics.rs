//! Forecast accuracy and agreement scores over a flattened region × time grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, CsvTable};

pub const METRIC_HEADER: [&str; 7] = ["horizon", "seed", "mae", "rmse", "rae", "pcc", "ccc"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub rae: f64,
    pub pcc: f64,
    pub ccc: f64,
    /// Scores that came out undefined (NaN) and why.
    pub flags: Vec<String>,
}

impl MetricReport {
    pub fn values(&self) -> [f64; 5] {
        [self.mae, self.rmse, self.rae, self.pcc, self.ccc]
    }
}

/// Scores `predicted` against `observed`. Variances are population (1/n)
/// variances.
pub fn compute(predicted: &[f64], observed: &[f64]) -> Result<MetricReport> {
    if predicted.len() != observed.len() {
        return Err(Error::shape("metrics::compute", &[predicted.len()], &[observed.len()]));
    }
    if predicted.len() < 2 {
        return Err(Error::InvalidArgument("metrics need at least 2 cells".into()));
    }
    let n = predicted.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (mu_p, mu_o) = (mean(predicted), mean(observed));

    let mut abs_err = 0.0;
    let mut sq_err = 0.0;
    let mut abs_dev_obs = 0.0;
    let (mut cov, mut var_p, mut var_o) = (0.0, 0.0, 0.0);
    for (p, o) in predicted.iter().zip(observed) {
        let e = p - o;
        abs_err += e.abs();
        sq_err += e * e;
        abs_dev_obs += (o - mu_o).abs();
        cov += (p - mu_p) * (o - mu_o);
        var_p += (p - mu_p).powi(2);
        var_o += (o - mu_o).powi(2);
    }

    let mut flags = Vec::new();
    let rae = if abs_dev_obs == 0.0 {
        flags.push("rae undefined: observations are constant".to_owned());
        f64::NAN
    } else {
        abs_err / abs_dev_obs
    };
    let pcc = if var_p == 0.0 || var_o == 0.0 {
        flags.push("pcc undefined: zero variance".to_owned());
        f64::NAN
    } else {
        cov / (var_p * var_o).sqrt()
    };
    // ρ·σ_pre·σ_obs is the population covariance.
    let denom = var_p / n + var_o / n + (mu_p - mu_o).powi(2);
    let ccc = if var_o == 0.0 {
        flags.push("ccc undefined: observations are constant".to_owned());
        f64::NAN
    } else {
        2.0 * (cov / n) / denom
    };
    Ok(MetricReport {
        mae: abs_err / n,
        rmse: (sq_err / n).sqrt(),
        rae,
        pcc,
        ccc,
        flags,
    })
}

/// Metric rows keyed by horizon and seed.
pub fn metric_table(rows: &[(usize, u64, MetricReport)]) -> Result<CsvTable> {
    let mut table = CsvTable::new(&METRIC_HEADER);
    for (horizon, seed, m) in rows {
        let mut row = vec![horizon.to_string(), seed.to_string()];
        row.extend(m.values().iter().map(|v| fmt_f64(*v)));
        table.push(row)?;
    }
    Ok(table)
}
