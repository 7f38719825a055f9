use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::EpidemicDataset;
use crate::diffcore::Tensor3;
use crate::error::{Error, Result};

/// Added to every min-max denominator.
pub const NORM_EPS: f64 = 1e-12;

const FEATURES: [&str; 3] = ["S", "I", "R"];

/// Whether min-max statistics are pooled over regions or kept per region.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    #[default]
    Global,
    PerRegion,
}

/// Per-feature min-max statistics taken from the training span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub scope: NormScope,
    pub regions: usize,
    /// One entry per feature (global) or per `(region, feature)` pair.
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn fit(sir: &Tensor3, span: Range<usize>, scope: NormScope) -> Result<Self> {
        let [t, q, f] = sir.shape();
        if f != 3 || span.is_empty() || span.end > t {
            return Err(Error::InvalidArgument(format!(
                "normalization span {span:?} invalid for {t} days"
            )));
        }
        let slots = match scope {
            NormScope::Global => 3,
            NormScope::PerRegion => q * 3,
        };
        let mut stats = Self {
            scope,
            regions: q,
            min: vec![f64::INFINITY; slots],
            max: vec![f64::NEG_INFINITY; slots],
        };
        for day in span {
            for k in 0..q {
                for feat in 0..3 {
                    let s = stats.slot(k, feat);
                    let v = sir.get(day, k, feat);
                    stats.min[s] = stats.min[s].min(v);
                    stats.max[s] = stats.max[s].max(v);
                }
            }
        }
        Ok(stats)
    }

    fn slot(&self, region: usize, feature: usize) -> usize {
        match self.scope {
            NormScope::Global => feature,
            NormScope::PerRegion => region * 3 + feature,
        }
    }

    pub fn is_degenerate(&self, region: usize, feature: usize) -> bool {
        let s = self.slot(region, feature);
        self.max[s] == self.min[s]
    }

    /// Human-readable notes for every constant feature.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in 0..self.min.len() {
            if self.max[s] == self.min[s] {
                let where_ = match self.scope {
                    NormScope::Global => String::new(),
                    NormScope::PerRegion => format!(" in region {}", s / 3),
                };
                out.push(format!(
                    "feature {}{where_} is constant ({}) on the training span; normalized to 0",
                    FEATURES[s % 3],
                    self.min[s]
                ));
            }
        }
        out
    }

    /// `(min, scale)` such that `normalized = (x − min) · scale`; the scale
    /// is zero for a constant feature.
    pub fn affine(&self, region: usize, feature: usize) -> (f64, f64) {
        let s = self.slot(region, feature);
        if self.max[s] == self.min[s] {
            (self.min[s], 0.0)
        } else {
            (self.min[s], 1.0 / (self.max[s] - self.min[s] + NORM_EPS))
        }
    }

    pub fn normalize(&self, x: f64, region: usize, feature: usize) -> f64 {
        let (lo, scale) = self.affine(region, feature);
        (x - lo) * scale
    }

    pub fn denormalize(&self, x: f64, region: usize, feature: usize) -> f64 {
        let s = self.slot(region, feature);
        if self.max[s] == self.min[s] {
            self.min[s]
        } else {
            x * (self.max[s] - self.min[s] + NORM_EPS) + self.min[s]
        }
    }

    /// Normalizes a `[T, Q, 3]` tensor, or a `[T, Q, 1]` tensor holding
    /// only `feature`.
    pub fn normalize_tensor(&self, x: &Tensor3, feature: usize) -> Tensor3 {
        let width = x.shape()[2];
        Tensor3::from_fn(x.shape(), |t, q, f| {
            let feat = if width == 3 { f } else { feature };
            self.normalize(x.get(t, q, f), q, feat)
        })
    }

    pub fn denormalize_tensor(&self, x: &Tensor3, feature: usize) -> Tensor3 {
        let width = x.shape()[2];
        Tensor3::from_fn(x.shape(), |t, q, f| {
            let feat = if width == 3 { f } else { feature };
            self.denormalize(x.get(t, q, f), q, feat)
        })
    }
}

/// Chronological train/validation/test partition plus the whole series
/// normalized with training-span statistics.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub stats: NormStats,
    pub normalized: Tensor3,
}

/// Splits lengths are `floor(r·T)` for train and validation, with the
/// remainder going to test.
pub fn split_and_normalize(ds: &EpidemicDataset, ratios: [f64; 3], scope: NormScope) -> Result<Split> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let total = ds.days();
    // The nudge keeps products such as 0.7·10 = 6.999… from rounding down.
    let len = |r: f64| (r * total as f64 + 1e-9).floor() as usize;
    let (n_train, n_val) = (len(ratios[0]), len(ratios[1]));
    if n_train == 0 {
        return Err(Error::Data(format!("{total} days leave an empty training span")));
    }
    let train = 0..n_train;
    let val = n_train..n_train + n_val;
    let test = n_train + n_val..total;
    let stats = NormStats::fit(&ds.sir, train.clone(), scope)?;
    for w in stats.warnings() {
        log::warn!("{w}");
    }
    let normalized = stats.normalize_tensor(&ds.sir, 0);
    Ok(Split {
        train,
        val,
        test,
        stats,
        normalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn dataset(days: usize) -> EpidemicDataset {
        let sir = Tensor3::from_fn([days, 2, 3], |t, q, f| match f {
            0 => 1000.0 - 2.0 * t as f64 - q as f64,
            1 => 2.0 * t as f64 + q as f64,
            _ => 0.0,
        });
        EpidemicDataset::new(
            vec!["a".into(), "b".into()],
            NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            sir,
            vec![1000.0, 1000.0],
        )
        .unwrap()
    }

    #[test]
    fn split_lengths() {
        let s = split_and_normalize(&dataset(365), [0.6, 0.2, 0.2], NormScope::Global).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (219, 73, 73));
        let s = split_and_normalize(&dataset(10), [0.7, 0.1, 0.2], NormScope::Global).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
    }

    #[test]
    fn min_max_formula() {
        let sir = Tensor3::from_fn([2, 1, 3], |t, _, f| if f == 1 { 200.0 * t as f64 } else { 7.0 });
        let stats = NormStats::fit(&sir, 0..2, NormScope::Global).unwrap();
        assert!((stats.normalize(50.0, 0, 1) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_maps_to_zero_with_warning() {
        let s = split_and_normalize(&dataset(20), [0.6, 0.2, 0.2], NormScope::Global).unwrap();
        assert!(s.stats.is_degenerate(0, 2));
        assert_eq!(s.stats.warnings().len(), 1);
        assert!((0..20).all(|t| s.normalized.get(t, 0, 2) == 0.0 && s.normalized.get(t, 1, 2) == 0.0));
    }

    #[test]
    fn per_region_scope_uses_region_ranges() {
        let ds = dataset(20);
        let s = split_and_normalize(&ds, [0.5, 0.25, 0.25], NormScope::PerRegion).unwrap();
        assert_eq!(s.stats.min.len(), 6);
        assert_eq!(s.normalized.get(0, 1, 1), 0.0);
        assert!((s.normalized.get(9, 1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn denormalize_inverts() {
        let ds = dataset(30);
        let s = split_and_normalize(&ds, [0.6, 0.2, 0.2], NormScope::Global).unwrap();
        let back = s.stats.denormalize_tensor(&s.normalized, 0);
        for t in 0..30 {
            for q in 0..2 {
                for f in 0..2 {
                    let (a, b) = (back.get(t, q, f), ds.sir.get(t, q, f));
                    assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_ratios() {
        assert!(split_and_normalize(&dataset(10), [0.6, 0.3, 0.3], NormScope::Global).is_err());
    }
}
