use std::ops::Range;

use super::{EpidemicDataset, Split};
use crate::diffcore::Tensor3;
use crate::error::{Error, Result};
use crate::scsir::CompartmentState;

/// One training sample: `t_obs` observed days followed by `t_pre` target days.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    /// Absolute day index of the first observed day.
    pub start: usize,
    /// `[T_obs, Q, 3]`, normalized.
    pub x_obs: Tensor3,
    /// `[T_pre, Q, 1]` normalized infectious counts.
    pub y_obs: Tensor3,
    /// `[T_pre, Q, 1]` infectious person counts.
    pub y_obs_raw: Tensor3,
    /// Raw compartments on the last observed day.
    pub sir_last: CompartmentState,
}

impl SampleWindow {
    pub fn t_obs(&self) -> usize {
        self.x_obs.shape()[0]
    }

    pub fn t_pre(&self) -> usize {
        self.y_obs.shape()[0]
    }
}

/// Stride-1 windows lying entirely inside `span`.
pub fn make_windows(
    ds: &EpidemicDataset,
    split: &Split,
    span: Range<usize>,
    t_obs: usize,
    t_pre: usize,
) -> Result<Vec<SampleWindow>> {
    if t_obs == 0 || t_pre == 0 {
        return Err(Error::InvalidArgument("t_obs and t_pre must be positive".into()));
    }
    if span.end > ds.days() {
        return Err(Error::InvalidArgument(format!(
            "span {span:?} exceeds {} days",
            ds.days()
        )));
    }
    let need = t_obs + t_pre;
    if span.len() < need {
        return Err(Error::Data(format!(
            "span of {} days is too short: windows need at least t_obs + t_pre = {need}",
            span.len()
        )));
    }
    let q = ds.num_regions();
    let windows = (span.start..=span.end - need)
        .map(|start| {
            let first_target = start + t_obs;
            SampleWindow {
                start,
                x_obs: Tensor3::from_fn([t_obs, q, 3], |t, k, f| split.normalized.get(start + t, k, f)),
                y_obs: Tensor3::from_fn([t_pre, q, 1], |t, k, _| split.normalized.get(first_target + t, k, 1)),
                y_obs_raw: Tensor3::from_fn([t_pre, q, 1], |t, k, _| ds.sir.get(first_target + t, k, 1)),
                sir_last: ds.state(first_target - 1),
            }
        })
        .collect();
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{split_and_normalize, NormScope};
    use chrono::NaiveDate;

    fn dataset(days: usize) -> EpidemicDataset {
        let sir = Tensor3::from_fn([days, 2, 3], |t, q, f| match f {
            0 => 500.0 - t as f64 - q as f64,
            1 => t as f64 + q as f64,
            _ => 0.0,
        });
        let start = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
        EpidemicDataset::new(vec!["x".into(), "y".into()], start, sir, vec![500.0; 2]).unwrap()
    }

    #[test]
    fn window_counts() {
        let ds = dataset(365);
        let split = split_and_normalize(&ds, [0.6, 0.2, 0.2], NormScope::Global).unwrap();
        assert_eq!(make_windows(&ds, &split, 0..365, 7, 7).unwrap().len(), 352);
        assert_eq!(make_windows(&ds, &split, 0..14, 7, 7).unwrap().len(), 1);
        let err = make_windows(&ds, &split, 0..13, 7, 7).unwrap_err();
        assert!(err.to_string().contains("14"), "{err}");
    }

    #[test]
    fn windows_are_contiguous_and_seeded() {
        let ds = dataset(40);
        let split = split_and_normalize(&ds, [0.6, 0.2, 0.2], NormScope::Global).unwrap();
        let w = &make_windows(&ds, &split, 3..40, 5, 2).unwrap()[4];
        assert_eq!(w.start, 7);
        assert_eq!(w.sir_last, ds.state(11));
        assert_eq!(w.y_obs_raw.get(0, 1, 0), ds.sir.get(12, 1, 1));
        assert_eq!(w.y_obs.get(1, 0, 0), split.normalized.get(13, 0, 1));
    }
}
