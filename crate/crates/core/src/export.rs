//! Plot-ready CSV artifacts from a trained checkpoint: forecast curves,
//! learned contact matrices and the reproduction-number series.

use chrono::NaiveDate;

use crate::dataio::{make_windows, EpidemicDataset, SampleWindow};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, CsvTable};
use crate::scsir::effective_r0;
use crate::trainer::{predict_windows, split_with_stats, Checkpoint};

pub const CURVE_HEADER: [&str; 5] = ["date", "region_id", "observed", "y_pre", "y_cau"];
pub const R0_HEADER: [&str; 2] = ["date", "r0"];

/// Rates estimated for one calendar day.
#[derive(Clone, Debug, PartialEq)]
pub struct DayParams {
    pub date: NaiveDate,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Row-major `Q × Q`.
    pub contact: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ExportBundle {
    pub contact_heatmaps: Vec<(NaiveDate, CsvTable)>,
    pub r0_series: CsvTable,
}

/// The window whose observed days end on `last_observed`.
fn window_ending(ck: &Checkpoint, ds: &EpidemicDataset, last_observed: usize, t_pre: usize) -> Result<SampleWindow> {
    let t_obs = ck.config.t_obs;
    let split = split_with_stats(ds, &ck.config, &ck.stats)?;
    if last_observed + 1 < t_obs {
        return Err(Error::InvalidArgument(format!(
            "{} has fewer than {t_obs} observed days before it",
            ds.date(last_observed)
        )));
    }
    let start = last_observed + 1 - t_obs;
    let mut w = make_windows(ds, &split, start..start + t_obs + t_pre, t_obs, t_pre)?;
    Ok(w.remove(0))
}

/// Forecast rows for the `T_pre` days after `from_date`, which is the last
/// observed day. Every forecast day must lie in the test span.
pub fn forecast_curves(ck: &Checkpoint, ds: &EpidemicDataset, from_date: NaiveDate) -> Result<CsvTable> {
    ck.check_dataset(ds)?;
    let t_pre = ck.config.t_pre;
    let test = split_with_stats(ds, &ck.config, &ck.stats)?.test;
    let last = ds
        .day_index(from_date)
        .ok_or_else(|| Error::InvalidArgument(format!("{from_date} is outside the dataset")))?;
    if last + 1 < test.start || last + t_pre >= test.end {
        return Err(Error::InvalidArgument(format!(
            "forecast days after {from_date} must lie in the test span {} ..= {}",
            ds.date(test.start),
            ds.date(test.end - 1)
        )));
    }
    let w = window_ending(ck, ds, last, t_pre)?;
    let bundle = predict_windows(ck, std::slice::from_ref(&w))?.remove(0);
    let y_pre = ck.stats.denormalize_tensor(&bundle.y_pre, 1);
    let y_cau = ck.stats.denormalize_tensor(&bundle.y_cau, 1);
    let mut table = CsvTable::new(&CURVE_HEADER);
    for t in 0..t_pre {
        for (k, region) in ds.regions.iter().enumerate() {
            table.push(vec![
                ds.date(last + 1 + t).to_string(),
                region.clone(),
                fmt_f64(w.y_obs_raw.get(t, k, 0)),
                fmt_f64(y_pre.get(t, k, 0)),
                fmt_f64(y_cau.get(t, k, 0)),
            ])?;
        }
    }
    Ok(table)
}

/// Rates for each date, read off the first forecast step of the window
/// that ends the day before. Dates must be consecutive.
pub fn estimate_day_params(ck: &Checkpoint, ds: &EpidemicDataset, dates: &[NaiveDate]) -> Result<Vec<DayParams>> {
    ck.check_dataset(ds)?;
    if dates.is_empty() {
        return Err(Error::InvalidArgument("no dates requested".into()));
    }
    for pair in dates.windows(2) {
        if pair[1] != pair[0] + chrono::Days::new(1) {
            return Err(Error::InvalidArgument(format!(
                "dates must be consecutive: gap between {} and {}",
                pair[0], pair[1]
            )));
        }
    }
    dates
        .iter()
        .map(|&date| {
            let day = ds
                .day_index(date)
                .ok_or_else(|| Error::InvalidArgument(format!("{date} is outside the dataset")))?;
            if day == 0 {
                return Err(Error::InvalidArgument(format!("{date} has no observed days before it")));
            }
            let w = window_ending(ck, ds, day - 1, 1)?;
            let params = predict_windows(ck, std::slice::from_ref(&w))?.remove(0).params;
            Ok(DayParams {
                date,
                beta: params.beta_at(0).to_vec(),
                gamma: params.gamma_at(0).to_vec(),
                contact: params.contact_at(0).to_vec(),
            })
        })
        .collect()
}

/// One heatmap per day (header of region ids, one row per target region)
/// and the `date,r0` series.
pub fn export_tables(regions: &[String], days: &[DayParams]) -> Result<ExportBundle> {
    let q = regions.len();
    let mut heatmaps = Vec::with_capacity(days.len());
    let mut r0 = CsvTable::new(&R0_HEADER);
    for d in days {
        if d.contact.len() != q * q || d.beta.len() != q || d.gamma.len() != q {
            return Err(Error::shape("export_tables", &[d.beta.len(), d.contact.len()], &[q, q * q]));
        }
        let mut table = CsvTable::new(regions);
        for row in d.contact.chunks(q) {
            table.push(row.iter().map(|v| fmt_f64(*v)).collect())?;
        }
        heatmaps.push((d.date, table));
        let est = effective_r0(&d.beta, &d.gamma, &d.contact)?;
        r0.push(vec![d.date.to_string(), fmt_f64(est.value)])?;
    }
    Ok(ExportBundle {
        contact_heatmaps: heatmaps,
        r0_series: r0,
    })
}

/// [`estimate_day_params`] followed by [`export_tables`].
pub fn export_params(ck: &Checkpoint, ds: &EpidemicDataset, dates: &[NaiveDate]) -> Result<ExportBundle> {
    export_tables(&ds.regions, &estimate_day_params(ck, ds, dates)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(d: u32, beta: f64) -> DayParams {
        DayParams {
            date: NaiveDate::from_ymd_opt(2020, 5, d).unwrap(),
            beta: vec![beta, 0.5 * beta],
            gamma: vec![0.2, 0.1],
            contact: vec![0.7, 0.2, 0.3, 0.6],
        }
    }

    fn r0_values(b: &ExportBundle) -> Vec<f64> {
        b.r0_series.rows().iter().map(|r| r[1].parse().unwrap()).collect()
    }

    #[test]
    fn heatmap_schema_and_r0_linearity() {
        let regions = vec!["a".to_string(), "b".to_string()];
        let base = export_tables(&regions, &[day(1, 0.3), day(2, 0.4)]).unwrap();
        let (_, map) = &base.contact_heatmaps[0];
        assert_eq!(map.header(), regions.as_slice());
        assert_eq!(map.rows().len(), 2);
        let doubled = export_tables(&regions, &[day(1, 0.6), day(2, 0.8)]).unwrap();
        for (a, b) in r0_values(&base).iter().zip(r0_values(&doubled)) {
            assert!((b - 2.0 * a).abs() < 1e-10 * b, "{a} {b}");
        }
    }

    #[test]
    fn single_region_r0_is_closed_form() {
        let d = DayParams {
            date: NaiveDate::from_ymd_opt(2020, 5, 1).unwrap(),
            beta: vec![0.3],
            gamma: vec![0.12],
            contact: vec![0.8],
        };
        let b = export_tables(&["x".to_string()], &[d]).unwrap();
        let want = 0.3 * 0.8 / 0.12;
        assert!((r0_values(&b)[0] - want).abs() < 1e-12 * want);
    }
}
