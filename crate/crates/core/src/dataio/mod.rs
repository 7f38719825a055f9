//! Regional case tables in, normalized training windows out.

mod archive;
mod norm;
mod synthetic;
mod window;

pub use archive::{load_archive, save_archive, DatasetSummary, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use norm::{split_and_normalize, NormScope, NormStats, Split, NORM_EPS};
pub use synthetic::{generate_synthetic, smooth_params, SyntheticDataset};
pub use window::{make_windows, SampleWindow};

use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::Deserialize;

use crate::diffcore::Tensor3;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, CsvTable};
use crate::scsir::CompartmentState;

pub const CASES_HEADER: [&str; 5] = ["date", "region_id", "cum_confirmed", "cum_recovered", "cum_deceased"];
pub const POPULATION_HEADER: [&str; 2] = ["region_id", "population"];

/// Daily S/I/R counts for a fixed set of regions over consecutive days.
#[derive(Clone, Debug, PartialEq)]
pub struct EpidemicDataset {
    pub regions: Vec<String>,
    pub start: NaiveDate,
    /// `[T, Q, 3]` of (S, I, R) person counts.
    pub sir: Tensor3,
    pub population: Vec<f64>,
}

impl EpidemicDataset {
    pub fn new(regions: Vec<String>, start: NaiveDate, sir: Tensor3, population: Vec<f64>) -> Result<Self> {
        let ds = Self {
            regions,
            start,
            sir,
            population,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn days(&self) -> usize {
        self.sir.shape()[0]
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn date(&self, t: usize) -> NaiveDate {
        self.start + Days::new(t as u64)
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start).num_days();
        (d >= 0 && (d as usize) < self.days()).then_some(d as usize)
    }

    /// Compartments of day `t` with the fixed populations.
    pub fn state(&self, t: usize) -> CompartmentState {
        let q = self.num_regions();
        CompartmentState {
            s: (0..q).map(|k| self.sir.get(t, k, 0)).collect(),
            i: (0..q).map(|k| self.sir.get(t, k, 1)).collect(),
            r: (0..q).map(|k| self.sir.get(t, k, 2)).collect(),
            n: self.population.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [t, q, f] = self.sir.shape();
        if f != 3 || q != self.regions.len() || q != self.population.len() {
            return Err(Error::shape(
                "EpidemicDataset",
                &self.sir.shape(),
                &[self.regions.len(), self.population.len()],
            ));
        }
        if t == 0 || q == 0 {
            return Err(Error::Data("dataset has no days or no regions".into()));
        }
        for day in 0..t {
            for k in 0..q {
                let (s, i, r) = (self.sir.get(day, k, 0), self.sir.get(day, k, 1), self.sir.get(day, k, 2));
                let n = self.population[k];
                if s < 0.0 || i < 0.0 || r < 0.0 || !(s + i + r).is_finite() {
                    return Err(Error::Data(format!(
                        "{} / {}: negative or non-finite count",
                        self.date(day),
                        self.regions[k]
                    )));
                }
                if (s + i + r - n).abs() > 1e-9 * n {
                    return Err(Error::Data(format!(
                        "{} / {}: S+I+R={} differs from population {n}",
                        self.date(day),
                        self.regions[k],
                        s + i + r
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes the dataset back as a cases/population CSV pair that
    /// [`ingest`] reads into an equal dataset.
    pub fn write_csv(&self, cases: &Path, population: &Path) -> Result<()> {
        let mut pop = CsvTable::new(&POPULATION_HEADER);
        for (id, n) in self.regions.iter().zip(&self.population) {
            pop.push(vec![id.clone(), fmt_f64(*n)])?;
        }
        let mut table = CsvTable::new(&CASES_HEADER);
        for t in 0..self.days() {
            let date = self.date(t).to_string();
            for (k, id) in self.regions.iter().enumerate() {
                let confirmed = self.sir.get(t, k, 1) + self.sir.get(t, k, 2);
                table.push(vec![
                    date.clone(),
                    id.clone(),
                    fmt_f64(confirmed),
                    fmt_f64(self.sir.get(t, k, 2)),
                    "0".into(),
                ])?;
            }
        }
        pop.write(population)?;
        table.write(cases)
    }
}

#[derive(Deserialize)]
struct CaseRow {
    date: NaiveDate,
    region_id: String,
    cum_confirmed: f64,
    cum_recovered: f64,
    cum_deceased: f64,
}

#[derive(Deserialize)]
struct PopulationRow {
    region_id: String,
    population: f64,
}

fn check_header(r: &mut csv::Reader<impl Read>, expected: &[&str], what: &str) -> Result<()> {
    let got: Vec<&str> = r.headers()?.iter().collect();
    if got != expected {
        return Err(Error::Data(format!(
            "{what} header [{}], expected [{}]",
            got.join(","),
            expected.join(",")
        )));
    }
    Ok(())
}

/// Reads a cumulative-case table and a population table from files.
pub fn ingest(cases: &Path, population: &Path) -> Result<EpidemicDataset> {
    let open = |p: &Path| std::fs::File::open(p).map_err(|e| Error::io(p, e));
    ingest_from(open(cases)?, open(population)?)
}

/// Derives S/I/R from cumulative counts: `I = confirmed − recovered −
/// deceased`, `R = recovered + deceased`, `S = N − confirmed`. Region order
/// follows the population table.
pub fn ingest_from(cases: impl Read, population: impl Read) -> Result<EpidemicDataset> {
    let mut pop_reader = csv::Reader::from_reader(population);
    check_header(&mut pop_reader, &POPULATION_HEADER, "population")?;
    let mut regions = Vec::new();
    let mut pops = Vec::new();
    let mut index = HashMap::new();
    for row in pop_reader.deserialize() {
        let row: PopulationRow = row?;
        if !(row.population > 0.0 && row.population.is_finite()) {
            return Err(Error::Data(format!(
                "region {}: population must be positive, got {}",
                row.region_id, row.population
            )));
        }
        if index.insert(row.region_id.clone(), regions.len()).is_some() {
            return Err(Error::Data(format!("region {} listed twice in population table", row.region_id)));
        }
        regions.push(row.region_id);
        pops.push(row.population);
    }
    if regions.is_empty() {
        return Err(Error::Data("population table is empty".into()));
    }

    let mut case_reader = csv::Reader::from_reader(cases);
    check_header(&mut case_reader, &CASES_HEADER, "cases")?;
    let mut cells: HashMap<(NaiveDate, usize), [f64; 3]> = HashMap::new();
    let mut unknown = HashSet::new();
    for row in case_reader.deserialize() {
        let row: CaseRow = row?;
        let Some(&k) = index.get(&row.region_id) else {
            unknown.insert(row.region_id);
            continue;
        };
        let vals = [row.cum_confirmed, row.cum_recovered, row.cum_deceased];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Data(format!(
                "{} / {}: cumulative counts must be nonnegative",
                row.date, row.region_id
            )));
        }
        if cells.insert((row.date, k), vals).is_some() {
            return Err(Error::Data(format!("{} / {}: duplicate row", row.date, row.region_id)));
        }
    }
    if !unknown.is_empty() {
        let mut ids: Vec<_> = unknown.into_iter().collect();
        ids.sort();
        return Err(Error::Data(format!("regions missing from population table: {}", ids.join(", "))));
    }
    let (Some(first), Some(last)) = (cells.keys().map(|k| k.0).min(), cells.keys().map(|k| k.0).max()) else {
        return Err(Error::Data("cases table is empty".into()));
    };

    let days = (last - first).num_days() as usize + 1;
    let q = regions.len();
    let mut missing = Vec::new();
    let mut sir = vec![0.0; days * q * 3];
    let mut previous: Vec<Option<[f64; 3]>> = vec![None; q];
    for t in 0..days {
        let date = first + Days::new(t as u64);
        for k in 0..q {
            let Some(&[confirmed, recovered, deceased]) = cells.get(&(date, k)) else {
                missing.push((date.to_string(), regions[k].clone()));
                continue;
            };
            let at = || format!("{date} / {}", regions[k]);
            if let Some(prev) = previous[k] {
                if confirmed < prev[0] || recovered < prev[1] || deceased < prev[2] {
                    return Err(Error::Data(format!("{}: cumulative counts decrease", at())));
                }
            }
            previous[k] = Some([confirmed, recovered, deceased]);
            if confirmed > pops[k] {
                return Err(Error::Data(format!(
                    "{}: cum_confirmed {confirmed} exceeds population {}",
                    at(),
                    pops[k]
                )));
            }
            let infectious = confirmed - recovered - deceased;
            if infectious < 0.0 {
                return Err(Error::Data(format!("{}: derived infectious count {infectious} is negative", at())));
            }
            let removed = recovered + deceased;
            let at_cell = (t * q + k) * 3;
            sir[at_cell..at_cell + 3].copy_from_slice(&[pops[k] - confirmed, infectious, removed]);
        }
    }
    if !missing.is_empty() {
        return Err(Error::Gaps { missing });
    }
    EpidemicDataset::new(regions, first, Tensor3::new([days, q, 3], sir)?, pops)
}
