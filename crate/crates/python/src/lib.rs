//! Python bindings: datasets, training, evaluation, forecasts and exported
//! rates. Arrays cross the boundary as nested lists; dates as ISO strings.

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::NaiveDate;
use cstgnn::dataio::{
    generate_synthetic, ingest, load_archive, make_windows, save_archive, smooth_params, split_and_normalize, EpidemicDataset,
};
use cstgnn::export::{estimate_day_params, forecast_curves};
use cstgnn::io::CsvTable;
use cstgnn::mobility::{read_neighbor_pairs, static_binary_graph};
use cstgnn::scsir::{effective_r0, BaselineModel};
use cstgnn::trainer::{baseline_metrics, evaluate, train as train_run, BaselineKind, Checkpoint, TrainConfig};
use cstgnn::{Error, ErrorKind};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(cstgnn_py, CstgnnError, PyException, "Data, training or file error.");

fn to_py(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Usage => PyValueError::new_err(e.to_string()),
        ErrorKind::Data | ErrorKind::Training => CstgnnError::new_err(e.to_string()),
    }
}

fn parse_date(s: &str) -> PyResult<NaiveDate> {
    s.parse().map_err(|_| PyValueError::new_err(format!("{s:?} is not a YYYY-MM-DD date")))
}

fn table_rows(t: &CsvTable) -> Vec<Vec<String>> {
    t.rows().to_vec()
}

fn metric_dict(m: &cstgnn::metrics::MetricReport) -> BTreeMap<String, f64> {
    ["mae", "rmse", "rae", "pcc", "ccc"]
        .iter()
        .zip(m.values())
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// Daily S/I/R counts per region.
#[pyclass(name = "Dataset", module = "cstgnn_py", frozen)]
struct PyDataset {
    inner: EpidemicDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_archive(&path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_csv(cases: PathBuf, population: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ingest(&cases, &population).map_err(to_py)?,
        })
    }

    /// Noiseless spatio-contact series with smoothly varying rates.
    #[staticmethod]
    #[pyo3(signature = (regions = 5, days = 100, seed = 0))]
    fn synthetic(regions: usize, days: usize, seed: u64) -> PyResult<Self> {
        if days < 2 {
            return Err(PyValueError::new_err("days must be at least 2"));
        }
        let params = smooth_params(regions, days - 1, seed).map_err(to_py)?;
        Ok(Self {
            inner: generate_synthetic(regions, days, &params, seed).map_err(to_py)?.dataset,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_archive(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn regions(&self) -> Vec<String> {
        self.inner.regions.clone()
    }

    #[getter]
    fn dates(&self) -> Vec<String> {
        (0..self.inner.days()).map(|t| self.inner.date(t).to_string()).collect()
    }

    #[getter]
    fn population(&self) -> Vec<f64> {
        self.inner.population.clone()
    }

    /// `[day][region] -> (S, I, R)`.
    fn sir(&self) -> Vec<Vec<(f64, f64, f64)>> {
        let s = &self.inner.sir;
        (0..self.inner.days())
            .map(|t| {
                (0..self.inner.num_regions())
                    .map(|q| (s.get(t, q, 0), s.get(t, q, 1), s.get(t, q, 2)))
                    .collect()
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.days()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(regions={}, days={}, start={})",
            self.inner.num_regions(),
            self.inner.days(),
            self.inner.start
        )
    }
}

/// A trained model with its configuration and normalization statistics.
#[pyclass(name = "Model", module = "cstgnn_py", frozen)]
struct PyModel {
    inner: Checkpoint,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn config(&self) -> String {
        self.inner.config.to_toml()
    }

    /// Test-span metrics of the neural forecast.
    fn evaluate(&self, py: Python<'_>, dataset: &PyDataset) -> PyResult<BTreeMap<String, f64>> {
        let (ck, ds) = (&self.inner, &dataset.inner);
        let report = py.detach(|| evaluate(ck, ds, ck.config.t_pre)).map_err(to_py)?;
        Ok(metric_dict(&report.seeds[0].metrics))
    }

    /// Rows `(date, region_id, observed, y_pre, y_cau)` for the days after
    /// `from_date`, the last observed day.
    fn forecast(&self, dataset: &PyDataset, from_date: &str) -> PyResult<Vec<Vec<String>>> {
        let t = forecast_curves(&self.inner, &dataset.inner, parse_date(from_date)?).map_err(to_py)?;
        Ok(table_rows(&t))
    }

    /// Per date: `{"date", "beta", "gamma", "contact" (row lists), "r0"}`.
    fn rates(&self, py: Python<'_>, dataset: &PyDataset, dates: Vec<String>) -> PyResult<Vec<Py<PyAny>>> {
        let dates = dates.iter().map(|d| parse_date(d)).collect::<PyResult<Vec<_>>>()?;
        let days = estimate_day_params(&self.inner, &dataset.inner, &dates).map_err(to_py)?;
        let q = dataset.inner.num_regions();
        days.into_iter()
            .map(|d| {
                let r0 = effective_r0(&d.beta, &d.gamma, &d.contact).map_err(to_py)?.value;
                let out = pyo3::types::PyDict::new(py);
                out.set_item("date", d.date.to_string())?;
                out.set_item("beta", d.beta)?;
                out.set_item("gamma", d.gamma)?;
                out.set_item("contact", d.contact.chunks(q).map(<[f64]>::to_vec).collect::<Vec<_>>())?;
                out.set_item("r0", r0)?;
                Ok(out.into_any().unbind())
            })
            .collect()
    }
}

/// Trains every configured seed and returns `(best_model, report_json)`.
#[pyfunction]
#[pyo3(signature = (dataset, config = None, neighbors = None))]
fn train(py: Python<'_>, dataset: &PyDataset, config: Option<&str>, neighbors: Option<PathBuf>) -> PyResult<(PyModel, String)> {
    let cfg = match config {
        Some(text) => TrainConfig::from_toml(text).map_err(to_py)?,
        None => TrainConfig::default(),
    };
    let ds = &dataset.inner;
    let graph = match neighbors {
        Some(path) => Some(
            static_binary_graph(ds.num_regions(), &read_neighbor_pairs(&path, &ds.regions).map_err(to_py)?)
                .map_err(to_py)?,
        ),
        None => None,
    };
    let outcome = py.detach(|| train_run(ds, &cfg, graph.as_ref())).map_err(to_py)?;
    Ok((
        PyModel {
            inner: outcome.best_checkpoint().clone(),
        },
        outcome.report.to_json(),
    ))
}

/// Test-span metrics of `"persistence"`, `"sir"` or `"scsir"` forecasts at
/// horizon `t_pre` from windows of `t_obs` observed days.
#[pyfunction]
#[pyo3(signature = (dataset, model, t_pre = 7, t_obs = 7))]
fn baseline(py: Python<'_>, dataset: &PyDataset, model: &str, t_pre: usize, t_obs: usize) -> PyResult<BTreeMap<String, f64>> {
    let kind = match model {
        "persistence" => BaselineKind::Persistence,
        other => BaselineKind::Refit(other.parse::<BaselineModel>().map_err(to_py)?),
    };
    let cfg = TrainConfig {
        t_obs,
        t_pre,
        ..TrainConfig::default()
    };
    let ds = &dataset.inner;
    let m = py
        .detach(|| {
            let split = split_and_normalize(ds, cfg.ratios, cfg.norm_scope)?;
            let windows = make_windows(ds, &split, split.test.clone(), t_obs, t_pre)?;
            baseline_metrics(ds, &windows, kind, t_pre)
        })
        .map_err(to_py)?;
    Ok(metric_dict(&m))
}

/// Spectral radius of `diag(β/γ)·C` for one day's rates.
#[pyfunction]
fn r0(beta: Vec<f64>, gamma: Vec<f64>, contact: Vec<Vec<f64>>) -> PyResult<f64> {
    let flat: Vec<f64> = contact.into_iter().flatten().collect();
    Ok(effective_r0(&beta, &gamma, &flat).map_err(to_py)?.value)
}

#[pymodule]
fn cstgnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CstgnnError", m.py().get_type::<CstgnnError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(r0, m)?)?;
    Ok(())
}
