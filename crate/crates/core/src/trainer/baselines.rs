//! Reference forecasters scored on the same windows as the network.

use crate::dataio::{EpidemicDataset, SampleWindow};
use crate::diffcore::Tensor3;
use crate::error::Result;
use crate::metrics::{compute, MetricReport};
use crate::scsir::{fit_baseline, BaselineModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    /// Last observed infectious count, repeated.
    Persistence,
    /// Constant rates fitted to the observed days of each window.
    Refit(BaselineModel),
}

/// `[h, Q, 1]` copies of the last observed infectious counts.
pub fn persistence_forecast(w: &SampleWindow, h: usize) -> Tensor3 {
    Tensor3::from_fn([h, w.sir_last.regions(), 1], |_, k, _| w.sir_last.i[k])
}

/// Fits `model` to the raw observed days of `w` and rolls it forward `h`
/// days from the last of them.
pub fn refit_forecast(ds: &EpidemicDataset, w: &SampleWindow, model: BaselineModel, h: usize) -> Result<Tensor3> {
    let history = ds.sir.time_slice(w.start, w.t_obs())?;
    let fit = fit_baseline(&history, &ds.population, model)?;
    let traj = fit.forecast(&w.sir_last, h)?;
    Ok(Tensor3::from_fn([h, w.sir_last.regions(), 1], |t, k, _| traj.states.get(t, k, 1)))
}

/// Metrics in persons over all windows at horizon `h`.
pub fn baseline_metrics(
    ds: &EpidemicDataset,
    windows: &[SampleWindow],
    kind: BaselineKind,
    h: usize,
) -> Result<MetricReport> {
    let mut pred = Vec::new();
    let mut obs = Vec::new();
    for w in windows {
        let f = match kind {
            BaselineKind::Persistence => persistence_forecast(w, h),
            BaselineKind::Refit(model) => refit_forecast(ds, w, model, h)?,
        };
        pred.extend_from_slice(f.data());
        obs.extend_from_slice(w.y_obs_raw.time_slice(0, h)?.data());
    }
    compute(&pred, &obs)
}
