use serde::{Deserialize, Serialize};

use super::nelder_mead::{minimize, NelderMeadOptions};
use super::{scsir_rollout, sir_rollout, CompartmentState, ScsirParams, Trajectory};
use crate::diffcore::Tensor3;
use crate::error::{Error, Result};

/// Evaluation budget per Nelder-Mead fit.
pub const FIT_MAX_EVALUATIONS: usize = 2000;

pub const INITIAL_BETA: f64 = 0.1;
pub const INITIAL_GAMMA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineModel {
    Sir,
    Scsir,
}

impl std::str::FromStr for BaselineModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sir" => Ok(Self::Sir),
            "scsir" => Ok(Self::Scsir),
            other => Err(Error::InvalidArgument(format!("unknown baseline model {other:?}"))),
        }
    }
}

/// Rates fitted on a history window, held constant when forecasting.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineFit {
    pub model: BaselineModel,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Row-major `Q × Q`; the identity for the SIR model.
    pub contact: Vec<f64>,
    pub converged: bool,
    /// The window carried no infections, so the rates are arbitrary.
    pub unidentifiable: bool,
    pub evaluations: usize,
}

impl BaselineFit {
    pub fn params(&self, steps: usize) -> Result<ScsirParams> {
        ScsirParams::constant(&self.beta, &self.gamma, &self.contact, steps, 1.0)
    }

    pub fn forecast(&self, seed: &CompartmentState, horizon: usize) -> Result<Trajectory> {
        let p = self.params(horizon)?;
        match self.model {
            BaselineModel::Sir => sir_rollout(seed, &p.beta, &p.gamma, p.dt),
            BaselineModel::Scsir => scsir_rollout(seed, &p),
        }
    }
}

fn day_state(history: &Tensor3, day: usize, population: &[f64]) -> CompartmentState {
    let q = history.shape()[1];
    CompartmentState {
        s: (0..q).map(|k| history.get(day, k, 0)).collect(),
        i: (0..q).map(|k| history.get(day, k, 1)).collect(),
        r: (0..q).map(|k| history.get(day, k, 2)).collect(),
        n: population.to_vec(),
    }
}

fn clamp01(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// Squared distance outside the unit box; added to the objective so the
/// simplex is pushed back instead of drifting across a flat clamped region.
fn box_penalty(x: &[f64]) -> f64 {
    x.iter().map(|v| (v - v.clamp(0.0, 1.0)).powi(2)).sum()
}

/// Mean squared error of simulated vs observed infectious counts over the
/// window, divided by the mean squared observation so the objective is
/// scale-free.
fn infectious_error(traj: &Trajectory, history: &Tensor3, regions: &[usize], scale: f64) -> f64 {
    let days = history.shape()[0];
    let mut acc = 0.0;
    for d in 1..days {
        for (k, &q) in regions.iter().enumerate() {
            let diff = traj.states.get(d - 1, k, 1) - history.get(d, q, 1);
            acc += diff * diff;
        }
    }
    acc / ((days - 1) * regions.len()) as f64 / scale
}

/// Fits constant rates to a window of raw daily `(S, I, R)` counts
/// `[D, Q, 3]` by Nelder-Mead, starting from `(β, γ) = (0.1, 0.05)` and an
/// identity contact matrix, with rates clamped to `[0, 1]`.
///
/// The SIR model fits each region on its own; the spatio-contact model fits
/// every β, γ and contact entry jointly.
pub fn fit_baseline(history: &Tensor3, population: &[f64], model: BaselineModel) -> Result<BaselineFit> {
    let [days, q_len, f] = history.shape();
    if f != 3 || population.len() != q_len {
        return Err(Error::shape("fit_baseline", &history.shape(), &[population.len()]));
    }
    if days < 2 {
        return Err(Error::InvalidArgument(format!(
            "baseline fit needs at least 2 days of history, got {days}"
        )));
    }
    let opts = NelderMeadOptions {
        max_evaluations: FIT_MAX_EVALUATIONS,
        ..Default::default()
    };
    let seed = day_state(history, 0, population);
    let steps = days - 1;
    let mean_sq = |regions: &[usize]| {
        let mut acc = 0.0;
        for d in 1..days {
            for &q in regions {
                acc += history.get(d, q, 1).powi(2);
            }
        }
        acc / (steps * regions.len()) as f64
    };

    match model {
        BaselineModel::Sir => {
            let mut fit = BaselineFit {
                model,
                beta: vec![INITIAL_BETA; q_len],
                gamma: vec![INITIAL_GAMMA; q_len],
                contact: Tensor3::eye(q_len).into_data(),
                converged: true,
                unidentifiable: false,
                evaluations: 0,
            };
            for q in 0..q_len {
                let scale = mean_sq(&[q]);
                let peak = (0..days).map(|d| history.get(d, q, 1)).fold(0.0, f64::max);
                if scale == 0.0 || peak == 0.0 {
                    fit.unidentifiable = true;
                    continue;
                }
                let local = CompartmentState {
                    s: vec![seed.s[q]],
                    i: vec![seed.i[q]],
                    r: vec![seed.r[q]],
                    n: vec![seed.n[q]],
                };
                let objective = |x: &[f64]| {
                    let p = clamp01(x);
                    let beta = Tensor3::full([steps, 1, 1], p[0]);
                    let gamma = Tensor3::full([steps, 1, 1], p[1]);
                    match sir_rollout(&local, &beta, &gamma, 1.0) {
                        Ok(traj) => infectious_error(&traj, history, &[q], scale) + box_penalty(x),
                        Err(_) => f64::INFINITY,
                    }
                };
                let r = minimize(objective, &[INITIAL_BETA, INITIAL_GAMMA], &opts);
                let p = clamp01(&r.x);
                fit.beta[q] = p[0];
                fit.gamma[q] = p[1];
                fit.converged &= r.converged;
                fit.evaluations += r.evaluations;
            }
            Ok(fit)
        }
        BaselineModel::Scsir => {
            let regions: Vec<usize> = (0..q_len).collect();
            let scale = mean_sq(&regions);
            let mut x0 = vec![INITIAL_BETA; q_len];
            x0.extend(vec![INITIAL_GAMMA; q_len]);
            x0.extend(Tensor3::eye(q_len).into_data());
            let unpack = |x: &[f64]| {
                let p = clamp01(x);
                (
                    p[..q_len].to_vec(),
                    p[q_len..2 * q_len].to_vec(),
                    p[2 * q_len..].to_vec(),
                )
            };
            if scale == 0.0 {
                let (beta, gamma, contact) = unpack(&x0);
                return Ok(BaselineFit {
                    model,
                    beta,
                    gamma,
                    contact,
                    converged: true,
                    unidentifiable: true,
                    evaluations: 0,
                });
            }
            let objective = |x: &[f64]| {
                let (b, g, c) = unpack(x);
                match ScsirParams::constant(&b, &g, &c, steps, 1.0).and_then(|p| scsir_rollout(&seed, &p)) {
                    Ok(traj) => infectious_error(&traj, history, &regions, scale) + box_penalty(x),
                    Err(_) => f64::INFINITY,
                }
            };
            let r = minimize(objective, &x0, &opts);
            let (beta, gamma, contact) = unpack(&r.x);
            Ok(BaselineFit {
                model,
                beta,
                gamma,
                contact,
                converged: r.converged,
                unidentifiable: false,
                evaluations: r.evaluations,
            })
        }
    }
}
