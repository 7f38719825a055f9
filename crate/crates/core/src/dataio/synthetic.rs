use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EpidemicDataset;
use crate::diffcore::Tensor3;
use crate::error::{Error, Result};
use crate::scsir::{scsir_rollout, CompartmentState, ScsirParams};

/// A generated dataset together with the rates that produced it.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dataset: EpidemicDataset,
    pub truth: ScsirParams,
    pub clamp_events: usize,
}

/// Smoothly varying rates for `steps` days: each region's infection rate
/// oscillates around 1.5–2 times its recovery rate with a period of four
/// weeks, recovery
/// rates are constant, and the contact matrix is a fixed row-stochastic
/// matrix with a dominant diagonal.
pub fn smooth_params(q: usize, steps: usize, seed: u64) -> Result<ScsirParams> {
    if q == 0 {
        return Err(Error::InvalidArgument("need at least one region".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    let gamma: Vec<f64> = (0..q).map(|_| rng.random_range(0.10..0.16)).collect();
    let level: Vec<f64> = gamma.iter().map(|g| g * rng.random_range(1.5..2.0)).collect();
    let phase: Vec<f64> = (0..q).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let period = 28.0;
    let mut contact = vec![0.0; q * q];
    for i in 0..q {
        let off: Vec<f64> = (0..q).map(|_| rng.random_range(0.0..1.0)).collect();
        let off_total: f64 = (0..q).filter(|&j| j != i).map(|j| off[j]).sum();
        let stay = if q == 1 { 1.0 } else { rng.random_range(0.6..0.8) };
        for j in 0..q {
            contact[i * q + j] = if i == j { stay } else { (1.0 - stay) * off[j] / off_total };
        }
    }
    ScsirParams::new(
        Tensor3::from_fn([steps, q, 1], |t, k, _| {
            level[k] * (1.0 + 0.35 * (std::f64::consts::TAU * t as f64 / period + phase[k]).sin())
        }),
        Tensor3::from_fn([steps, q, 1], |_, k, _| gamma[k]),
        Tensor3::from_fn([steps, q, q], |_, i, j| contact[i * q + j]),
        1.0,
    )
}

/// Runs the spatio-contact model forward from a seeded initial state for `t`
/// days (day 0 is the initial state). Populations, initial infections and
/// an initial immune share of 30–45% are drawn from `seed`; the immune share
/// keeps the epidemic near its threshold so it recurs in waves rather than
/// burning out once. The trajectory itself is noiseless.
pub fn generate_synthetic(q: usize, t: usize, params: &ScsirParams, seed: u64) -> Result<SyntheticDataset> {
    if t == 0 || params.regions() != q || params.steps() + 1 < t {
        return Err(Error::InvalidArgument(format!(
            "synthetic run of {t} days over {q} regions needs params with {} steps and {q} regions",
            t.saturating_sub(1)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let population: Vec<f64> = (0..q).map(|_| rng.random_range(50_000.0..100_000.0_f64).round()).collect();
    let infected: Vec<f64> = population
        .iter()
        .map(|n| (n * rng.random_range(0.002..0.01)).round())
        .collect();
    let recovered: Vec<f64> = population
        .iter()
        .map(|n| (n * rng.random_range(0.3..0.45)).round())
        .collect();
    let s = (0..q).map(|k| population[k] - infected[k] - recovered[k]).collect();
    let seed_state = CompartmentState::new(s, infected, recovered)?;

    let steps = t - 1;
    let truth = ScsirParams::new(
        params.beta.time_slice(0, steps)?,
        params.gamma.time_slice(0, steps)?,
        params.contact.time_slice(0, steps)?,
        params.dt,
    )?;
    let traj = scsir_rollout(&seed_state, &truth)?;
    let mut data = Vec::with_capacity(t * q * 3);
    for k in 0..q {
        data.extend([seed_state.s[k], seed_state.i[k], seed_state.r[k]]);
    }
    data.extend_from_slice(traj.states.data());
    let dataset = EpidemicDataset::new(
        (0..q).map(|k| format!("R{k:02}")).collect(),
        NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
        Tensor3::new([t, q, 3], data)?,
        population,
    )?;
    Ok(SyntheticDataset {
        dataset,
        truth,
        clamp_events: traj.clamp_events,
    })
}
