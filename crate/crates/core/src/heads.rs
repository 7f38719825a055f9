//! Rate heads (infection, recovery, contact), the direct prediction head, and
//! the differentiable compartmental rollout driven by the estimated rates.

use crate::dataio::NormStats;
use crate::diffcore::{lstm_forward, Affine, LstmWeights, Tensor3, Var};
use crate::error::{Error, Result};
use crate::scsir::{CompartmentState, ScsirParams};

/// An LSTM over time (regions as the batch) and a map from its last hidden
/// state to the head outputs.
#[derive(Clone, Copy, Debug)]
pub struct Head<'t> {
    pub lstm: LstmWeights<'t>,
    pub fc: Affine<'t>,
}

impl<'t> Head<'t> {
    /// `[1, Q, out]` from `l_st: [T_obs, Q, F_T]`.
    fn run(&self, l_st: &Var<'t>) -> Result<Var<'t>> {
        let (_, last) = lstm_forward(l_st, &self.lstm)?;
        self.fc.apply(&last)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadParams<'t> {
    pub beta: Head<'t>,
    pub gamma: Head<'t>,
    pub contact: Head<'t>,
    pub pred: Head<'t>,
}

/// Estimated rates on the tape, all in `(0, 1)`.
#[derive(Clone, Copy, Debug)]
pub struct RateVars<'t> {
    /// `[T_pre, Q, 1]`.
    pub beta: Var<'t>,
    pub gamma: Var<'t>,
    /// `[T_pre, Q, Q]`.
    pub contact: Var<'t>,
}

impl RateVars<'_> {
    pub fn horizon(&self) -> usize {
        self.beta.shape()[0]
    }

    /// Plain values with unit time step.
    pub fn to_params(&self) -> Result<ScsirParams> {
        ScsirParams::new(self.beta.value(), self.gamma.value(), self.contact.value(), 1.0)
    }
}

/// `[1, Q, T]` per-region outputs to `[T, Q, 1]`.
fn per_step<'t>(v: &Var<'t>) -> Result<Var<'t>> {
    v.permute([2, 1, 0])
}

pub fn estimate_params<'t>(l_st: &Var<'t>, p: &HeadParams<'t>, t_pre: usize) -> Result<RateVars<'t>> {
    let q = l_st.shape()[1];
    let beta = p.beta.run(l_st)?;
    let gamma = p.gamma.run(l_st)?;
    let contact = p.contact.run(l_st)?;
    if beta.shape()[2] != t_pre || gamma.shape()[2] != t_pre || contact.shape()[2] != t_pre * q {
        return Err(Error::shape("estimate_params", &beta.shape(), &contact.shape()));
    }
    // Region q's contact output lists row q for each step in turn.
    let contact = contact.reshape([q, t_pre, q])?.permute([1, 0, 2])?;
    Ok(RateVars {
        beta: per_step(&beta)?.sigmoid(),
        gamma: per_step(&gamma)?.sigmoid(),
        contact: contact.sigmoid(),
    })
}

/// `[T_pre, Q, 1]` nonnegative direct forecast.
pub fn predict_neural<'t>(l_st: &Var<'t>, p: &HeadParams<'t>) -> Result<Var<'t>> {
    Ok(per_step(&p.pred.run(l_st)?)?.relu())
}

/// Output of [`predict_causal`].
#[derive(Clone, Copy, Debug)]
pub struct CausalRollout<'t> {
    /// `[h, Q, 1]` infectious counts normalized like the targets.
    pub y_cau: Var<'t>,
    /// `[h, Q, 1]` raw infectious counts.
    pub infectious: Var<'t>,
    pub clamp_events: usize,
}

/// Rolls the spatio-contact model forward `horizon` unit steps from the raw
/// seed state using the first `horizon` steps of `rates`, then normalizes
/// the infectious trajectory with `stats`. Gradients reach the rates except
/// through flows that were capped.
pub fn predict_causal<'t>(
    seed: &CompartmentState,
    rates: &RateVars<'t>,
    stats: &NormStats,
    horizon: usize,
) -> Result<CausalRollout<'t>> {
    let q = seed.regions();
    if rates.beta.shape()[1] != q || horizon == 0 || horizon > rates.horizon() {
        return Err(Error::shape("predict_causal", &[horizon, q], &rates.beta.shape()));
    }
    let tape = rates.beta.tape();
    let column = |v: &[f64]| tape.constant(Tensor3::new([1, q, 1], v.to_vec()).expect("q values"));
    let inv_n: Vec<f64> = seed.n.iter().map(|n| 1.0 / n).collect();
    let inv_n = column(&inv_n);
    let (mut s, mut i, mut r) = (column(&seed.s), column(&seed.i), column(&seed.r));
    let mut clamps = 0;
    let mut path = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let beta = rates.beta.slice(0, t, 1)?;
        let gamma = rates.gamma.slice(0, t, 1)?;
        let contact = rates.contact.slice(0, t, 1)?;
        let pressure = contact.matmul(&i)?;
        let infect = beta.mul(&s.mul(&inv_n)?)?.mul(&pressure)?;
        clamps += infect.count_above(&s);
        let infect = infect.cap_above(&s)?;
        let remove = gamma.mul(&i)?;
        let available = i.add(&infect)?;
        clamps += remove.count_above(&available);
        let remove = remove.cap_above(&available)?;
        s = s.sub(&infect)?;
        i = available.sub(&remove)?;
        r = r.add(&remove)?;
        path.push(i);
    }
    let infectious = Var::concat(&path, 0)?;
    let (lo, scale): (Vec<f64>, Vec<f64>) = (0..q).map(|k| stats.affine(k, 1)).unzip();
    let y_cau = infectious.sub(&column(&lo))?.mul(&column(&scale))?;
    Ok(CausalRollout {
        y_cau,
        infectious,
        clamp_events: clamps,
    })
}

/// Both forecasts for one window with the rates behind the causal one.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastBundle {
    /// `[T_pre, Q, 1]`, normalized.
    pub y_pre: Tensor3,
    pub y_cau: Tensor3,
    pub params: ScsirParams,
    pub clamp_events: usize,
}
