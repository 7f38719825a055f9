//! Trend/variation decomposition of the embedded series followed by graph
//! convolution over the dynamic adjacency.

use crate::diffcore::{Affine, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SttParams<'t> {
    pub fc_embed: Affine<'t>,
    pub fc_trend: Affine<'t>,
    pub fc_variation: Affine<'t>,
    /// One `[F_T, F_T]` weight with its bias per layer, shared over time.
    pub gcn: Vec<Affine<'t>>,
    /// Moving-average width, odd.
    pub window: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct Decomposition<'t> {
    pub trend: Var<'t>,
    pub variation: Var<'t>,
}

/// Centered moving-average trend (edge values replicated) and the residual.
pub fn temporal_decompose<'t>(l: &Var<'t>, window: usize) -> Result<Decomposition<'t>> {
    let t = l.shape()[0];
    if window > 2 * t - 1 {
        return Err(Error::InvalidArgument(format!(
            "moving-average window {window} exceeds 2T-1 = {}",
            2 * t - 1
        )));
    }
    let trend = l.moving_average(window)?;
    let variation = l.sub(&trend)?;
    Ok(Decomposition { trend, variation })
}

/// `fc_trend(trend) + fc_variation(variation)` of the embedded input.
pub fn temporal_encode<'t>(l: &Var<'t>, p: &SttParams<'t>) -> Result<Var<'t>> {
    let d = temporal_decompose(l, p.window)?;
    p.fc_trend.apply(&d.trend)?.add(&p.fc_variation.apply(&d.variation)?)
}

/// Stacked `relu(L_D(t) · H(t) · W + b)` layers, all over the same graph.
pub fn gcn_forward<'t>(l_d: &Var<'t>, l_t: &Var<'t>, layers: &[Affine<'t>]) -> Result<Var<'t>> {
    let [t, q, _] = l_t.shape();
    if l_d.shape() != [t, q, q] {
        return Err(Error::shape("gcn_forward", &l_d.shape(), &l_t.shape()));
    }
    let mut h = *l_t;
    for layer in layers {
        h = layer.apply(&l_d.matmul(&h)?)?.relu();
    }
    Ok(h)
}

/// Embeds `x: [T, Q, F]`, encodes it and propagates it over `l_d`.
pub fn spatiotemporal_forward<'t>(x: &Var<'t>, l_d: &Var<'t>, p: &SttParams<'t>) -> Result<Var<'t>> {
    let l = p.fc_embed.apply(x)?;
    let l_t = temporal_encode(&l, p)?;
    gcn_forward(l_d, &l_t, &p.gcn)
}
