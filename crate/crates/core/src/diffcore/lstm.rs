use super::tape::Var;
use super::tensor::Tensor3;
use crate::error::{Error, Result};

/// Gate weights of one LSTM layer bound to a tape.
///
/// `weight` is `[1, Fin + H, 4H]` (the transpose of the usual `4H × (Fin+H)`
/// layout, so it right-multiplies `[x_t, h_{t-1}]`); `bias` is `[1, 1, 4H]`.
/// Gate blocks along the last axis are ordered input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

impl<'t> LstmWeights<'t> {
    pub fn hidden(&self) -> usize {
        self.bias.shape()[2] / 4
    }
}

/// Runs the recurrence over the time axis of `x: [T, B, Fin]` from a zero
/// state. Returns all hidden states `[T, B, H]` and the last one `[1, B, H]`.
pub fn lstm_forward<'t>(x: &Var<'t>, params: &LstmWeights<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let [t_len, batch, fin] = x.shape();
    let h = params.hidden();
    let [_, rows, cols] = params.weight.shape();
    if rows != fin + h || cols != 4 * h || params.bias.shape() != [1, 1, 4 * h] {
        return Err(Error::shape("lstm_forward", &x.shape(), &params.weight.shape()));
    }
    if t_len == 0 {
        return Err(Error::InvalidArgument("lstm over an empty sequence".into()));
    }
    let tape = x.tape();
    let mut hidden = tape.constant(Tensor3::zeros([1, batch, h]));
    let mut cell = tape.constant(Tensor3::zeros([1, batch, h]));
    let mut outputs = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let xt = x.slice(0, t, 1)?;
        let z = Var::concat(&[xt, hidden], 2)?;
        let gates = z.matmul(&params.weight)?.add(&params.bias)?;
        let input = gates.slice(2, 0, h)?.sigmoid();
        let forget = gates.slice(2, h, h)?.sigmoid();
        let candidate = gates.slice(2, 2 * h, h)?.tanh();
        let output = gates.slice(2, 3 * h, h)?.sigmoid();
        cell = forget.mul(&cell)?.add(&input.mul(&candidate)?)?;
        hidden = output.mul(&cell.tanh())?;
        outputs.push(hidden);
    }
    Ok((Var::concat(&outputs, 0)?, hidden))
}
