use super::tape::Var;
use crate::error::Result;

/// `x · weight + bias` along the last axis; `weight` is `[1, Fin, Fout]`,
/// `bias` is `[1, 1, Fout]`.
#[derive(Clone, Copy, Debug)]
pub struct Affine<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

impl<'t> Affine<'t> {
    pub fn apply(&self, x: &Var<'t>) -> Result<Var<'t>> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}
