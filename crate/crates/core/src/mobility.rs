//! Learned region-interaction graph: a trainable static embedding fused with
//! a temporal graph read off the input series by a causal convolution.

use std::path::Path;

use crate::diffcore::{Affine, Tensor3, Var};
use crate::error::{Error, Result};

/// Graph parameters bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct MobilityParams<'t> {
    /// `[1, Q, Q]`, unconstrained.
    pub a_static: Var<'t>,
    /// Input features to the convolution width.
    pub fc_in: Affine<'t>,
    /// Kernel `[K, F_T, F_TCN]` and bias `[1, 1, F_TCN]`.
    pub tcn_kernel: Var<'t>,
    pub tcn_bias: Var<'t>,
    pub dilation: usize,
    /// Convolution features to one score per source region.
    pub fc_out: Affine<'t>,
}

/// Row-stochastic `[T, Q, Q]` adjacency: `softmax(a_static + fc_out(relu(tcn(fc_in(x)))))`
/// with the softmax over source regions. The convolution input is
/// edge-replicated on the left by its receptive field.
pub fn build_dynamic_graph<'t>(x: &Var<'t>, p: &MobilityParams<'t>) -> Result<Var<'t>> {
    let q = x.shape()[1];
    if p.a_static.shape() != [1, q, q] {
        return Err(Error::shape("build_dynamic_graph", &x.shape(), &p.a_static.shape()));
    }
    let a = p.fc_in.apply(x)?;
    // Repeating the first step ahead of the zero-padded convolution keeps the
    // graph bitwise constant over time for a constant input.
    let pad = (p.tcn_kernel.shape()[0] - 1) * p.dilation;
    let t = a.shape()[0];
    let a = if pad == 0 {
        a
    } else {
        let first = a.slice(0, 0, 1)?;
        let mut parts = vec![first; pad];
        parts.push(a);
        Var::concat(&parts, 0)?
    };
    let temporal = a
        .conv1d_causal(&p.tcn_kernel, &p.tcn_bias, p.dilation)?
        .relu()
        .slice(0, pad, t)?;
    let scores = p.fc_out.apply(&temporal)?;
    if scores.shape()[2] != q {
        return Err(Error::shape("build_dynamic_graph fc_out", &scores.shape(), &[q]));
    }
    Ok(scores.add(&p.a_static)?.softmax_last())
}

/// Fixed neighbour graph: `a_ij = 1` for listed pairs (both directions) and
/// on the diagonal, rows normalized to sum to one, repeated over `steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticGraph {
    /// `[1, Q, Q]`.
    pub matrix: Tensor3,
    pub warnings: Vec<String>,
}

impl StaticGraph {
    /// The graph repeated over `steps` time steps.
    pub fn over(&self, steps: usize) -> Tensor3 {
        let q = self.matrix.shape()[1];
        Tensor3::from_fn([steps, q, q], |_, i, j| self.matrix.get(0, i, j))
    }
}

pub fn static_binary_graph(regions: usize, pairs: &[(usize, usize)]) -> Result<StaticGraph> {
    let q = regions;
    let mut a = Tensor3::eye(q);
    let mut degree = vec![0usize; q];
    for &(i, j) in pairs {
        if i >= q || j >= q {
            return Err(Error::InvalidArgument(format!(
                "neighbour pair ({i}, {j}) out of range for {q} regions"
            )));
        }
        if i != j {
            if a.get(0, i, j) == 0.0 {
                degree[i] += 1;
                degree[j] += 1;
            }
            a.set(0, i, j, 1.0);
            a.set(0, j, i, 1.0);
        }
    }
    let mut warnings = Vec::new();
    for i in 0..q {
        if degree[i] == 0 {
            warnings.push(format!("region {i} has no neighbours; it keeps only its self-loop"));
        }
        let row: f64 = (0..q).map(|j| a.get(0, i, j)).sum();
        for j in 0..q {
            a.set(0, i, j, a.get(0, i, j) / row);
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(StaticGraph { matrix: a, warnings })
}

/// Reads an undirected neighbour list with header `region_a,region_b`,
/// mapping ids to indices in `regions`.
pub fn read_neighbor_pairs(path: &Path, regions: &[String]) -> Result<Vec<(usize, usize)>> {
    let table = crate::io::CsvTable::read(path, &["region_a", "region_b"])?;
    let index = |id: &str| {
        regions
            .iter()
            .position(|r| r == id)
            .ok_or_else(|| Error::Data(format!("neighbour file names unknown region {id:?}")))
    };
    table
        .rows()
        .iter()
        .map(|row| Ok((index(&row[0])?, index(&row[1])?)))
        .collect()
}
