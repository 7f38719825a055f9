//! Define-by-run reverse-mode differentiation over [`Tensor3`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in creation
//! order, so node ids are already a topological order: walking the node
//! list backwards visits each node after all of its consumers.

use std::cell::RefCell;

use super::tensor::Tensor3;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Abs(usize),
    Sum(usize),
    MatMul(usize, usize),
    Conv1dCausal {
        x: usize,
        kernel: usize,
        bias: usize,
        dilation: usize,
    },
    Softmax(usize),
    MovingAverage {
        x: usize,
        window: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Reshape(usize),
    Permute {
        x: usize,
        axes: [usize; 3],
    },
    CapAbove {
        x: usize,
        limit: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor3,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
struct Inner {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

/// Operation recorder. Confined to one thread; rebuilt per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable input: gradients are collected for it by [`Tape::backward`].
    pub fn leaf(&self, value: Tensor3) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor3) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor3, op: Op, requires_grad: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    fn check_owner(&self, v: Var<'_>) -> Result<()> {
        if std::ptr::eq(self, v.tape) {
            Ok(())
        } else {
            Err(Error::Autodiff("variable belongs to a different tape".into()))
        }
    }

    /// Clears gradients so that [`Tape::backward`] may run again.
    pub fn reset_grads(&self) {
        self.inner.borrow_mut().grads = None;
    }

    /// Gradient of the last backward pass with respect to `v`.
    ///
    /// `None` when no backward pass has run or `v` does not require grad;
    /// a zero tensor when `v` requires grad but the loss does not depend on it.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor3> {
        let inner = self.inner.borrow();
        let node = inner.nodes.get(v.id)?;
        if !node.requires_grad || !std::ptr::eq(self, v.tape) {
            return None;
        }
        let grads = inner.grads.as_ref()?;
        let data = grads[v.id]
            .clone()
            .unwrap_or_else(|| vec![0.0; node.value.len()]);
        Some(Tensor3::new(node.value.shape(), data).expect("gradient shape"))
    }

    /// Propagates d(loss)/d(node) to every node that requires grad.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        self.check_owner(loss)?;
        let mut inner = self.inner.borrow_mut();
        if inner.grads.is_some() {
            return Err(Error::Autodiff(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        let nodes = &inner.nodes;
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be a scalar, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop_node(nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        inner.grads = Some(grads);
        Ok(())
    }
}

fn accumulate<'g>(
    nodes: &[Node],
    grads: &'g mut [Option<Vec<f64>>],
    id: usize,
) -> Option<&'g mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    Some(grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]))
}

/// Output shape of a broadcasting binary op: each axis equal or 1.
fn broadcast_shape(op: &'static str, a: [usize; 3], b: [usize; 3]) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for d in 0..3 {
        out[d] = match (a[d], b[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(op, &a, &b)),
        };
    }
    Ok(out)
}

fn broadcast_strides(shape: [usize; 3], out: [usize; 3]) -> [usize; 3] {
    let s = [shape[1] * shape[2], shape[2], 1];
    let mut r = [0; 3];
    for d in 0..3 {
        r[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { s[d] };
    }
    r
}

fn for_each_broadcast(out: [usize; 3], sa: [usize; 3], sb: [usize; 3], mut f: impl FnMut(usize, usize, usize)) {
    let mut o = 0;
    for t in 0..out[0] {
        for q in 0..out[1] {
            for k in 0..out[2] {
                f(o, t * sa[0] + q * sa[1] + k * sa[2], t * sb[0] + q * sb[1] + k * sb[2]);
                o += 1;
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn moving_average(x: &Tensor3, window: usize) -> Tensor3 {
    let [t_len, q_len, f_len] = x.shape();
    let half = (window / 2) as isize;
    let inv = 1.0 / window as f64;
    let mut out = Tensor3::zeros(x.shape());
    for t in 0..t_len {
        for q in 0..q_len {
            for f in 0..f_len {
                let xv = x.get(t, q, f);
                // Offsets from the centre value keep constant windows exact.
                let mut acc = 0.0;
                for k in -half..=half {
                    let tt = (t as isize + k).clamp(0, t_len as isize - 1) as usize;
                    acc += x.get(tt, q, f) - xv;
                }
                out.set(t, q, f, xv + acc * inv);
            }
        }
    }
    out
}

fn permuted_shape(shape: [usize; 3], axes: [usize; 3]) -> [usize; 3] {
    [shape[axes[0]], shape[axes[1]], shape[axes[2]]]
}

/// Input strides re-ordered to walk the permuted output.
fn permuted_strides(shape: [usize; 3], axes: [usize; 3]) -> [usize; 3] {
    let s = [shape[1] * shape[2], shape[2], 1];
    [s[axes[0]], s[axes[1]], s[axes[2]]]
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out = node.value.shape();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let (sa, sb) = (nodes[*a].value.shape(), nodes[*b].value.shape());
            let (ta, tb) = (broadcast_strides(sa, out), broadcast_strides(sb, out));
            if let Some(ga) = accumulate(nodes, grads, *a) {
                for_each_broadcast(out, ta, tb, |o, ia, _| ga[ia] += g[o]);
            }
            if let Some(gb) = accumulate(nodes, grads, *b) {
                for_each_broadcast(out, ta, tb, |o, _, ib| gb[ib] += sign * g[o]);
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let (ta, tb) = (
                broadcast_strides(va.shape(), out),
                broadcast_strides(vb.shape(), out),
            );
            if let Some(ga) = accumulate(nodes, grads, *a) {
                let vb = vb.data();
                for_each_broadcast(out, ta, tb, |o, ia, ib| ga[ia] += g[o] * vb[ib]);
            }
            if let Some(gb) = accumulate(nodes, grads, *b) {
                let va = va.data();
                for_each_broadcast(out, ta, tb, |o, ia, ib| gb[ib] += g[o] * va[ia]);
            }
        }
        Op::Scale(x, c) => {
            if let Some(gx) = accumulate(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(d, &gi)| *d += c * gi);
            }
        }
        Op::Relu(x) => {
            let xv = nodes[*x].value.data();
            if let Some(gx) = accumulate(nodes, grads, *x) {
                for i in 0..g.len() {
                    if xv[i] > 0.0 {
                        gx[i] += g[i];
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            let y = node.value.data();
            if let Some(gx) = accumulate(nodes, grads, *x) {
                for i in 0..g.len() {
                    gx[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
        }
        Op::Tanh(x) => {
            let y = node.value.data();
            if let Some(gx) = accumulate(nodes, grads, *x) {
                for i in 0..g.len() {
                    gx[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }
        }
        Op::Abs(x) => {
            let xv = nodes[*x].value.data();
            if let Some(gx) = accumulate(nodes, grads, *x) {
                for i in 0..g.len() {
                    if xv[i] > 0.0 {
                        gx[i] += g[i];
                    } else if xv[i] < 0.0 {
                        gx[i] -= g[i];
                    }
                }
            }
        }
        Op::Sum(x) => {
            if let Some(gx) = accumulate(nodes, grads, *x) {
                gx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::MatMul(a, w) => {
            let (va, vw) = (&nodes[*a].value, &nodes[*w].value);
            let [t_len, q_len, k_len] = va.shape();
            let m_len = vw.shape()[2];
            let w_batched = vw.shape()[0] != 1;
            let (ad, wd) = (va.data(), vw.data());
            if let Some(ga) = accumulate(nodes, grads, *a) {
                for t in 0..t_len {
                    let wo = if w_batched { t * k_len * m_len } else { 0 };
                    for q in 0..q_len {
                        let go = &g[(t * q_len + q) * m_len..][..m_len];
                        let row = &mut ga[(t * q_len + q) * k_len..][..k_len];
                        for (k, r) in row.iter_mut().enumerate() {
                            let wr = &wd[wo + k * m_len..][..m_len];
                            *r += go.iter().zip(wr).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
            }
            if let Some(gw) = accumulate(nodes, grads, *w) {
                for t in 0..t_len {
                    let wo = if w_batched { t * k_len * m_len } else { 0 };
                    for q in 0..q_len {
                        let go = &g[(t * q_len + q) * m_len..][..m_len];
                        let arow = &ad[(t * q_len + q) * k_len..][..k_len];
                        for (k, &av) in arow.iter().enumerate() {
                            if av == 0.0 {
                                continue;
                            }
                            let wr = &mut gw[wo + k * m_len..][..m_len];
                            wr.iter_mut().zip(go).for_each(|(d, &gi)| *d += av * gi);
                        }
                    }
                }
            }
        }
        Op::Conv1dCausal {
            x,
            kernel,
            bias,
            dilation,
        } => {
            let (vx, vk) = (&nodes[*x].value, &nodes[*kernel].value);
            let [t_len, q_len, fin] = vx.shape();
            let [k_len, _, fout] = vk.shape();
            let mut gx = accumulate(nodes, grads, *x).map(std::mem::take);
            let mut gk = accumulate(nodes, grads, *kernel).map(std::mem::take);
            for t in 0..t_len {
                for q in 0..q_len {
                    let go = &g[(t * q_len + q) * fout..][..fout];
                    for i in 0..k_len {
                        let Some(src) = t.checked_sub(dilation * i) else { break };
                        for fi in 0..fin {
                            let xo = (src * q_len + q) * fin + fi;
                            let ko = (i * fin + fi) * fout;
                            if let Some(gx) = gx.as_mut() {
                                gx[xo] += go
                                    .iter()
                                    .zip(&vk.data()[ko..ko + fout])
                                    .map(|(a, b)| a * b)
                                    .sum::<f64>();
                            }
                            if let Some(gk) = gk.as_mut() {
                                let xv = vx.data()[xo];
                                gk[ko..ko + fout]
                                    .iter_mut()
                                    .zip(go)
                                    .for_each(|(d, &gi)| *d += xv * gi);
                            }
                        }
                    }
                }
            }
            if let Some(v) = gx {
                grads[*x] = Some(v);
            }
            if let Some(v) = gk {
                grads[*kernel] = Some(v);
            }
            if let Some(gb) = accumulate(nodes, grads, *bias) {
                for chunk in g.chunks(fout) {
                    gb.iter_mut().zip(chunk).for_each(|(d, &gi)| *d += gi);
                }
            }
        }
        Op::Softmax(x) => {
            let y = node.value.data();
            let n = out[2];
            if let Some(gx) = accumulate(nodes, grads, *x) {
                for r in 0..y.len() / n {
                    let (yr, gr) = (&y[r * n..][..n], &g[r * n..][..n]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        gx[r * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::MovingAverage { x, window } => {
            let [t_len, q_len, f_len] = out;
            let half = (window / 2) as isize;
            let inv = 1.0 / *window as f64;
            if let Some(gx) = accumulate(nodes, grads, *x) {
                for t in 0..t_len {
                    for k in -half..=half {
                        let tt = (t as isize + k).clamp(0, t_len as isize - 1) as usize;
                        let (src, dst) = (t * q_len * f_len, tt * q_len * f_len);
                        for j in 0..q_len * f_len {
                            gx[dst + j] += g[src + j] * inv;
                        }
                    }
                }
            }
        }
        Op::Slice { x, axis, start } => {
            let shape = nodes[*x].value.shape();
            if let Some(gx) = accumulate(nodes, grads, *x) {
                let mut o = 0;
                for t in 0..out[0] {
                    for q in 0..out[1] {
                        for k in 0..out[2] {
                            let mut idx = [t, q, k];
                            idx[*axis] += start;
                            gx[(idx[0] * shape[1] + idx[1]) * shape[2] + idx[2]] += g[o];
                            o += 1;
                        }
                    }
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let mut offset = 0;
            for &inp in inputs {
                let shape = nodes[inp].value.shape();
                if let Some(gi) = accumulate(nodes, grads, inp) {
                    let mut i = 0;
                    for t in 0..shape[0] {
                        for q in 0..shape[1] {
                            for k in 0..shape[2] {
                                let mut idx = [t, q, k];
                                idx[*axis] += offset;
                                gi[i] += g[(idx[0] * out[1] + idx[1]) * out[2] + idx[2]];
                                i += 1;
                            }
                        }
                    }
                }
                offset += shape[*axis];
            }
        }
        Op::Reshape(x) => {
            if let Some(gx) = accumulate(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
            }
        }
        Op::Permute { x, axes } => {
            let s = permuted_strides(nodes[*x].value.shape(), *axes);
            if let Some(gx) = accumulate(nodes, grads, *x) {
                let mut o = 0;
                for a in 0..out[0] {
                    for b in 0..out[1] {
                        for c in 0..out[2] {
                            gx[a * s[0] + b * s[1] + c * s[2]] += g[o];
                            o += 1;
                        }
                    }
                }
            }
        }
        Op::CapAbove { x, limit } => {
            let (xv, lv) = (nodes[*x].value.data(), nodes[*limit].value.data());
            if let Some(gx) = accumulate(nodes, grads, *x) {
                for i in 0..g.len() {
                    if xv[i] <= lv[i] {
                        gx[i] += g[i];
                    }
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor3 {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor3) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.id].value)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.with_value(|v| v.shape())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor3> {
        self.tape.grad(*self)
    }

    fn rg(&self) -> bool {
        self.requires_grad()
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        self.tape.check_owner(*other)
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor3) -> Tensor3) -> Var<'t> {
        let value = self.with_value(f);
        self.tape.push(value, op, self.rg())
    }

    fn binary(
        &self,
        other: &Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let value = {
            let inner = self.tape.inner.borrow();
            let (a, b) = (&inner.nodes[self.id].value, &inner.nodes[other.id].value);
            let out = broadcast_shape(name, a.shape(), b.shape())?;
            let mut data = vec![0.0; out.iter().product()];
            if a.shape() == b.shape() {
                for (d, (x, y)) in data.iter_mut().zip(a.data().iter().zip(b.data())) {
                    *d = f(*x, *y);
                }
            } else {
                let (ta, tb) = (
                    broadcast_strides(a.shape(), out),
                    broadcast_strides(b.shape(), out),
                );
                let (ad, bd) = (a.data(), b.data());
                for_each_broadcast(out, ta, tb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
            }
            Tensor3::new(out, data)?
        };
        Ok(self.tape.push(value, op, self.rg() || other.rg()))
    }

    /// Elementwise sum; either operand may broadcast along unit axes.
    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |v| v.map(|x| c * x))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |v| v.map(|x| if x > 0.0 { x } else { 0.0 }))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |v| v.map(sigmoid))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |v| v.map(f64::tanh))
    }

    pub fn abs(&self) -> Var<'t> {
        self.unary(Op::Abs(self.id), |v| v.map(f64::abs))
    }

    pub fn sum(&self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |v| Tensor3::scalar(v.sum()))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.with_value(|v| v.len()) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Batched product `out[t] = self[t] · w` (or `w[t]` when `w` has a
    /// leading time axis). Shapes `[T, Q, K] × [1|T, K, M] → [T, Q, M]`.
    pub fn matmul(&self, w: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(w)?;
        let value = {
            let inner = self.tape.inner.borrow();
            let (a, b) = (&inner.nodes[self.id].value, &inner.nodes[w.id].value);
            let ([t_len, q_len, k_len], [tw, kw, m_len]) = (a.shape(), b.shape());
            if kw != k_len || (tw != 1 && tw != t_len) {
                return Err(Error::shape("matmul", &a.shape(), &b.shape()));
            }
            let (ad, wd) = (a.data(), b.data());
            let mut out = vec![0.0; t_len * q_len * m_len];
            for t in 0..t_len {
                let wo = if tw == 1 { 0 } else { t * k_len * m_len };
                for q in 0..q_len {
                    let row = &mut out[(t * q_len + q) * m_len..][..m_len];
                    for k in 0..k_len {
                        let av = ad[(t * q_len + q) * k_len + k];
                        if av == 0.0 {
                            continue;
                        }
                        let wr = &wd[wo + k * m_len..][..m_len];
                        row.iter_mut().zip(wr).for_each(|(o, &x)| *o += av * x);
                    }
                }
            }
            Tensor3::new([t_len, q_len, m_len], out)?
        };
        Ok(self
            .tape
            .push(value, Op::MatMul(self.id, w.id), self.rg() || w.rg()))
    }

    /// Causal dilated convolution along the time axis with left zero padding:
    /// `out(t,q,f) = Σ_i Σ_f' W[i,f',f] · x(t − d·i, q, f') + b[f]`.
    pub fn conv1d_causal(&self, kernel: &Var<'t>, bias: &Var<'t>, dilation: usize) -> Result<Var<'t>> {
        self.same_tape(kernel)?;
        self.same_tape(bias)?;
        if dilation == 0 {
            return Err(Error::InvalidArgument("dilation must be at least 1".into()));
        }
        let value = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.id].value;
            let k = &inner.nodes[kernel.id].value;
            let b = &inner.nodes[bias.id].value;
            let [t_len, q_len, fin] = x.shape();
            let [k_len, kin, fout] = k.shape();
            if k_len == 0 || kin != fin {
                return Err(Error::shape("conv1d_causal", &x.shape(), &k.shape()));
            }
            if b.shape() != [1, 1, fout] {
                return Err(Error::shape("conv1d_causal bias", &k.shape(), &b.shape()));
            }
            let mut out = Tensor3::zeros([t_len, q_len, fout]);
            let od = out.data_mut();
            for t in 0..t_len {
                for q in 0..q_len {
                    let row = &mut od[(t * q_len + q) * fout..][..fout];
                    row.copy_from_slice(b.data());
                    for i in 0..k_len {
                        let Some(src) = t.checked_sub(dilation * i) else { break };
                        for fi in 0..fin {
                            let xv = x.data()[(src * q_len + q) * fin + fi];
                            let kr = &k.data()[(i * fin + fi) * fout..][..fout];
                            row.iter_mut().zip(kr).for_each(|(o, &w)| *o += xv * w);
                        }
                    }
                }
            }
            out
        };
        let rg = self.rg() || kernel.rg() || bias.rg();
        Ok(self.tape.push(
            value,
            Op::Conv1dCausal {
                x: self.id,
                kernel: kernel.id,
                bias: bias.id,
                dilation,
            },
            rg,
        ))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_last(&self) -> Var<'t> {
        self.unary(Op::Softmax(self.id), |v| {
            let n = v.shape()[2];
            let mut out = v.clone();
            for row in out.data_mut().chunks_mut(n) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - m).exp();
                    s += *x;
                }
                row.iter_mut().for_each(|x| *x /= s);
            }
            out
        })
    }

    /// Centered moving average along time with edge-replicate padding.
    pub fn moving_average(&self, window: usize) -> Result<Var<'t>> {
        if window == 0 || window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "moving-average window must be odd and positive, got {window}"
            )));
        }
        Ok(self.unary(
            Op::MovingAverage {
                x: self.id,
                window,
            },
            |v| moving_average(v, window),
        ))
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis > 2 || start + len > shape[axis] {
            return Err(Error::InvalidArgument(format!(
                "slice axis {axis} range {start}..{} out of bounds for {shape:?}",
                start + len
            )));
        }
        Ok(self.unary(
            Op::Slice {
                x: self.id,
                axis,
                start,
            },
            |v| {
                let mut out_shape = shape;
                out_shape[axis] = len;
                Tensor3::from_fn(out_shape, |t, q, k| {
                    let mut idx = [t, q, k];
                    idx[axis] += start;
                    v.get(idx[0], idx[1], idx[2])
                })
            },
        ))
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        if axis > 2 {
            return Err(Error::InvalidArgument(format!("concat axis {axis}")));
        }
        let tape = first.tape;
        let mut out_shape = first.shape();
        out_shape[axis] = 0;
        for p in parts {
            first.same_tape(p)?;
            let s = p.shape();
            for d in 0..3 {
                if d != axis && s[d] != out_shape[d] {
                    return Err(Error::shape("concat", &first.shape(), &s));
                }
            }
            out_shape[axis] += s[axis];
        }
        let value = {
            let inner = tape.inner.borrow();
            let mut out = Tensor3::zeros(out_shape);
            let mut offset = 0;
            for p in parts {
                let v = &inner.nodes[p.id].value;
                let s = v.shape();
                for t in 0..s[0] {
                    for q in 0..s[1] {
                        for k in 0..s[2] {
                            let mut idx = [t, q, k];
                            idx[axis] += offset;
                            out.set(idx[0], idx[1], idx[2], v.get(t, q, k));
                        }
                    }
                }
                offset += s[axis];
            }
            out
        };
        let rg = parts.iter().any(|p| p.rg());
        Ok(tape.push(
            value,
            Op::Concat {
                inputs: parts.iter().map(|p| p.id).collect(),
                axis,
            },
            rg,
        ))
    }

    pub fn reshape(&self, shape: [usize; 3]) -> Result<Var<'t>> {
        let value = self.value().reshape(shape)?;
        Ok(self.tape.push(value, Op::Reshape(self.id), self.rg()))
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: [usize; 3]) -> Result<Var<'t>> {
        let mut seen = [false; 3];
        for &a in &axes {
            if a > 2 || seen[a] {
                return Err(Error::InvalidArgument(format!("invalid permutation {axes:?}")));
            }
            seen[a] = true;
        }
        Ok(self.unary(Op::Permute { x: self.id, axes }, |v| {
            let shape = permuted_shape(v.shape(), axes);
            let s = permuted_strides(v.shape(), axes);
            let d = v.data();
            Tensor3::from_fn(shape, |a, b, c| d[a * s[0] + b * s[1] + c * s[2]])
        }))
    }

    /// `min(self, limit)` elementwise. Capped cells pass no gradient to
    /// either operand; uncapped cells pass it to `self` only.
    pub fn cap_above(&self, limit: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(limit)?;
        if self.shape() != limit.shape() {
            return Err(Error::shape("cap_above", &self.shape(), &limit.shape()));
        }
        let value = {
            let inner = self.tape.inner.borrow();
            let (x, l) = (&inner.nodes[self.id].value, &inner.nodes[limit.id].value);
            Tensor3::new(
                x.shape(),
                x.data().iter().zip(l.data()).map(|(&a, &b)| a.min(b)).collect(),
            )?
        };
        Ok(self.tape.push(
            value,
            Op::CapAbove {
                x: self.id,
                limit: limit.id,
            },
            self.rg(),
        ))
    }

    /// Number of cells where `cap_above` would clip `self` against `limit`.
    pub fn count_above(&self, limit: &Var<'t>) -> usize {
        let inner = self.tape.inner.borrow();
        let (x, l) = (&inner.nodes[self.id].value, &inner.nodes[limit.id].value);
        x.data().iter().zip(l.data()).filter(|(a, b)| a > b).count()
    }
}
