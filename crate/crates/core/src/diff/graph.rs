//! Reverse-mode tape over coarse tensor operations.
//!
//! A [`Graph`] records each op with its output value. Parameters are borrowed
//! from a [`ParamSet`] and never copied. [`Graph::backward`] walks the tape in
//! reverse, applying a hand-derived adjoint per op, and returns gradients for
//! trainable parameters only.

use std::borrow::Cow;

use super::gru::{gru_backward, gru_forward, GruCache, GruWeights};
use super::kernels::{self, sigmoid, softmax_in_place};
use super::params::{Grads, ParamId, ParamSet};
use super::pool;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower/upper clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// One layer of [`Graph::tcn_mean`]: kernel `w: D×Cin×K`, bias `b: D`.
#[derive(Debug, Clone, Copy)]
pub struct TcnLayer {
    pub w: Var,
    pub b: Var,
    pub dilation: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    /// `x: B×Cin×L`, `w: Cout×Cin×K`, `b: Cout` → `B×Cout×L`.
    Conv1d { x: Var, w: Var, b: Var, dilation: usize },
    Relu(Var),
    Add(Var, Var),
    /// Mean over the last axis.
    MeanLast(Var),
    /// `R×D` → `D`.
    MeanRows(Var),
    /// `x: N×In`, `w: Out×In`, `b: Out` → `N×Out`.
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    SoftmaxRows(Var),
    Sigmoid(Var),
    Gru { x: Var, w_x: Var, w_h: Var, b: Var, cache: Box<GruCache> },
    Reshape(Var),
    DotConst(Var, Vec<f64>),
    Bce { p: Var, y: f64, weight: f64 },
    /// Fused conv/ReLU stack with mean over time; keeps per-layer ReLU
    /// outputs and, for residual stacks, the summed layer outputs.
    TcnMean {
        x: Var,
        layers: Vec<TcnLayer>,
        residual: bool,
        acts: Vec<Vec<f64>>,
        sums: Vec<Vec<f64>>,
    },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node<'p>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let p = self.params.get(id);
        self.nodes.push(Node {
            value: Cow::Borrowed(&p.value),
            op: Op::Param(id),
            requires_grad: p.trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self.params.expect_id(name)?;
        Ok(self.param(id))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        if dilation == 0 {
            return Err(Error::invalid("dilation must be positive"));
        }
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || self.value(b).len() != ws[0] {
            return Err(Error::shape(format!("conv1d: x {xs:?}, w {ws:?}")));
        }
        if ws[2] == 0 {
            return Err(Error::invalid("empty kernel"));
        }
        let (batch, cin, len) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        let mut out = Tensor::zeros(&[batch, cout, len]);
        {
            let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
            let od = out.data_mut();
            for s in 0..batch {
                kernels::conv_forward(
                    &xv[s * cin * len..(s + 1) * cin * len],
                    cin,
                    wv,
                    bv,
                    cout,
                    k,
                    dilation,
                    len,
                    &mut od[s * cout * len..(s + 1) * cout * len],
                );
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Conv1d { x, w, b, dilation }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = v.max(0.0);
        }
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape("add: operand shapes differ"));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mean_last(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let shape = t.shape();
        let len = shape[shape.len() - 1];
        let outer: Vec<usize> = shape[..shape.len() - 1].to_vec();
        let data: Vec<f64> = t
            .data()
            .chunks_exact(len)
            .map(|c| kernels::sum(c) / len as f64)
            .collect();
        let out = Tensor::new(outer, data).expect("consistent shape");
        let rg = self.rg(x);
        self.push(out, Op::MeanLast(x), rg)
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 || t.dim(0) == 0 {
            return Err(Error::shape(format!("mean_rows: {:?}", t.shape())));
        }
        let (r, d) = (t.dim(0), t.dim(1));
        let mut acc = vec![0.0; d];
        for i in 0..r {
            for (a, v) in acc.iter_mut().zip(t.row(i)) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= r as f64;
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_vec(acc), Op::MeanRows(x), rg))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape(format!("linear: x {xs:?}, w {ws:?}")));
        }
        let (n, inp, outd) = (xs[0], xs[1], ws[0]);
        let mut y = kernels::matmul_nt(self.value(x).data(), self.value(w).data(), n, inp, outd);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != outd {
                return Err(Error::shape("linear: bias length"));
            }
            for row in y.chunks_exact_mut(outd) {
                for (v, bb) in row.iter_mut().zip(bv.data()) {
                    *v += bb;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(vec![n, outd], y)?, Op::Linear { x, w, b }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.value(a).shape(), self.value(b).shape());
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
            return Err(Error::shape(format!("matmul: {as_:?} · {bs:?}")));
        }
        let (m, k, n) = (as_[0], as_[1], bs[1]);
        let c = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], c)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.value(a).shape(), self.value(b).shape());
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[1] {
            return Err(Error::shape(format!("matmul_nt: {as_:?} · {bs:?}ᵀ")));
        }
        let (m, k, n) = (as_[0], as_[1], bs[0]);
        let c = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], c)?, Op::MatMulNT(a, b), rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::shape("softmax_rows expects a matrix"));
        }
        let n = t.dim(1);
        if n == 0 {
            return Err(Error::shape("softmax over an empty row"));
        }
        let mut out = t.clone();
        for row in out.data_mut().chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = sigmoid(*v);
        }
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// GRU over `x: In×L`; returns the final hidden state `H`.
    pub fn gru(&mut self, x: Var, w_x: Var, w_h: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let (wxs, whs) = (self.value(w_x).shape(), self.value(w_h).shape());
        if xs.len() != 2 || wxs.len() != 2 || whs.len() != 2 {
            return Err(Error::shape("gru expects matrices"));
        }
        let hidden = whs[1];
        if hidden == 0 {
            return Err(Error::invalid("hidden_dim must be positive"));
        }
        if wxs[0] != 3 * hidden || whs[0] != 3 * hidden || wxs[1] != xs[0] || self.value(b).len() != 3 * hidden {
            return Err(Error::shape(format!("gru: x {xs:?}, w_x {wxs:?}, w_h {whs:?}")));
        }
        let (input, len) = (xs[0], xs[1]);
        let w = GruWeights {
            w_x: self.value(w_x).data(),
            w_h: self.value(w_h).data(),
            b: self.value(b).data(),
            input,
            hidden,
        };
        let (state, cache) = gru_forward(self.value(x).data(), len, w);
        let rg = self.rg(x) || self.rg(w_x) || self.rg(w_h) || self.rg(b);
        Ok(self.push(
            Tensor::from_vec(state),
            Op::Gru {
                x,
                w_x,
                w_h,
                b,
                cache: Box::new(cache),
            },
            rg,
        ))
    }

    /// Stack of causal dilated conv + ReLU layers over `x: B×Cin×L`, each
    /// sample processed independently, then mean over time → `B×D`. With
    /// `residual`, layers after the first add their input to their output.
    /// Equivalent to chaining [`Graph::conv1d`], [`Graph::relu`] and
    /// [`Graph::mean_last`], but one sample's activations stay in cache.
    pub fn tcn_mean(&mut self, x: Var, layers: &[TcnLayer], residual: bool) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 || layers.is_empty() {
            return Err(Error::shape(format!("tcn_mean: x {xs:?} with {} layers", layers.len())));
        }
        let (batch, len) = (xs[0], xs[2]);
        let mut cin = xs[1];
        let mut dims = Vec::with_capacity(layers.len());
        for (l, ly) in layers.iter().enumerate() {
            let ws = self.value(ly.w).shape();
            if ws.len() != 3 || ws[1] != cin || ws[2] == 0 || self.value(ly.b).len() != ws[0] || ly.dilation == 0 {
                return Err(Error::shape(format!("tcn_mean layer {}: w {ws:?} on {cin} inputs", l + 1)));
            }
            if residual && l > 0 && ws[0] != cin {
                return Err(Error::shape("tcn_mean: residual layers must keep the width"));
            }
            dims.push((ws[0], cin, ws[2]));
            cin = ws[0];
        }
        let d_out = cin;
        let mut acts: Vec<Vec<f64>> = dims.iter().map(|&(d, _, _)| pool::take(batch * d * len)).collect();
        let mut sums: Vec<Vec<f64>> = dims
            .iter()
            .enumerate()
            .map(|(l, &(d, _, _))| if residual && l > 0 { pool::take(batch * d * len) } else { Vec::new() })
            .collect();
        let mut out = vec![0.0; batch * d_out];
        {
            let xv = self.value(x).data();
            let wb: Vec<(&[f64], &[f64])> = layers
                .iter()
                .map(|ly| (self.value(ly.w).data(), self.value(ly.b).data()))
                .collect();
            for s in 0..batch {
                for (l, &(d, cin, k)) in dims.iter().enumerate() {
                    let (a_prev, a_rest) = acts.split_at_mut(l);
                    let (s_prev, s_rest) = sums.split_at_mut(l);
                    let input: &[f64] = match l {
                        0 => &xv[s * cin * len..(s + 1) * cin * len],
                        _ if residual && l > 1 => &s_prev[l - 1][s * cin * len..(s + 1) * cin * len],
                        _ => &a_prev[l - 1][s * cin * len..(s + 1) * cin * len],
                    };
                    let cur = &mut a_rest[0][s * d * len..(s + 1) * d * len];
                    kernels::conv_forward(input, cin, wb[l].0, wb[l].1, d, k, layers[l].dilation, len, cur);
                    for v in cur.iter_mut() {
                        *v = v.max(0.0);
                    }
                    if residual && l > 0 {
                        let sum = &mut s_rest[0][s * d * len..(s + 1) * d * len];
                        for ((o, a), h) in sum.iter_mut().zip(cur.iter()).zip(input) {
                            *o = a + h;
                        }
                    }
                }
                let last = dims.len() - 1;
                let h = if residual && last > 0 { &sums[last] } else { &acts[last] };
                let h = &h[s * d_out * len..(s + 1) * d_out * len];
                for (o, row) in h.chunks_exact(len).enumerate() {
                    out[s * d_out + o] = kernels::sum(row) / len as f64;
                }
            }
        }
        let rg = self.rg(x) || layers.iter().any(|ly| self.rg(ly.w) || self.rg(ly.b));
        Ok(self.push(
            Tensor::new(vec![batch, d_out], out)?,
            Op::TcnMean {
                x,
                layers: layers.to_vec(),
                residual,
                acts,
                sums,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Scalar `Σ x_k c_k` against a constant vector.
    pub fn dot_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        if self.value(x).len() != c.len() {
            return Err(Error::shape("dot_const: length mismatch"));
        }
        let s: f64 = self.value(x).data().iter().zip(&c).map(|(a, b)| a * b).sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::DotConst(x, c), rg))
    }

    /// Weighted binary cross-entropy of a single probability, with clamping.
    pub fn bce(&mut self, p: Var, y: f64, weight: f64) -> Result<Var> {
        if self.value(p).len() != 1 {
            return Err(Error::shape("bce expects a scalar probability"));
        }
        let pc = self.value(p).data()[0].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let loss = -weight * (y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
        let rg = self.rg(p);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { p, y, weight }, rg))
    }

    /// Backpropagates from a scalar node and returns trainable-parameter gradients.
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads = Grads::new(self.params);
        self.backward_into(root, 1.0, &mut grads);
        grads
    }

    /// Like [`Graph::backward`] with seed `seed`, accumulating into `grads`.
    pub fn backward_into(&self, root: Var, seed: f64, grads: &mut Grads) {
        let mut adj: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        adj.resize_with(self.nodes.len(), || None);
        adj[root.0] = Some(Tensor::full(self.value(root).shape(), seed));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.apply_adjoint(node, &g, &mut adj, grads);
        }
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut adj[v.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn apply_adjoint(&self, node: &Node<'p>, g: &Tensor, adj: &mut [Option<Tensor>], grads: &mut Grads) {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                if self.params.get(*id).trainable {
                    grads.accumulate(*id, g);
                }
            }
            Op::Conv1d { x, w, b, dilation } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (batch, cin, len) = (xt.dim(0), xt.dim(1), xt.dim(2));
                let (cout, k) = (wt.dim(0), wt.dim(2));
                let gd = g.data();
                if self.rg(*w) || self.rg(*b) {
                    let mut gw = Tensor::zeros(wt.shape());
                    let mut gb = Tensor::zeros(&[cout]);
                    for s in 0..batch {
                        kernels::conv_backward_params(
                            &gd[s * cout * len..(s + 1) * cout * len],
                            &xt.data()[s * cin * len..(s + 1) * cin * len],
                            cin,
                            cout,
                            k,
                            *dilation,
                            len,
                            gw.data_mut(),
                            gb.data_mut(),
                        );
                    }
                    self.accumulate(adj, *w, gw);
                    self.accumulate(adj, *b, gb);
                }
                if self.rg(*x) {
                    let mut gx = Tensor::zeros(xt.shape());
                    for s in 0..batch {
                        kernels::conv_backward_input(
                            &gd[s * cout * len..(s + 1) * cout * len],
                            cout,
                            wt.data(),
                            cin,
                            k,
                            *dilation,
                            len,
                            &mut gx.data_mut()[s * cin * len..(s + 1) * cin * len],
                        );
                    }
                    self.accumulate(adj, *x, gx);
                }
            }
            Op::Relu(x) => {
                let mut gx = g.clone();
                for (gv, out) in gx.data_mut().iter_mut().zip(node.value.data()) {
                    if *out <= 0.0 {
                        *gv = 0.0;
                    }
                }
                self.accumulate(adj, *x, gx);
            }
            Op::Add(a, b) => {
                self.accumulate(adj, *a, g.clone());
                self.accumulate(adj, *b, g.clone());
            }
            Op::MeanLast(x) => {
                let xt = self.value(*x);
                let len = xt.shape()[xt.shape().len() - 1];
                let mut gx = Tensor::zeros(xt.shape());
                for (chunk, gv) in gx.data_mut().chunks_exact_mut(len).zip(g.data()) {
                    chunk.fill(gv / len as f64);
                }
                self.accumulate(adj, *x, gx);
            }
            Op::MeanRows(x) => {
                let xt = self.value(*x);
                let (r, d) = (xt.dim(0), xt.dim(1));
                let mut gx = Tensor::zeros(&[r, d]);
                for row in gx.data_mut().chunks_exact_mut(d) {
                    for (v, gv) in row.iter_mut().zip(g.data()) {
                        *v = gv / r as f64;
                    }
                }
                self.accumulate(adj, *x, gx);
            }
            Op::Linear { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (n, inp, outd) = (xt.dim(0), xt.dim(1), wt.dim(0));
                if self.rg(*w) {
                    let gw = kernels::matmul_tn(g.data(), xt.data(), n, outd, inp);
                    self.accumulate(adj, *w, Tensor::new(vec![outd, inp], gw).unwrap());
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut gb = vec![0.0; outd];
                        for row in g.data().chunks_exact(outd) {
                            for (a, v) in gb.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        self.accumulate(adj, *b, Tensor::from_vec(gb));
                    }
                }
                if self.rg(*x) {
                    let gx = kernels::matmul(g.data(), wt.data(), n, outd, inp);
                    self.accumulate(adj, *x, Tensor::new(vec![n, inp], gx).unwrap());
                }
            }
            Op::MatMul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (m, k, n) = (at.dim(0), at.dim(1), bt.dim(1));
                if self.rg(*a) {
                    let ga = kernels::matmul_nt(g.data(), bt.data(), m, n, k);
                    self.accumulate(adj, *a, Tensor::new(vec![m, k], ga).unwrap());
                }
                if self.rg(*b) {
                    let gb = kernels::matmul_tn(at.data(), g.data(), m, k, n);
                    self.accumulate(adj, *b, Tensor::new(vec![k, n], gb).unwrap());
                }
            }
            Op::MatMulNT(a, b) => {
                // c = a bᵀ, a: m×k, b: n×k
                let (at, bt) = (self.value(*a), self.value(*b));
                let (m, k, n) = (at.dim(0), at.dim(1), bt.dim(0));
                if self.rg(*a) {
                    let ga = kernels::matmul(g.data(), bt.data(), m, n, k);
                    self.accumulate(adj, *a, Tensor::new(vec![m, k], ga).unwrap());
                }
                if self.rg(*b) {
                    let gb = kernels::matmul_tn(g.data(), at.data(), m, n, k);
                    self.accumulate(adj, *b, Tensor::new(vec![n, k], gb).unwrap());
                }
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let n = y.dim(1);
                let mut gx = Tensor::zeros(y.shape());
                for ((grow, yrow), out) in g
                    .data()
                    .chunks_exact(n)
                    .zip(y.data().chunks_exact(n))
                    .zip(gx.data_mut().chunks_exact_mut(n))
                {
                    let inner: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in out.iter_mut().zip(grow).zip(yrow) {
                        *o = yv * (gv - inner);
                    }
                }
                self.accumulate(adj, *x, gx);
            }
            Op::Sigmoid(x) => {
                let mut gx = g.clone();
                for (gv, s) in gx.data_mut().iter_mut().zip(node.value.data()) {
                    *gv *= s * (1.0 - s);
                }
                self.accumulate(adj, *x, gx);
            }
            Op::Gru { x, w_x, w_h, b, cache } => {
                let xt = self.value(*x);
                let hidden = self.value(*w_h).dim(1);
                let w = GruWeights {
                    w_x: self.value(*w_x).data(),
                    w_h: self.value(*w_h).data(),
                    b: self.value(*b).data(),
                    input: xt.dim(0),
                    hidden,
                };
                let gg = gru_backward(xt.data(), w, cache, g.data(), self.rg(*x));
                let (wxs, whs) = (self.value(*w_x).shape().to_vec(), self.value(*w_h).shape().to_vec());
                self.accumulate(adj, *w_x, Tensor::new(wxs, gg.w_x).unwrap());
                self.accumulate(adj, *w_h, Tensor::new(whs, gg.w_h).unwrap());
                self.accumulate(adj, *b, Tensor::from_vec(gg.b));
                if let Some(gx) = gg.x {
                    self.accumulate(adj, *x, Tensor::new(xt.shape().to_vec(), gx).unwrap());
                }
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshape(self.value(*x).shape()).unwrap();
                self.accumulate(adj, *x, gx);
            }
            Op::DotConst(x, c) => {
                let s = g.data()[0];
                let gx = Tensor::new(
                    self.value(*x).shape().to_vec(),
                    c.iter().map(|v| v * s).collect(),
                )
                .unwrap();
                self.accumulate(adj, *x, gx);
            }
            Op::TcnMean {
                x,
                layers,
                residual,
                acts,
                sums,
            } => self.tcn_mean_adjoint(*x, layers, *residual, acts, sums, g, adj),
            Op::Bce { p, y, weight } => {
                let pv = self.value(*p).data()[0];
                let d = if pv > PROB_CLAMP && pv < 1.0 - PROB_CLAMP {
                    -weight * (y / pv - (1.0 - y) / (1.0 - pv))
                } else {
                    0.0
                };
                let gp = Tensor::new(self.value(*p).shape().to_vec(), vec![d * g.data()[0]]).unwrap();
                self.accumulate(adj, *p, gp);
            }
        }
    }
}

impl Graph<'_> {
    #[allow(clippy::too_many_arguments)]
    fn tcn_mean_adjoint(
        &self,
        x: Var,
        layers: &[TcnLayer],
        residual: bool,
        acts: &[Vec<f64>],
        sums: &[Vec<f64>],
        g: &Tensor,
        adj: &mut [Option<Tensor>],
    ) {
        let xt = self.value(x);
        let (batch, cin0, len) = (xt.dim(0), xt.dim(1), xt.dim(2));
        let dims: Vec<(usize, usize, usize)> = layers
            .iter()
            .map(|ly| {
                let ws = self.value(ly.w).shape();
                (ws[0], ws[1], ws[2])
            })
            .collect();
        let want_params: Vec<bool> = layers.iter().map(|ly| self.rg(ly.w) || self.rg(ly.b)).collect();
        let want_x = self.rg(x);
        let mut gw: Vec<Vec<f64>> = layers.iter().map(|ly| vec![0.0; self.value(ly.w).len()]).collect();
        let mut gb: Vec<Vec<f64>> = dims.iter().map(|&(d, _, _)| vec![0.0; d]).collect();
        let mut gx = if want_x { pool::take(batch * cin0 * len) } else { Vec::new() };
        let width = dims.iter().map(|&(d, c, _)| d.max(c)).max().unwrap_or(1);
        let (mut gcur, mut gpre, mut gnext) = (pool::take(width * len), pool::take(width * len), pool::take(width * len));
        let d_out = dims[dims.len() - 1].0;
        for s in 0..batch {
            for o in 0..d_out {
                gcur[o * len..(o + 1) * len].fill(g.data()[s * d_out + o] / len as f64);
            }
            for l in (0..layers.len()).rev() {
                let (d, cin, k) = dims[l];
                let a = &acts[l][s * d * len..(s + 1) * d * len];
                for ((p, gc), av) in gpre[..d * len].iter_mut().zip(&gcur[..d * len]).zip(a) {
                    *p = if *av > 0.0 { *gc } else { 0.0 };
                }
                let input: &[f64] = match l {
                    0 => &xt.data()[s * cin * len..(s + 1) * cin * len],
                    _ if residual && l > 1 => &sums[l - 1][s * cin * len..(s + 1) * cin * len],
                    _ => &acts[l - 1][s * cin * len..(s + 1) * cin * len],
                };
                let w = self.value(layers[l].w).data();
                if want_params[l] {
                    kernels::conv_backward_params(&gpre[..d * len], input, cin, d, k, layers[l].dilation, len, &mut gw[l], &mut gb[l]);
                }
                if l == 0 {
                    if want_x {
                        let dst = &mut gx[s * cin * len..(s + 1) * cin * len];
                        kernels::conv_backward_input(&gpre[..d * len], d, w, cin, k, layers[l].dilation, len, dst);
                    }
                    continue;
                }
                gnext[..cin * len].fill(0.0);
                kernels::conv_backward_input(&gpre[..d * len], d, w, cin, k, layers[l].dilation, len, &mut gnext[..cin * len]);
                if residual {
                    for (n, c) in gnext[..cin * len].iter_mut().zip(&gcur[..cin * len]) {
                        *n += c;
                    }
                }
                std::mem::swap(&mut gcur, &mut gnext);
            }
        }
        for v in [gcur, gpre, gnext] {
            pool::give(v);
        }
        for (l, ly) in layers.iter().enumerate() {
            if want_params[l] {
                let shape = self.value(ly.w).shape().to_vec();
                self.accumulate(adj, ly.w, Tensor::new(shape, std::mem::take(&mut gw[l])).unwrap());
                self.accumulate(adj, ly.b, Tensor::from_vec(std::mem::take(&mut gb[l])));
            }
        }
        if want_x {
            self.accumulate(adj, x, Tensor::new(xt.shape().to_vec(), gx).unwrap());
        }
    }
}

impl Drop for Graph<'_> {
    fn drop(&mut self) {
        for node in self.nodes.drain(..) {
            if let Op::TcnMean { acts, sums, .. } = node.op {
                acts.into_iter().chain(sums).for_each(pool::give);
            }
        }
    }
}
