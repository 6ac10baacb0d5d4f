use std::fmt;

use super::ops;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for operations defined outside this module (the spline and
/// rational layers).
///
/// `grad_output` has the output's shape. The returned vector has one entry
/// per input; `None` means no contribution. Entries for inputs whose `needs`
/// flag is false are ignored.
pub trait CustomOp: fmt::Debug {
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Unary {
    Silu,
    Selu,
    Exp,
    Abs,
    Sigmoid,
    Pow(f64),
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    /// tensor + scalar-tensor
    AddScalarVar(Var, Var),
    /// tensor * scalar-tensor
    MulScalarVar(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Unary(Var, Unary),
    MatMul(Var, Var),
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    LayerNorm(Var),
    Glu(Var),
    DepthwiseConv(Var, Var),
    PrependRow(Var, Var),
    SelectRow(Var, usize),
    CrossEntropy(Var, Vec<usize>),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Tensor>,
}

/// Append-only record of a computation. Node ids are assigned in creation
/// order, so every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of a leaf, or zeros when no backward pass reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// The single value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.numel(), 1);
        t.data()[0]
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse-mode sweep from a scalar node. Gradients are added to the
    /// `grad` buffers of every reachable leaf created with `requires_grad`,
    /// so repeated calls accumulate until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((id, g));
                continue;
            }
            self.propagate(id, &g, &mut adj);
        }

        for (id, g) in leaf_grads {
            let node = &mut self.nodes[id];
            match &mut node.grad {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(&g) {
                        *e += d;
                    }
                }
                None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                self.acc(adj, *a, || g.to_vec());
                self.acc(adj, *b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                self.acc(adj, *a, || g.to_vec());
                self.acc(adj, *b, || g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                self.acc(adj, *a, || g.iter().zip(bv).map(|(g, b)| g * b).collect());
                self.acc(adj, *b, || g.iter().zip(av).map(|(g, a)| g * a).collect());
            }
            Op::AddScalar(a) => self.acc(adj, *a, || g.to_vec()),
            Op::Scale(a, c) => self.acc(adj, *a, || g.iter().map(|v| v * c).collect()),
            Op::AddScalarVar(a, s) => {
                self.acc(adj, *a, || g.to_vec());
                self.acc(adj, *s, || vec![g.iter().sum()]);
            }
            Op::MulScalarVar(a, s) => {
                let sv = val(*s).data()[0];
                let av = val(*a).data();
                self.acc(adj, *a, || g.iter().map(|v| v * sv).collect());
                self.acc(adj, *s, || vec![g.iter().zip(av).map(|(g, a)| g * a).sum()]);
            }
            Op::AddRow(a, r) => {
                let width = val(*r).numel();
                self.acc(adj, *a, || g.to_vec());
                self.acc(adj, *r, || {
                    let mut dr = vec![0.0; width];
                    for row in g.chunks(width) {
                        for (d, v) in dr.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    dr
                });
            }
            Op::MulRow(a, r) => {
                let rv = val(*r).data();
                let av = val(*a).data();
                let width = rv.len();
                self.acc(adj, *a, || {
                    g.chunks(width)
                        .flat_map(|row| row.iter().zip(rv).map(|(g, r)| g * r))
                        .collect()
                });
                self.acc(adj, *r, || {
                    let mut dr = vec![0.0; width];
                    for (grow, arow) in g.chunks(width).zip(av.chunks(width)) {
                        for ((d, g), a) in dr.iter_mut().zip(grow).zip(arow) {
                            *d += g * a;
                        }
                    }
                    dr
                });
            }
            Op::Unary(a, kind) => {
                let x = val(*a).data();
                let y = out.data();
                self.acc(adj, *a, || ops::unary_backward(*kind, x, y, g));
            }
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                let (av, bv) = (val(*a).data(), val(*b).data());
                self.acc(adj, *a, || {
                    let mut da = vec![0.0; m * k];
                    ops::gemm_nt(m, n, k, g, bv, &mut da);
                    da
                });
                self.acc(adj, *b, || {
                    let mut db = vec![0.0; k * n];
                    ops::gemm_tn(m, k, n, av, g, &mut db);
                    db
                });
            }
            Op::Bmm { a, b, trans_b } => {
                let ash = val(*a).shape();
                let (batch, m, k) = (ash[0], ash[1], ash[2]);
                let n = out.shape()[2];
                let (av, bv) = (val(*a).data(), val(*b).data());
                self.acc(adj, *a, || {
                    let mut da = vec![0.0; batch * m * k];
                    for i in 0..batch {
                        let gs = &g[i * m * n..(i + 1) * m * n];
                        let bs = &bv[i * k * n..(i + 1) * k * n];
                        let das = &mut da[i * m * k..(i + 1) * m * k];
                        if *trans_b {
                            // B stored [n×k]: dA = G·B
                            ops::gemm(m, n, k, gs, bs, das);
                        } else {
                            ops::gemm_nt(m, n, k, gs, bs, das);
                        }
                    }
                    da
                });
                self.acc(adj, *b, || {
                    let mut db = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        let gs = &g[i * m * n..(i + 1) * m * n];
                        let as_ = &av[i * m * k..(i + 1) * m * k];
                        let dbs = &mut db[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // dB[n×k] = Gᵀ·A
                            ops::gemm_tn(m, n, k, gs, as_, dbs);
                        } else {
                            ops::gemm_tn(m, k, n, as_, gs, dbs);
                        }
                    }
                    db
                });
            }
            Op::Reshape(a) => self.acc(adj, *a, || g.to_vec()),
            Op::Permute(a, axes) => {
                let in_shape = val(*a).shape();
                self.acc(adj, *a, || ops::permute_backward(in_shape, axes, g));
            }
            Op::Sum(a) => {
                let n = val(*a).numel();
                self.acc(adj, *a, || vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = val(*a).numel();
                self.acc(adj, *a, || vec![g[0] / n as f64; n]);
            }
            Op::Softmax(a) => {
                let width = *out.shape().last().unwrap();
                self.acc(adj, *a, || ops::softmax_backward(out.data(), g, width));
            }
            Op::LayerNorm(a) => {
                let width = *out.shape().last().unwrap();
                let x = val(*a).data();
                self.acc(adj, *a, || ops::layer_norm_backward(x, out.data(), g, width));
            }
            Op::Glu(a) => {
                let width = *val(*a).shape().last().unwrap();
                let x = val(*a).data();
                self.acc(adj, *a, || ops::glu_backward(x, g, width));
            }
            Op::DepthwiseConv(x, w) => {
                let xs = val(*x).shape();
                let (b, t, c) = (xs[0], xs[1], xs[2]);
                let kernel = val(*w).shape()[1];
                let (xv, wv) = (val(*x).data(), val(*w).data());
                let (need_x, need_w) = (self.needs(*x), self.needs(*w));
                let (dx, dw) = ops::depthwise_conv_backward(xv, wv, g, (b, t, c, kernel), need_x, need_w);
                if let Some(dx) = dx {
                    self.acc(adj, *x, || dx);
                }
                if let Some(dw) = dw {
                    self.acc(adj, *w, || dw);
                }
            }
            Op::PrependRow(x, token) => {
                let xs = val(*x).shape();
                let (b, t, d) = (xs[0], xs[1], xs[2]);
                self.acc(adj, *x, || {
                    let mut dx = Vec::with_capacity(b * t * d);
                    for bi in 0..b {
                        let base = bi * (t + 1) * d;
                        dx.extend_from_slice(&g[base + d..base + (t + 1) * d]);
                    }
                    dx
                });
                self.acc(adj, *token, || {
                    let mut dt = vec![0.0; d];
                    for bi in 0..b {
                        let base = bi * (t + 1) * d;
                        for (acc, v) in dt.iter_mut().zip(&g[base..base + d]) {
                            *acc += v;
                        }
                    }
                    dt
                });
            }
            Op::SelectRow(x, idx) => {
                let xs = val(*x).shape();
                let (b, s, d) = (xs[0], xs[1], xs[2]);
                self.acc(adj, *x, || {
                    let mut dx = vec![0.0; b * s * d];
                    for bi in 0..b {
                        let dst = (bi * s + idx) * d;
                        dx[dst..dst + d].copy_from_slice(&g[bi * d..(bi + 1) * d]);
                    }
                    dx
                });
            }
            Op::CrossEntropy(logits, targets) => {
                let lv = val(*logits);
                let classes = lv.shape()[1];
                self.acc(adj, *logits, || {
                    ops::cross_entropy_backward(lv.data(), targets, classes, g[0])
                });
            }
            Op::Custom(inputs, op) => {
                let in_vals: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|v| self.needs(*v)).collect();
                let grads = op.backward(&in_vals, out, g, &needs);
                for ((v, grad), need) in inputs.iter().zip(grads).zip(needs) {
                    if let (Some(grad), true) = (grad, need) {
                        self.acc(adj, *v, || grad);
                    }
                }
            }
        }
    }

    fn acc(&self, adj: &mut [Option<Vec<f64>>], v: Var, contribution: impl FnOnce() -> Vec<f64>) {
        if !self.needs(v) {
            return;
        }
        let c = contribution();
        match &mut adj[v.0] {
            Some(existing) => {
                for (e, d) in existing.iter_mut().zip(&c) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(c),
        }
    }
}
