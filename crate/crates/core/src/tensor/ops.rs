//! Forward constructors for tape operations and the numeric kernels shared by
//! their backward rules.

use super::tape::{CustomOp, Op, Tape, Unary, Var};
use super::{matmul_dims, selu, selu_grad, sigmoid, silu, silu_grad, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    // transposing first keeps the inner loop a contiguous axpy
    let mut bt = vec![0.0; k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    gemm(m, k, n, a, &bt, out);
}

/// `out[p×q] += a[r×p]ᵀ · b[r×q]`
pub(crate) fn gemm_tn(r: usize, p: usize, q: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for row in 0..r {
        let arow = &a[row * p..(row + 1) * p];
        let brow = &b[row * q..(row + 1) * q];
        for (i, av) in arow.iter().enumerate() {
            let orow = &mut out[i * q..(i + 1) * q];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn unary_forward(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Silu => silu(x),
        Unary::Selu => selu(x),
        Unary::Exp => x.exp(),
        Unary::Abs => x.abs(),
        Unary::Sigmoid => sigmoid(x),
        Unary::Pow(p) => x.powf(p),
    }
}

pub(crate) fn unary_backward(kind: Unary, x: &[f64], y: &[f64], g: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(y)
        .zip(g)
        .map(|((&x, &y), &g)| {
            let d = match kind {
                Unary::Silu => silu_grad(x),
                Unary::Selu => selu_grad(x),
                Unary::Exp => y,
                // subgradient 0 at the kink
                Unary::Abs => {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                Unary::Sigmoid => y * (1.0 - y),
                Unary::Pow(p) => {
                    if p == 0.0 {
                        0.0
                    } else {
                        p * x.powf(p - 1.0)
                    }
                }
            };
            g * d
        })
        .collect()
}

fn permuted_strides(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    // stride in the input for each output axis
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    (out_shape, strides)
}

/// Visit `(out_index, in_index)` pairs of a permutation in output order.
fn for_each_permuted(shape: &[usize], axes: &[usize], mut f: impl FnMut(usize, usize)) {
    let (out_shape, strides) = permuted_strides(shape, axes);
    let numel: usize = shape.iter().product();
    if numel == 0 {
        return;
    }
    let rank = shape.len();
    let mut counter = vec![0usize; rank];
    let mut src = 0usize;
    for dst in 0..numel {
        f(dst, src);
        for d in (0..rank).rev() {
            counter[d] += 1;
            src += strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            counter[d] = 0;
        }
    }
}

pub(crate) fn permute_backward(in_shape: &[usize], axes: &[usize], g: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; g.len()];
    for_each_permuted(in_shape, axes, |dst, src| dx[src] = g[dst]);
    dx
}

pub(crate) fn softmax_backward(y: &[f64], g: &[f64], width: usize) -> Vec<f64> {
    let mut dx = Vec::with_capacity(y.len());
    for (yr, gr) in y.chunks(width).zip(g.chunks(width)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        dx.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
    }
    dx
}

pub(crate) fn layer_norm_backward(x: &[f64], y: &[f64], g: &[f64], width: usize) -> Vec<f64> {
    let n = width as f64;
    let mut dx = Vec::with_capacity(x.len());
    for ((xr, yr), gr) in x.chunks(width).zip(y.chunks(width)).zip(g.chunks(width)) {
        let mean = xr.iter().sum::<f64>() / n;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let g_mean = gr.iter().sum::<f64>() / n;
        let gy_mean = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / n;
        dx.extend(gr.iter().zip(yr).map(|(g, y)| rstd * (g - g_mean - y * gy_mean)));
    }
    dx
}

pub(crate) fn glu_backward(x: &[f64], g: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut dx = vec![0.0; x.len()];
    for ((xr, gr), dr) in x.chunks(width).zip(g.chunks(half)).zip(dx.chunks_mut(width)) {
        for c in 0..half {
            let (a, b) = (xr[c], xr[half + c]);
            let s = sigmoid(b);
            dr[c] = gr[c] * s;
            dr[half + c] = gr[c] * a * s * (1.0 - s);
        }
    }
    dx
}

#[allow(clippy::type_complexity)]
pub(crate) fn depthwise_conv_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    (b, t, c, kernel): (usize, usize, usize, usize),
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let pad = (kernel - 1) / 2;
    let mut dx = need_x.then(|| vec![0.0; x.len()]);
    let mut dw = need_w.then(|| vec![0.0; w.len()]);
    for bi in 0..b {
        for ti in 0..t {
            let grow = &g[(bi * t + ti) * c..(bi * t + ti + 1) * c];
            for j in 0..kernel {
                let src = ti as isize + j as isize - pad as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let off = (bi * t + src as usize) * c;
                for ch in 0..c {
                    if let Some(dx) = dx.as_mut() {
                        dx[off + ch] += w[ch * kernel + j] * grow[ch];
                    }
                    if let Some(dw) = dw.as_mut() {
                        dw[ch * kernel + j] += x[off + ch] * grow[ch];
                    }
                }
            }
        }
    }
    (dx, dw)
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

pub(crate) fn cross_entropy_backward(logits: &[f64], targets: &[usize], classes: usize, g: f64) -> Vec<f64> {
    let batch = targets.len() as f64;
    let mut d = Vec::with_capacity(logits.len());
    for (row, &t) in logits.chunks(classes).zip(targets) {
        let lp = log_softmax_row(row);
        d.extend(
            lp.iter()
                .enumerate()
                .map(|(j, l)| g * (l.exp() - if j == t { 1.0 } else { 0.0 }) / batch),
        );
    }
    d
}

fn same_shape(tape: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::dim(format!(
            "{what} needs equal shapes, got {:?} and {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

fn scalar_operand(tape: &Tape, s: Var, what: &str) -> Result<f64> {
    let t = tape.value(s);
    if t.numel() != 1 {
        return Err(Error::dim(format!(
            "{what} needs a one-element operand, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}

fn last_dim(tape: &Tape, v: Var, what: &str) -> Result<usize> {
    tape.shape(v)
        .last()
        .copied()
        .ok_or_else(|| Error::dim(format!("{what} needs at least one axis")))
}

impl Tape {
    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        Tensor {
            shape: av.shape().to_vec(),
            data: av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// `a + s` where `s` is a one-element tensor.
    pub fn add_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = scalar_operand(self, s, "add_scalar_var")?;
        let out = self.value(a).map(|v| v + sv);
        Ok(self.push(out, Op::AddScalarVar(a, s), &[a, s]))
    }

    /// `a * s` where `s` is a one-element tensor.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = scalar_operand(self, s, "mul_scalar_var")?;
        let out = self.value(a).map(|v| v * sv);
        Ok(self.push(out, Op::MulScalarVar(a, s), &[a, s]))
    }

    fn check_row(&self, a: Var, r: Var, what: &str) -> Result<usize> {
        let width = last_dim(self, a, what)?;
        if self.value(r).numel() != width {
            return Err(Error::dim(format!(
                "{what}: row of shape {:?} does not match last axis of {:?}",
                self.shape(r),
                self.shape(a)
            )));
        }
        Ok(width)
    }

    /// Adds a vector along the last axis (bias).
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let width = self.check_row(a, r, "add_row")?;
        let rv = self.value(r).data();
        let av = self.value(a);
        let data = av
            .data()
            .chunks(width)
            .flat_map(|row| row.iter().zip(rv).map(|(x, b)| x + b))
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(a, r), &[a, r]))
    }

    /// Multiplies by a vector along the last axis (gain).
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let width = self.check_row(a, r, "mul_row")?;
        let rv = self.value(r).data();
        let av = self.value(a);
        let data = av
            .data()
            .chunks(width)
            .flat_map(|row| row.iter().zip(rv).map(|(x, b)| x * b))
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulRow(a, r), &[a, r]))
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let out = self.value(a).map(|v| unary_forward(kind, v));
        self.push(out, Op::Unary(a, kind), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Silu)
    }

    pub fn selu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Selu)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn pow(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, Unary::Pow(p))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched product over the leading axis: `[G×M×K]·[G×K×N]`, or
    /// `[G×M×K]·[G×N×K]ᵀ` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = ash.len() == 3
            && bsh.len() == 3
            && ash[0] == bsh[0]
            && if trans_b { ash[2] == bsh[2] } else { ash[2] == bsh[1] };
        if !ok {
            return Err(Error::dim(format!(
                "bmm (trans_b={trans_b}) cannot combine {:?} and {:?}",
                ash, bsh
            )));
        }
        let (batch, m, k) = (ash[0], ash[1], ash[2]);
        let n = if trans_b { bsh[1] } else { bsh[2] };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            let as_ = &av[i * m * k..(i + 1) * m * k];
            let bs = &bv[i * k * n..(i + 1) * k * n];
            let os = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                gemm_nt(m, k, n, as_, bs, os);
            } else {
                gemm(m, k, n, as_, bs, os);
            }
        }
        let out = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(out, Op::Bmm { a, b, trans_b }, &[a, b]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Axis permutation: output axis `d` is input axis `axes[d]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&x| x >= shape.len() || std::mem::replace(&mut seen[x], true))
        {
            return Err(Error::dim(format!(
                "permutation {:?} invalid for shape {:?}",
                axes, shape
            )));
        }
        let src = self.value(a).data();
        let mut data = vec![0.0; src.len()];
        for_each_permuted(&shape, axes, |dst, s| data[dst] = src[s]);
        let out_shape = axes.iter().map(|&x| shape[x]).collect();
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::Permute(a, axes.to_vec()), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let width = last_dim(self, a, "softmax")?;
        let av = self.value(a);
        let mut data = Vec::with_capacity(av.numel());
        for row in av.data().chunks(width) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|v| (v - max).exp()));
            let z: f64 = data[start..].iter().sum();
            for v in &mut data[start..] {
                *v /= z;
            }
        }
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    /// Zero-mean, unit-variance normalization over the last axis (no affine
    /// part; compose with `mul_row`/`add_row`).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        let width = last_dim(self, a, "layer_norm")?;
        let av = self.value(a);
        let n = width as f64;
        let mut data = Vec::with_capacity(av.numel());
        for row in av.data().chunks(width) {
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            data.extend(row.iter().map(|v| (v - mean) * rstd));
        }
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::LayerNorm(a), &[a]))
    }

    /// Gated linear unit over the last axis: first half ⊙ σ(second half).
    pub fn glu(&mut self, a: Var) -> Result<Var> {
        let width = last_dim(self, a, "glu")?;
        if width % 2 != 0 {
            return Err(Error::dim(format!("glu needs an even last axis, got {width}")));
        }
        let half = width / 2;
        let av = self.value(a);
        let mut data = Vec::with_capacity(av.numel() / 2);
        for row in av.data().chunks(width) {
            data.extend((0..half).map(|c| row[c] * sigmoid(row[half + c])));
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = half;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Glu(a), &[a]))
    }

    /// Per-channel 1-D convolution along time with zero "same" padding.
    /// `x` is `[B×T×C]`, `w` is `[C×K]` with odd `K`.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 2 || ws[0] != xs[2] || ws[1] % 2 == 0 {
            return Err(Error::dim(format!(
                "depthwise conv needs x [B×T×C] and odd-width w [C×K], got {:?} and {:?}",
                xs, ws
            )));
        }
        let (b, t, c) = (xs[0], xs[1], xs[2]);
        let kernel = ws[1];
        let pad = (kernel - 1) / 2;
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![0.0; b * t * c];
        for bi in 0..b {
            for ti in 0..t {
                let orow = &mut out[(bi * t + ti) * c..(bi * t + ti + 1) * c];
                for j in 0..kernel {
                    let src = ti as isize + j as isize - pad as isize;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    let xrow = &xv[(bi * t + src as usize) * c..(bi * t + src as usize + 1) * c];
                    for ch in 0..c {
                        orow[ch] += wv[ch * kernel + j] * xrow[ch];
                    }
                }
            }
        }
        let out = Tensor::new(xs, out)?;
        Ok(self.push(out, Op::DepthwiseConv(x, w), &[x, w]))
    }

    /// `[B×T×D]` → `[B×(T+1)×D]` with `token` (`D` values) at position 0 of
    /// every sequence.
    pub fn prepend_row(&mut self, x: Var, token: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || self.value(token).numel() != xs[2] {
            return Err(Error::dim(format!(
                "prepend_row needs x [B×T×D] and a D-vector token, got {:?} and {:?}",
                xs,
                self.shape(token)
            )));
        }
        let (b, t, d) = (xs[0], xs[1], xs[2]);
        let (xv, tv) = (self.value(x).data(), self.value(token).data());
        let mut data = Vec::with_capacity(b * (t + 1) * d);
        for bi in 0..b {
            data.extend_from_slice(tv);
            data.extend_from_slice(&xv[bi * t * d..(bi + 1) * t * d]);
        }
        let out = Tensor::new(vec![b, t + 1, d], data)?;
        Ok(self.push(out, Op::PrependRow(x, token), &[x, token]))
    }

    /// `[B×S×D]` → `[B×D]` taking sequence position `index`.
    pub fn select_row(&mut self, x: Var, index: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || index >= xs[1] {
            return Err(Error::dim(format!(
                "select_row index {index} out of range for {:?}",
                xs
            )));
        }
        let (b, s, d) = (xs[0], xs[1], xs[2]);
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(b * d);
        for bi in 0..b {
            let off = (bi * s + index) * d;
            data.extend_from_slice(&xv[off..off + d]);
        }
        let out = Tensor::new(vec![b, d], data)?;
        Ok(self.push(out, Op::SelectRow(x, index), &[x]))
    }

    /// Mean cross-entropy of `[B×C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != targets.len() || targets.iter().any(|&t| t >= ls[1]) {
            return Err(Error::dim(format!(
                "cross_entropy: logits {:?} incompatible with {} targets",
                ls,
                targets.len()
            )));
        }
        let lv = self.value(logits).data();
        let loss = lv
            .chunks(ls[1])
            .zip(targets)
            .map(|(row, &t)| -log_softmax_row(row)[t])
            .sum::<f64>()
            / targets.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, targets.to_vec()),
            &[logits],
        ))
    }

    /// Records an externally computed node with its own backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.push(output, Op::Custom(inputs.to_vec(), op), inputs)
    }
}
