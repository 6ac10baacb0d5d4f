use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ConformerConfig;
use super::layers::{Cursor, ForwardCtx, Linear, Norm};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Pre-norm feed-forward module: LN → Linear(D′→eD′) → Swish → dropout →
/// Linear(eD′→D′) → dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub norm: Norm,
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    fn init(dim: usize, expansion: usize, rng: &mut ChaCha8Rng) -> Self {
        FeedForward {
            norm: Norm::new(dim),
            up: Linear::init(dim, dim * expansion, rng),
            down: Linear::init(dim * expansion, dim, rng),
        }
    }

    fn forward(&self, tape: &mut Tape, cur: &mut Cursor, ctx: &mut ForwardCtx, x: Var, p: f64) -> Result<Var> {
        let h = self.norm.forward(tape, cur, x)?;
        let h = self.up.forward(tape, cur, h)?;
        let h = tape.silu(h);
        let h = ctx.dropout(tape, h, p)?;
        let h = self.down.forward(tape, cur, h)?;
        ctx.dropout(tape, h, p)
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.norm.collect(&format!("{prefix}.norm"), out);
        self.up.collect(&format!("{prefix}.up"), out);
        self.down.collect(&format!("{prefix}.down"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.norm.collect_mut(out);
        self.up.collect_mut(out);
        self.down.collect_mut(out);
    }
}

/// Scaled dot-product self-attention over the sequence axis, no mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

impl SelfAttention {
    pub fn init(dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Validation(format!(
                "width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(SelfAttention {
            heads,
            query: Linear::init(dim, dim, rng),
            key: Linear::init(dim, dim, rng),
            value: Linear::init(dim, dim, rng),
            out: Linear::init(dim, dim, rng),
        })
    }

    fn split_heads(&self, tape: &mut Tape, x: Var, b: usize, s: usize, d: usize) -> Result<Var> {
        let h = self.heads;
        let x = tape.reshape(x, &[b, s, h, d / h])?;
        let x = tape.permute(x, &[0, 2, 1, 3])?;
        tape.reshape(x, &[b * h, s, d / h])
    }

    /// Returns the output and the `[B·heads × S × S]` attention weights.
    pub(crate) fn forward(&self, tape: &mut Tape, cur: &mut Cursor, x: Var) -> Result<(Var, Var)> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.query.inputs() {
            return Err(Error::dim(format!(
                "attention expects [B×S×{}], got {:?}",
                self.query.inputs(),
                shape
            )));
        }
        let (b, s, d) = (shape[0], shape[1], shape[2]);
        let h = self.heads;
        let q = self.query.forward(tape, cur, x)?;
        let k = self.key.forward(tape, cur, x)?;
        let v = self.value.forward(tape, cur, x)?;
        let q = self.split_heads(tape, q, b, s, d)?;
        let k = self.split_heads(tape, k, b, s, d)?;
        let v = self.split_heads(tape, v, b, s, d)?;
        let scores = tape.bmm(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / ((d / h) as f64).sqrt());
        let attn = tape.softmax(scores)?;
        let ctx = tape.bmm(attn, v, false)?;
        let ctx = tape.reshape(ctx, &[b, h, s, d / h])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, s, d])?;
        Ok((self.out.forward(tape, cur, ctx)?, attn))
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.query.collect(&format!("{prefix}.query"), out);
        self.key.collect(&format!("{prefix}.key"), out);
        self.value.collect(&format!("{prefix}.value"), out);
        self.out.collect(&format!("{prefix}.out"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.query.collect_mut(out);
        self.key.collect_mut(out);
        self.value.collect_mut(out);
        self.out.collect_mut(out);
    }

    /// Tape-free attention on `[B×S×D]`; returns output and weights.
    pub fn apply(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let mut params = Vec::new();
        self.collect("attention", &mut params);
        let vars: Vec<Var> = params.into_iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let xv = tape.constant(x.clone());
        let (y, a) = self.forward(&mut tape, &mut Cursor::new(&vars), xv)?;
        Ok((tape.value(y).clone(), tape.value(a).clone()))
    }
}

/// Convolution module: LN → pointwise (D′→2D′) → GLU → depthwise conv →
/// LN → Swish → pointwise (D′→D′) → dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvModule {
    pub norm: Norm,
    pub pointwise_in: Linear,
    /// `[D′ × K]`
    pub depthwise: Tensor,
    /// `[D′]`
    pub depthwise_bias: Tensor,
    pub conv_norm: Norm,
    pub pointwise_out: Linear,
}

impl ConvModule {
    fn init(dim: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (kernel as f64).sqrt();
        ConvModule {
            norm: Norm::new(dim),
            pointwise_in: Linear::init(dim, 2 * dim, rng),
            depthwise: Tensor::from_fn(&[dim, kernel], |_| rng.gen_range(-bound..bound)),
            depthwise_bias: Tensor::zeros(&[dim]),
            conv_norm: Norm::new(dim),
            pointwise_out: Linear::init(dim, dim, rng),
        }
    }

    fn forward(&self, tape: &mut Tape, cur: &mut Cursor, ctx: &mut ForwardCtx, x: Var, p: f64) -> Result<Var> {
        let h = self.norm.forward(tape, cur, x)?;
        let h = self.pointwise_in.forward(tape, cur, h)?;
        let h = tape.glu(h)?;
        let (w, bias) = (cur.next(), cur.next());
        let h = tape.depthwise_conv1d(h, w)?;
        let h = tape.add_row(h, bias)?;
        let h = self.conv_norm.forward(tape, cur, h)?;
        let h = tape.silu(h);
        let h = self.pointwise_out.forward(tape, cur, h)?;
        ctx.dropout(tape, h, p)
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.norm.collect(&format!("{prefix}.norm"), out);
        self.pointwise_in.collect(&format!("{prefix}.pointwise_in"), out);
        out.push((format!("{prefix}.depthwise"), &self.depthwise));
        out.push((format!("{prefix}.depthwise_bias"), &self.depthwise_bias));
        self.conv_norm.collect(&format!("{prefix}.conv_norm"), out);
        self.pointwise_out.collect(&format!("{prefix}.pointwise_out"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.norm.collect_mut(out);
        self.pointwise_in.collect_mut(out);
        out.push(&mut self.depthwise);
        out.push(&mut self.depthwise_bias);
        self.conv_norm.collect_mut(out);
        self.pointwise_out.collect_mut(out);
    }
}

/// `x + ½FFN(x)`, `+ MHSA`, `+ Conv`, `+ ½FFN`, then a final layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ConformerBlock {
    pub ff1: FeedForward,
    pub attn_norm: Norm,
    pub attention: SelfAttention,
    pub conv: ConvModule,
    pub ff2: FeedForward,
    pub final_norm: Norm,
    pub dropout: f64,
}

impl ConformerBlock {
    pub fn init(cfg: &ConformerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        Ok(ConformerBlock {
            ff1: FeedForward::init(d, cfg.ff_expansion, rng),
            attn_norm: Norm::new(d),
            attention: SelfAttention::init(d, cfg.heads, rng)?,
            conv: ConvModule::init(d, cfg.kernel_size, rng),
            ff2: FeedForward::init(d, cfg.ff_expansion, rng),
            final_norm: Norm::new(d),
            dropout: cfg.dropout,
        })
    }

    pub fn dim(&self) -> usize {
        self.attention.query.inputs()
    }

    pub(crate) fn forward(&self, tape: &mut Tape, cur: &mut Cursor, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.dim() {
            return Err(Error::dim(format!(
                "Conformer block expects [B×S×{}], got {:?}",
                self.dim(),
                shape
            )));
        }
        let p = self.dropout;
        let h = self.ff1.forward(tape, cur, ctx, x, p)?;
        let h = tape.scale(h, 0.5);
        let x = tape.add(x, h)?;

        let h = self.attn_norm.forward(tape, cur, x)?;
        let (h, _) = self.attention.forward(tape, cur, h)?;
        let h = ctx.dropout(tape, h, p)?;
        let x = tape.add(x, h)?;

        let h = self.conv.forward(tape, cur, ctx, x, p)?;
        let x = tape.add(x, h)?;

        let h = self.ff2.forward(tape, cur, ctx, x, p)?;
        let h = tape.scale(h, 0.5);
        let x = tape.add(x, h)?;
        self.final_norm.forward(tape, cur, x)
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.collect("block", &mut out);
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone(), trainable))
            .collect()
    }

    /// Block forward with parameters from [`ConformerBlock::bind`].
    pub fn forward_bound(&self, tape: &mut Tape, vars: &[Var], ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        if vars.len() != self.params().len() {
            return Err(Error::dim(format!(
                "block has {} parameter tensors, {} bound",
                self.params().len(),
                vars.len()
            )));
        }
        self.forward(tape, &mut Cursor::new(vars), ctx, x)
    }

    /// Tape-free block evaluation with dropout off.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward_bound(&mut tape, &vars, &mut ForwardCtx::eval(), xv)?;
        Ok(tape.value(y).clone())
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.ff1.collect(&format!("{prefix}.ff1"), out);
        self.attn_norm.collect(&format!("{prefix}.attn_norm"), out);
        self.attention.collect(&format!("{prefix}.attention"), out);
        self.conv.collect(&format!("{prefix}.conv"), out);
        self.ff2.collect(&format!("{prefix}.ff2"), out);
        self.final_norm.collect(&format!("{prefix}.final_norm"), out);
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.ff1.collect_mut(out);
        self.attn_norm.collect_mut(out);
        self.attention.collect_mut(out);
        self.conv.collect_mut(out);
        self.ff2.collect_mut(out);
        self.final_norm.collect_mut(out);
    }
}

/// Sinusoidal position table `[S×D]`.
pub fn sinusoidal_encoding(len: usize, dim: usize) -> Tensor {
    Tensor::from_fn(&[len, dim], |idx| {
        let (pos, i) = ((idx / dim) as f64, idx % dim);
        let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        if i % 2 == 0 {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        }
    })
}
