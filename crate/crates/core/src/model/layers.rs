use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Hands out tape variables in the canonical parameter order.
pub(crate) struct Cursor<'a> {
    vars: &'a [Var],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(vars: &'a [Var]) -> Self {
        Cursor { vars, pos: 0 }
    }

    pub fn next(&mut self) -> Var {
        let v = self.vars[self.pos];
        self.pos += 1;
        v
    }

    pub fn take(&mut self, n: usize) -> &'a [Var] {
        let s = &self.vars[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    pub fn finished(&self) -> bool {
        self.pos == self.vars.len()
    }
}

/// Training/evaluation switch. Dropout masks are drawn from `rng` only in
/// training mode.
pub struct ForwardCtx<'r> {
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> ForwardCtx<'r> {
    pub fn eval() -> Self {
        ForwardCtx { rng: None }
    }

    pub fn train(rng: &'r mut ChaCha8Rng) -> Self {
        ForwardCtx { rng: Some(rng) }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Inverted dropout: kept units are scaled by `1/(1-p)`.
    pub(crate) fn dropout(&mut self, tape: &mut Tape, x: Var, p: f64) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = Tensor::from_fn(tape.shape(x), |_| if rng.gen::<f64>() < p { 0.0 } else { keep });
        let m = tape.constant(mask);
        tape.mul(x, m)
    }
}

/// Dense layer `x·W + b` over the last axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[in × out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Linear {
    /// Uniform `±1/√in` for weights and bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Linear {
            weight: Tensor::from_fn(&[inputs, outputs], |_| rng.gen_range(-bound..bound)),
            bias: Tensor::from_fn(&[outputs], |_| rng.gen_range(-bound..bound)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub(crate) fn forward(&self, tape: &mut Tape, cur: &mut Cursor, x: Var) -> Result<Var> {
        let (w, b) = (cur.next(), cur.next());
        let shape = tape.shape(x).to_vec();
        let last = *shape.last().unwrap_or(&0);
        if last != self.inputs() {
            return Err(Error::dim(format!(
                "linear layer expects width {}, got {:?}",
                self.inputs(),
                shape
            )));
        }
        let rows = shape[..shape.len() - 1].iter().product();
        let flat = tape.reshape(x, &[rows, last])?;
        let y = tape.matmul(flat, w)?;
        let y = tape.add_row(y, b)?;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.outputs();
        tape.reshape(y, &out_shape)
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// Layer norm with learnable gain and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub gain: Tensor,
    pub shift: Tensor,
}

impl Norm {
    pub fn new(width: usize) -> Self {
        Norm {
            gain: Tensor::full(&[width], 1.0),
            shift: Tensor::zeros(&[width]),
        }
    }

    pub(crate) fn forward(&self, tape: &mut Tape, cur: &mut Cursor, x: Var) -> Result<Var> {
        let (g, s) = (cur.next(), cur.next());
        let y = tape.layer_norm(x)?;
        let y = tape.mul_row(y, g)?;
        tape.add_row(y, s)
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.gain"), &self.gain));
        out.push((format!("{prefix}.shift"), &self.shift));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.gain);
        out.push(&mut self.shift);
    }
}
