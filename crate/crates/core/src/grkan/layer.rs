use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::fit::fit_rational_to_function;
use super::rational::{accumulate_coeff_grads, eval_parts, RationalFn};
use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tape, Tensor, Var};

/// Monte Carlo sample count for the activation gain.
pub const GAIN_SAMPLES: usize = 1_000_000;
/// Fixed seed for the gain estimate, independent of the layer seed.
pub const GAIN_SEED: u64 = 0x6a1f_5eed;
/// Domain and sample count used when fitting rationals for weight import.
pub const FIT_DOMAIN: (f64, f64) = (-3.0, 3.0);
pub const FIT_SAMPLES: usize = 1000;

/// Group-rational KAN layer.
///
/// Input channel `i` belongs to group `i / (I/k)`; every channel of a group is
/// passed through that group's rational, and the activated channels are
/// combined through the per-edge scalar weights:
/// `out[o] = Σᵢ w[i,o]·φ_{group(i)}(xᵢ) (+ bias[o])`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrKanLayer {
    groups: usize,
    /// `[k × (m+1)]`, one row per group
    pub numerator: Tensor,
    /// `[k × n]`, one row per group
    pub denominator: Tensor,
    /// `[I × O]`
    pub weight: Tensor,
    /// `[O]`
    pub bias: Option<Tensor>,
}

#[derive(Clone, Copy, Debug)]
pub struct GrKanLayerVars {
    pub numerator: Var,
    pub denominator: Var,
    pub weight: Var,
    pub bias: Option<Var>,
}

/// Which rational each group starts from when importing linear weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ImportActivation {
    /// Output-preserving: the layer reproduces the source linear map.
    #[default]
    Identity,
    Silu,
}

impl GrKanLayer {
    pub fn new(groups: usize, rationals: &[RationalFn], weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        if rationals.len() != groups || groups == 0 {
            return Err(Error::dim(format!(
                "{} rationals supplied for {groups} groups",
                rationals.len()
            )));
        }
        let (m1, n) = (rationals[0].numerator().len(), rationals[0].den_order());
        if rationals
            .iter()
            .any(|r| r.numerator().len() != m1 || r.den_order() != n)
        {
            return Err(Error::dim("all group rationals must share their orders"));
        }
        let numerator = Tensor::new(
            vec![groups, m1],
            rationals.iter().flat_map(|r| r.numerator().to_vec()).collect(),
        )?;
        let denominator = Tensor::new(
            vec![groups, n],
            rationals.iter().flat_map(|r| r.denominator().to_vec()).collect(),
        )?;
        Self::from_parts(numerator, denominator, weight, bias)
    }

    pub fn from_parts(numerator: Tensor, denominator: Tensor, weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 2 || numerator.ndim() != 2 || denominator.ndim() != 2 {
            return Err(Error::dim("GR-KAN weight and coefficient tables must be 2-D"));
        }
        let (inputs, outputs) = (ws[0], ws[1]);
        let groups = numerator.shape()[0];
        if groups == 0 || denominator.shape()[0] != groups {
            return Err(Error::dim(format!(
                "numerator {:?} and denominator {:?} disagree on group count",
                numerator.shape(),
                denominator.shape()
            )));
        }
        if inputs % groups != 0 {
            return Err(Error::dim(format!(
                "group count {groups} does not divide input width {inputs}"
            )));
        }
        if numerator.shape()[1] == 0 {
            return Err(Error::dim("numerator needs at least a₀"));
        }
        if let Some(b) = &bias {
            if b.numel() != outputs {
                return Err(Error::dim(format!(
                    "bias has {} values for {outputs} outputs",
                    b.numel()
                )));
            }
        }
        Ok(GrKanLayer {
            groups,
            numerator,
            denominator,
            weight,
            bias,
        })
    }

    /// Variance-preserving initialization: with gain `α = E[φ(z)²]` for
    /// `z ~ N(0,1)`, weights are drawn from `N(0, 1/(α·I))` so unit-variance
    /// inputs produce unit-variance outputs. Bias starts at zero.
    pub fn variance_preserving(
        inputs: usize,
        outputs: usize,
        groups: usize,
        activation: &RationalFn,
        with_bias: bool,
        seed: u64,
    ) -> Result<Self> {
        if groups == 0 || inputs % groups != 0 {
            return Err(Error::Init(format!(
                "group count {groups} must divide input width {inputs}"
            )));
        }
        let gain = activation_gain(activation, GAIN_SAMPLES, GAIN_SEED);
        if !(gain >= 1e-12) {
            return Err(Error::Init(format!("activation gain {gain:.3e} is degenerate")));
        }
        let std = 1.0 / (gain * inputs as f64).sqrt();
        let dist = Normal::new(0.0, std).map_err(|e| Error::Init(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = Tensor::from_fn(&[inputs, outputs], |_| dist.sample(&mut rng));
        let bias = with_bias.then(|| Tensor::zeros(&[outputs]));
        Self::new(groups, &vec![activation.clone(); groups], weight, bias)
    }

    /// Imports a linear layer `x·W + b`: the scalar weights and bias are taken
    /// over unchanged and every group's rational is fitted to the chosen
    /// activation on [`FIT_DOMAIN`].
    pub fn load_from_mlp(
        weight: &Tensor,
        bias: Option<&Tensor>,
        groups: usize,
        orders: (usize, usize),
        activation: ImportActivation,
    ) -> Result<Self> {
        if weight.ndim() != 2 {
            return Err(Error::dim(format!(
                "linear weight must be [I×O], got {:?}",
                weight.shape()
            )));
        }
        let (m, n) = orders;
        let fit = match activation {
            ImportActivation::Identity => fit_rational_to_function(|x| x, m, n, FIT_DOMAIN, FIT_SAMPLES)?,
            ImportActivation::Silu => fit_rational_to_function(crate::tensor::silu, m, n, FIT_DOMAIN, FIT_SAMPLES)?,
        };
        Self::new(groups, &vec![fit.rational; groups], weight.clone(), bias.cloned())
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn group_width(&self) -> usize {
        self.inputs() / self.groups
    }

    pub fn group_of(&self, channel: usize) -> usize {
        channel / self.group_width()
    }

    pub fn rational(&self, group: usize) -> RationalFn {
        let m1 = self.numerator.shape()[1];
        let n = self.denominator.shape()[1];
        RationalFn::new(
            self.numerator.data()[group * m1..(group + 1) * m1].to_vec(),
            self.denominator.data()[group * n..(group + 1) * n].to_vec(),
        )
        .expect("stored coefficients are valid")
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> GrKanLayerVars {
        GrKanLayerVars {
            numerator: tape.leaf(self.numerator.clone(), trainable),
            denominator: tape.leaf(self.denominator.clone(), trainable),
            weight: tape.leaf(self.weight.clone(), trainable),
            bias: self.bias.as_ref().map(|b| tape.leaf(b.clone(), trainable)),
        }
    }

    /// Group-wise rational activation of `[N × I]` input.
    pub fn activate(&self, tape: &mut Tape, vars: &GrKanLayerVars, x: Var) -> Result<Var> {
        let xs = tape.shape(x).to_vec();
        if xs.len() != 2 || xs[1] != self.inputs() {
            return Err(Error::dim(format!(
                "GR-KAN layer expects [N×{}], got {:?}",
                self.inputs(),
                xs
            )));
        }
        let op = GroupRational {
            group_width: self.group_width(),
        };
        let out = op.forward(tape.value(x), tape.value(vars.numerator), tape.value(vars.denominator));
        Ok(tape.custom(&[x, vars.numerator, vars.denominator], out, Box::new(op)))
    }

    /// `[N × I] → [N × O]`: activation, then the scalar-weight matrix.
    pub fn forward(&self, tape: &mut Tape, vars: &GrKanLayerVars, x: Var) -> Result<Var> {
        let act = self.activate(tape, vars, x)?;
        let lin = tape.matmul(act, vars.weight)?;
        match vars.bias {
            Some(b) => tape.add_row(lin, b),
            None => Ok(lin),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &vars, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Direct edge-sum evaluation `Σᵢ w[i,o]·φ_{group(i)}(xᵢ)`, accumulated
    /// in increasing `i`.
    pub fn apply_summation(&self, x: &Tensor) -> Result<Tensor> {
        let xs = x.shape();
        if xs.len() != 2 || xs[1] != self.inputs() {
            return Err(Error::dim(format!(
                "GR-KAN layer expects [N×{}], got {:?}",
                self.inputs(),
                xs
            )));
        }
        let (rows, inputs, outputs) = (xs[0], self.inputs(), self.outputs());
        let rationals: Vec<RationalFn> = (0..self.groups).map(|g| self.rational(g)).collect();
        let w = self.weight.data();
        let mut out = vec![0.0; rows * outputs];
        for r in 0..rows {
            let phi: Vec<f64> = (0..inputs)
                .map(|i| rationals[self.group_of(i)].eval(x.data()[r * inputs + i]))
                .collect();
            for o in 0..outputs {
                let mut acc = 0.0;
                for (i, p) in phi.iter().enumerate() {
                    acc += w[i * outputs + o] * p;
                }
                if let Some(b) = &self.bias {
                    acc += b.data()[o];
                }
                out[r * outputs + o] = acc;
            }
        }
        Tensor::new(vec![rows, outputs], out)
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        let mut p = vec![
            ("numerator", &self.numerator),
            ("denominator", &self.denominator),
            ("weight", &self.weight),
        ];
        if let Some(b) = &self.bias {
            p.push(("bias", b));
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = vec![&mut self.numerator, &mut self.denominator, &mut self.weight];
        if let Some(b) = &mut self.bias {
            p.push(b);
        }
        p
    }
}

/// `E[φ(z)²]` for `z ~ N(0,1)` by Monte Carlo.
pub fn activation_gain(activation: &RationalFn, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..samples {
        let z: f64 = StandardNormal.sample(&mut rng);
        let v = activation.eval(z);
        acc += v * v;
    }
    acc / samples as f64
}

#[derive(Debug)]
struct GroupRational {
    group_width: usize,
}

impl GroupRational {
    fn forward(&self, x: &Tensor, num: &Tensor, den: &Tensor) -> Tensor {
        let inputs = x.shape()[1];
        let (m1, n) = (num.shape()[1], den.shape()[1]);
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(idx, &v)| {
                let g = (idx % inputs) / self.group_width;
                eval_parts(&num.data()[g * m1..(g + 1) * m1], &den.data()[g * n..(g + 1) * n], v).value
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape as input")
    }
}

impl CustomOp for GroupRational {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (x, num, den) = (inputs[0], inputs[1], inputs[2]);
        let width = x.shape()[1];
        let (m1, n) = (num.shape()[1], den.shape()[1]);
        let mut dx = needs[0].then(|| vec![0.0; x.numel()]);
        let want_coeffs = needs[1] || needs[2];
        let mut da = vec![0.0; num.numel()];
        let mut db = vec![0.0; den.numel()];
        for (idx, (&v, &gv)) in x.data().iter().zip(g).enumerate() {
            let grp = (idx % width) / self.group_width;
            let a = &num.data()[grp * m1..(grp + 1) * m1];
            let b = &den.data()[grp * n..(grp + 1) * n];
            let pt = eval_parts(a, b, v);
            if let Some(dx) = dx.as_mut() {
                dx[idx] = gv * pt.d_input;
            }
            if want_coeffs {
                accumulate_coeff_grads(
                    &pt,
                    v,
                    gv,
                    &mut da[grp * m1..(grp + 1) * m1],
                    &mut db[grp * n..(grp + 1) * n],
                );
            }
        }
        vec![dx, needs[1].then_some(da), needs[2].then_some(db)]
    }
}
