//! Randomized finite-difference checks of the analytic gradients, shared by
//! the CLI and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grkan::{GrKanLayer, RationalFn};
use crate::kan::{KanLayer, KnotGrid};
use crate::model::{ConformerConfig, ForwardCtx, GrKanInit, ModelConfig, ProjectorConfig, ProjectorKind};
use crate::tensor::{grad_check, Tape, Tensor, Var};
use crate::SsdModel;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub module: &'static str,
    pub configurations: usize,
    /// Largest relative error over every configuration and input tensor.
    pub worst: f64,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

pub const LAYER_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;

// Outputs are linear in these parameters, so a wide step has no truncation
// error and much less rounding noise.
const LINEAR_STEP: f64 = 1e-2;
const STEP: f64 = 1e-5;

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn weighted(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.constant(Tensor::from_fn(t.shape(y), |_| rng.gen_range(-1.0..1.0)));
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

/// Uniform draws inside the default grid at least 5% of a knot spacing away
/// from every knot. Next to a knot the cubic tails fall below 1e-8, under the
/// central-difference noise floor.
fn off_knot(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let grid = KnotGrid::default();
    Tensor::from_fn(shape, |_| {
        let span = rng.gen_range(0..grid.intervals()) as f64;
        grid.t_min() + (span + rng.gen_range(0.05..0.95)) * grid.spacing()
    })
}

/// B-spline KAN layer at `configurations` random layers, inputs kept off
/// the knots.
pub fn kan_suite(configurations: usize) -> Result<GradReport> {
    let mut worst: f64 = 0.0;
    for seed in 0..configurations as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let grid = KnotGrid::default();
        let (d_in, d_out) = (rng.gen_range(2..6), rng.gen_range(2..6));
        let layer = KanLayer::from_parts(
            grid.clone(),
            uniform(&[d_in, d_out, grid.basis_len()], -1.0, 1.0, &mut rng),
            uniform(&[d_in, d_out], -1.0, 1.0, &mut rng),
            uniform(&[d_in, d_out], -1.0, 1.0, &mut rng),
        )?;
        let x = off_knot(&[3, d_in], &mut rng);
        worst = worst.max(grad_check(
            |t, v| {
                let vars = layer.bind(t, false);
                let y = layer.forward(t, &vars, v)?;
                weighted(t, y, seed)
            },
            &x,
            STEP,
        )?);
        for which in 0..3 {
            let target = layer.params()[which].1.clone();
            worst = worst.max(grad_check(
                |t, v| {
                    let mut vars = layer.bind(t, false);
                    match which {
                        0 => vars.coeffs = v,
                        1 => vars.base_weight = v,
                        _ => vars.spline_weight = v,
                    }
                    let xv = t.constant(x.clone());
                    let y = layer.forward(t, &vars, xv)?;
                    weighted(t, y, seed)
                },
                &target,
                LINEAR_STEP,
            )?);
        }
    }
    Ok(GradReport {
        module: "kan",
        configurations,
        worst,
        tolerance: LAYER_TOLERANCE,
    })
}

/// Draws inputs whose denominator polynomial stays clear of zero, where
/// `|·|` has its kink.
fn away_from_kink(layer: &GrKanLayer, rows: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let inputs = layer.inputs();
    let mut data = Vec::with_capacity(rows * inputs);
    for _ in 0..rows {
        for ch in 0..inputs {
            let r = layer.rational(layer.group_of(ch));
            loop {
                let x: f64 = rng.gen_range(-3.0..3.0);
                let s: f64 = r
                    .denominator()
                    .iter()
                    .enumerate()
                    .map(|(j, b)| b * x.powi(j as i32 + 1))
                    .sum();
                if s.abs() > 1.1e-3 {
                    data.push(x);
                    break;
                }
            }
        }
    }
    Tensor::new(vec![rows, inputs], data)
}

/// GR-KAN layer at `configurations` random layers.
pub fn grkan_suite(configurations: usize) -> Result<GradReport> {
    let mut worst: f64 = 0.0;
    for seed in 0..configurations as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let groups = [1, 2, 4][seed as usize % 3];
        let inputs = groups * rng.gen_range(1..4);
        let outputs = rng.gen_range(2..5);
        let rationals: Vec<RationalFn> = (0..groups)
            .map(|_| {
                RationalFn::new(
                    (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect::<Result<_>>()?;
        let weight = uniform(&[inputs, outputs], -1.0, 1.0, &mut rng);
        let bias = Some(uniform(&[outputs], -1.0, 1.0, &mut rng));
        let layer = GrKanLayer::new(groups, &rationals, weight, bias)?;
        let x = away_from_kink(&layer, 3, &mut rng)?;
        worst = worst.max(grad_check(
            |t, v| {
                let vars = layer.bind(t, false);
                let y = layer.forward(t, &vars, v)?;
                weighted(t, y, seed)
            },
            &x,
            STEP,
        )?);
        // the denominator is the only nonlinear parameter
        for (which, h) in [(0, LINEAR_STEP), (1, STEP), (2, LINEAR_STEP), (3, LINEAR_STEP)] {
            let target = layer.params()[which].1.clone();
            worst = worst.max(grad_check(
                |t, v| {
                    let mut vars = layer.bind(t, false);
                    match which {
                        0 => vars.numerator = v,
                        1 => vars.denominator = v,
                        2 => vars.weight = v,
                        _ => vars.bias = Some(v),
                    }
                    let xv = t.constant(x.clone());
                    let y = layer.forward(t, &vars, xv)?;
                    weighted(t, y, seed)
                },
                &target,
                h,
            )?);
        }
    }
    Ok(GradReport {
        module: "grkan",
        configurations,
        worst,
        tolerance: LAYER_TOLERANCE,
    })
}

/// Tiny model with every projector kind in turn: 6 → 8 wide, one block.
pub fn micro_config(kind: ProjectorKind) -> ModelConfig {
    ModelConfig {
        projector: ProjectorConfig {
            kind,
            input_dim: 6,
            output_dim: 8,
        },
        conformer: ConformerConfig {
            blocks: 1,
            dim: 8,
            heads: 2,
            kernel_size: 3,
            ff_expansion: 2,
            dropout: 0.0,
            positional_encoding: false,
        },
    }
}

/// Steps tried per parameter tensor; the smaller error is kept. Tiny
/// gradients need the wider step to clear rounding noise, and parameters
/// feeding a layer norm at small scale need the narrower one.
const PARAM_STEPS: [f64; 2] = [1e-5, 1e-4];

/// Cross-entropy of a micro model, checked against off-knot features and
/// every parameter tensor. The attention key bias is skipped: softmax ignores a
/// per-row shift, so its true gradient is exactly zero and finite
/// differences there measure only rounding.
pub fn model_suite(configurations: usize) -> Result<GradReport> {
    let kinds = [
        ProjectorKind::Mlp,
        ProjectorKind::GrKan {
            groups: 2,
            num_order: 5,
            den_order: 4,
            bias: true,
            init: GrKanInit::Silu,
        },
        ProjectorKind::Kan {
            grid: KnotGrid::default(),
        },
    ];
    let loss = |model: &SsdModel, t: &mut Tape, vars: &[Var], x: Var| {
        let logits = model.forward(t, vars, x, &mut ForwardCtx::eval())?;
        t.cross_entropy(logits, &[0, 1])
    };
    let mut worst: f64 = 0.0;
    for seed in 0..configurations as u64 {
        let model = SsdModel::new(micro_config(kinds[seed as usize % 3].clone()), 3000 + seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let x = off_knot(&[2, 3, 6], &mut rng);
        worst = worst.max(grad_check(
            |t, v| {
                let vars = model.bind(t, false);
                loss(&model, t, &vars, v)
            },
            &x,
            STEP,
        )?);
        for (which, (name, value)) in model.params().iter().enumerate() {
            if name.ends_with("key.bias") {
                continue;
            }
            let mut best = f64::INFINITY;
            for h in PARAM_STEPS {
                best = best.min(grad_check(
                    |t, v| {
                        let mut vars = model.bind(t, false);
                        vars[which] = v;
                        let xv = t.constant(x.clone());
                        loss(&model, t, &vars, xv)
                    },
                    value,
                    h,
                )?);
            }
            worst = worst.max(best);
        }
    }
    Ok(GradReport {
        module: "model",
        configurations,
        worst,
        tolerance: MODEL_TOLERANCE,
    })
}
