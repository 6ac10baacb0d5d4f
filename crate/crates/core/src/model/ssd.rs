use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{GrKanInit, ModelConfig, ProjectorKind};
use super::conformer::{sinusoidal_encoding, ConformerBlock};
use super::layers::{Cursor, ForwardCtx, Linear};
use super::projector::Projector;
use crate::error::{Error, Result};
use crate::grkan::{GrKanLayer, ImportActivation};
use crate::tensor::{Tape, Tensor, Var};

/// Sequence index of the classification token.
pub const CLS_INDEX: usize = 0;
/// Class index of bona fide speech in the logits.
pub const BONAFIDE: usize = 0;
/// Class index of spoofed speech in the logits.
pub const SPOOF: usize = 1;

/// Projector, classification token, Conformer stack and a two-way linear
/// head read from the token's final state.
#[derive(Clone, Debug, PartialEq)]
pub struct SsdModel {
    config: ModelConfig,
    pub projector: Projector,
    /// `[D′]`
    pub cls: Tensor,
    pub blocks: Vec<ConformerBlock>,
    pub head: Linear,
}

impl SsdModel {
    /// Seeded initialization; the same config and seed give the same model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projector = Projector::init(&config.projector, &mut rng)?;
        let d = config.conformer.dim;
        let token = Normal::new(0.0, 0.02).unwrap();
        let cls = Tensor::from_fn(&[d], |_| token.sample(&mut rng));
        let blocks = (0..config.conformer.blocks)
            .map(|_| ConformerBlock::init(&config.conformer, &mut rng))
            .collect::<Result<_>>()?;
        let head = Linear::init(d, 2, &mut rng);
        Ok(SsdModel {
            config,
            projector,
            cls,
            blocks,
            head,
        })
    }

    /// Copy of an MLP-projector model whose projector is replaced by a GR-KAN
    /// layer carrying the same weights and identity rationals.
    pub fn with_grkan_projector(&self, groups: usize, num_order: usize, den_order: usize) -> Result<Self> {
        let Projector::Mlp(lin) = &self.projector else {
            return Err(Error::Validation(format!(
                "weight import needs an mlp projector, found {}",
                self.projector.kind_name()
            )));
        };
        let layer = GrKanLayer::load_from_mlp(
            &lin.weight,
            Some(&lin.bias),
            groups,
            (num_order, den_order),
            ImportActivation::Identity,
        )?;
        let mut out = self.clone();
        out.config.projector.kind = ProjectorKind::GrKan {
            groups,
            num_order,
            den_order,
            bias: true,
            init: GrKanInit::Mlp,
        };
        out.projector = Projector::GrKan(layer);
        Ok(out)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.projector.input_dim()
    }

    /// Every trainable tensor with a dotted name, in canonical order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.projector.collect("projector", &mut out);
        out.push(("cls".to_string(), &self.cls));
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&format!("blocks.{i}"), &mut out);
        }
        self.head.collect("head", &mut out);
        out
    }

    /// Mutable view in the order of [`SsdModel::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.projector.collect_mut(&mut out);
        out.push(&mut self.cls);
        for b in &mut self.blocks {
            b.collect_mut(&mut out);
        }
        self.head.collect_mut(&mut out);
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces every parameter, checking names and shapes.
    pub fn set_params(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = self
            .params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != values.len() {
            return Err(Error::dim(format!(
                "model has {} parameter tensors, got {}",
                expected.len(),
                values.len()
            )));
        }
        for ((name, shape), (got_name, t)) in expected.iter().zip(&values) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::dim(format!(
                    "parameter {name} {shape:?} does not match {got_name} {:?}",
                    t.shape()
                )));
            }
        }
        for (slot, (_, t)) in self.params_mut().into_iter().zip(values) {
            *slot = t;
        }
        Ok(())
    }

    /// Registers all parameters on `tape` in canonical order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone(), trainable))
            .collect()
    }

    /// `[B×T×D]` features → `[B×2]` logits on a tape.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], features: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let shape = tape.shape(features).to_vec();
        if shape.len() != 3 || shape[2] != self.input_dim() {
            return Err(Error::dim(format!(
                "model expects features [B×T×{}], got {:?}",
                self.input_dim(),
                shape
            )));
        }
        let mut cur = Cursor::new(vars);
        let mut x = self.projector.forward(tape, &mut cur, features)?;
        if self.config.conformer.positional_encoding {
            let (b, t, d) = (shape[0], shape[1], self.config.conformer.dim);
            let table = sinusoidal_encoding(t, d);
            let tiled = Tensor::from_fn(&[b, t, d], |i| table.data()[i % (t * d)]);
            let pe = tape.constant(tiled);
            x = tape.add(x, pe)?;
        }
        let cls = cur.next();
        let mut x = tape.prepend_row(x, cls)?;
        for block in &self.blocks {
            x = block.forward(tape, &mut cur, ctx, x)?;
        }
        let token = tape.select_row(x, CLS_INDEX)?;
        let logits = self.head.forward(tape, &mut cur, token)?;
        debug_assert!(cur.finished());
        Ok(logits)
    }

    fn eval_tape(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(features.clone());
        let y = self.forward(&mut tape, &vars, x, &mut ForwardCtx::eval())?;
        Ok(tape.value(y).clone())
    }

    /// Projected frames `[B×T×D′]`.
    pub fn project(&self, features: &Tensor) -> Result<Tensor> {
        self.projector.apply(features)
    }

    /// `[B×T×D′]` → `[B×(T+1)×D′]` with the token at [`CLS_INDEX`].
    pub fn prepend_cls(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let cls = tape.constant(self.cls.clone());
        let y = tape.prepend_row(xv, cls)?;
        Ok(tape.value(y).clone())
    }

    /// Head logits from encoder output `[B×(T+1)×D′]`.
    pub fn classify(&self, encoded: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(encoded.clone());
        let w = tape.constant(self.head.weight.clone());
        let b = tape.constant(self.head.bias.clone());
        let token = tape.select_row(x, CLS_INDEX)?;
        let y = self.head.forward(&mut tape, &mut Cursor::new(&[w, b]), token)?;
        Ok(tape.value(y).clone())
    }

    /// Evaluation-mode logits `[B×2]`.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        self.eval_tape(features)
    }

    /// One detection score per trial; higher means more bona fide.
    pub fn scores(&self, features: &Tensor) -> Result<Vec<f64>> {
        Ok(detection_scores(&self.logits(features)?))
    }
}

/// `logit(bonafide) − logit(spoof)` per row of `[B×2]` logits.
pub fn detection_scores(logits: &Tensor) -> Vec<f64> {
    logits.data().chunks(2).map(|row| row[BONAFIDE] - row[SPOOF]).collect()
}
