use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{GrKanInit, ProjectorConfig, ProjectorKind};
use super::layers::{Cursor, Linear};
use crate::error::{Error, Result};
use crate::grkan::{
    fit_rational_to_function, GrKanLayer, GrKanLayerVars, ImportActivation, RationalFn, FIT_DOMAIN, FIT_SAMPLES,
};
use crate::kan::{KanLayer, KanLayerVars};
use crate::tensor::{silu, Tape, Tensor, Var};

/// Frame-wise projector `X → SeLU(f(X))`.
#[derive(Clone, Debug, PartialEq)]
pub enum Projector {
    Mlp(Linear),
    GrKan(GrKanLayer),
    Kan(KanLayer),
}

impl Projector {
    pub fn init(cfg: &ProjectorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, d_out) = (cfg.input_dim, cfg.output_dim);
        Ok(match &cfg.kind {
            ProjectorKind::Mlp => Projector::Mlp(Linear::init(d, d_out, rng)),
            ProjectorKind::GrKan {
                groups,
                num_order,
                den_order,
                bias,
                init,
            } => {
                let layer = match init {
                    GrKanInit::Mlp => {
                        let lin = Linear::init(d, d_out, rng);
                        GrKanLayer::load_from_mlp(
                            &lin.weight,
                            bias.then_some(&lin.bias),
                            *groups,
                            (*num_order, *den_order),
                            ImportActivation::Identity,
                        )?
                    }
                    GrKanInit::Identity | GrKanInit::Silu => {
                        let activation = if *init == GrKanInit::Silu {
                            fit_rational_to_function(silu, *num_order, *den_order, FIT_DOMAIN, FIT_SAMPLES)?.rational
                        } else {
                            RationalFn::identity(*num_order, *den_order)
                        };
                        GrKanLayer::variance_preserving(d, d_out, *groups, &activation, *bias, rng.gen())?
                    }
                };
                Projector::GrKan(layer)
            }
            ProjectorKind::Kan { grid } => Projector::Kan(KanLayer::init(d, d_out, grid.clone(), rng.gen())),
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Projector::Mlp(l) => l.inputs(),
            Projector::GrKan(l) => l.inputs(),
            Projector::Kan(l) => l.d_in(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Projector::Mlp(l) => l.outputs(),
            Projector::GrKan(l) => l.outputs(),
            Projector::Kan(l) => l.d_out(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Projector::Mlp(_) => "mlp",
            Projector::GrKan(_) => "grkan",
            Projector::Kan(_) => "kan",
        }
    }

    /// `[B×T×D] → [B×T×D′]`, applied independently at every time step.
    pub(crate) fn forward(&self, tape: &mut Tape, cur: &mut Cursor, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.input_dim() {
            return Err(Error::dim(format!(
                "projector expects [B×T×{}], got {:?}",
                self.input_dim(),
                shape
            )));
        }
        let (b, t) = (shape[0], shape[1]);
        let flat = tape.reshape(x, &[b * t, shape[2]])?;
        let y = match self {
            Projector::Mlp(l) => l.forward(tape, cur, flat)?,
            Projector::GrKan(l) => {
                let numerator = cur.next();
                let denominator = cur.next();
                let weight = cur.next();
                let bias = l.bias.as_ref().map(|_| cur.next());
                let vars = GrKanLayerVars {
                    numerator,
                    denominator,
                    weight,
                    bias,
                };
                l.forward(tape, &vars, flat)?
            }
            Projector::Kan(l) => {
                let v = cur.take(3);
                let vars = KanLayerVars {
                    coeffs: v[0],
                    base_weight: v[1],
                    spline_weight: v[2],
                };
                l.forward(tape, &vars, flat)?
            }
        };
        let y = tape.selu(y);
        tape.reshape(y, &[b, t, self.output_dim()])
    }

    /// Tape-free projection of `[B×T×D]` features.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut params = Vec::new();
        self.collect("projector", &mut params);
        let vars: Vec<Var> = params.into_iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &mut Cursor::new(&vars), xv)?;
        Ok(tape.value(y).clone())
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        match self {
            Projector::Mlp(l) => l.collect(prefix, out),
            Projector::GrKan(l) => out.extend(l.params().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t))),
            Projector::Kan(l) => out.extend(l.params().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t))),
        }
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        match self {
            Projector::Mlp(l) => l.collect_mut(out),
            Projector::GrKan(l) => out.extend(l.params_mut()),
            Projector::Kan(l) => out.extend(l.params_mut()),
        }
    }
}
