use std::fmt::Write;

use crate::error::{Error, Result};
use crate::kan::KnotGrid;
use crate::keyvalue::KeyValues;
use crate::model::{ConformerConfig, GrKanInit, ModelConfig, ProjectorConfig, ProjectorKind};

use super::optim::AdamConfig;

/// How the top-N dev checkpoints are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Averaging {
    /// Elementwise mean of the parameters; one model.
    Params,
    /// Keep every member and average their detection scores.
    Scores,
}

impl Averaging {
    pub fn name(self) -> &'static str {
        match self {
            Averaging::Params => "params",
            Averaging::Scores => "scores",
        }
    }
}

impl std::str::FromStr for Averaging {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "params" => Ok(Averaging::Params),
            "scores" => Ok(Averaging::Scores),
            _ => Err(()),
        }
    }
}

fn init_name(init: GrKanInit) -> &'static str {
    match init {
        GrKanInit::Silu => "silu",
        GrKanInit::Identity => "identity",
        GrKanInit::Mlp => "mlp",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub feature_seed: u64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub top_n: usize,
    pub averaging: Averaging,
    /// Pad/trim length of training and fixed-mode trials, in samples.
    pub target_samples: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults for a projector kind.
    pub fn desk(kind: ProjectorKind) -> Self {
        TrainConfig {
            model: ModelConfig::desk(kind, 128),
            feature_seed: 7,
            adam: AdamConfig::default(),
            batch_size: 16,
            max_epochs: 15,
            patience: 4,
            top_n: 3,
            averaging: Averaging::Params,
            target_samples: 8000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", a.lr)));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(a.eps > 0.0) || !(a.weight_decay >= 0.0) {
            return Err(Error::Config(
                "eps must be positive and weight_decay non-negative".into(),
            ));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.target_samples < super::features::FRAME_LEN {
            return Err(Error::Config(format!(
                "target_samples must cover one {}-sample frame, got {}",
                super::features::FRAME_LEN,
                self.target_samples
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.top_n == 0 {
            return Err(Error::Config("batch_size, max_epochs and top_n must be >= 1".into()));
        }
        Ok(())
    }

    /// Parses `key = value` text on top of [`TrainConfig::desk`] defaults;
    /// `projector` is required.
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let kind_name: String = kv.require("projector")?;
        let kind = match kind_name.as_str() {
            "mlp" => ProjectorKind::Mlp,
            "grkan" => ProjectorKind::grkan_default(),
            "kan" => ProjectorKind::Kan {
                grid: KnotGrid::default(),
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown projector `{other}` (expected mlp, grkan or kan)"
                )))
            }
        };
        let d = TrainConfig::desk(kind);
        let grkan_keys = [
            "grkan_groups",
            "grkan_num_order",
            "grkan_den_order",
            "grkan_bias",
            "grkan_init",
        ];
        let kan_keys = ["kan_grid_min", "kan_grid_max", "kan_intervals", "kan_order"];
        let foreign: Vec<&str> = match kind_name.as_str() {
            "mlp" => grkan_keys.iter().chain(&kan_keys).copied().collect(),
            "grkan" => kan_keys.to_vec(),
            _ => grkan_keys.to_vec(),
        };
        for key in &foreign {
            if kv.take::<String>(key)?.is_some() {
                return Err(Error::Config(format!(
                    "`{key}` does not apply to projector `{kind_name}`"
                )));
            }
        }
        let kind = match d.model.projector.kind {
            ProjectorKind::Mlp => ProjectorKind::Mlp,
            ProjectorKind::GrKan {
                groups,
                num_order,
                den_order,
                bias,
                init,
            } => ProjectorKind::GrKan {
                groups: kv.take_or("grkan_groups", groups)?,
                num_order: kv.take_or("grkan_num_order", num_order)?,
                den_order: kv.take_or("grkan_den_order", den_order)?,
                bias: kv.take_or("grkan_bias", bias)?,
                init: match kv.take::<String>("grkan_init")?.as_deref() {
                    None => init,
                    Some("silu") => GrKanInit::Silu,
                    Some("identity") => GrKanInit::Identity,
                    Some("mlp") => GrKanInit::Mlp,
                    Some(other) => {
                        return Err(Error::Config(format!(
                            "unknown grkan_init `{other}` (expected silu, identity or mlp)"
                        )))
                    }
                },
            },
            ProjectorKind::Kan { grid } => ProjectorKind::Kan {
                grid: KnotGrid::new(
                    kv.take_or("kan_grid_min", grid.t_min())?,
                    kv.take_or("kan_grid_max", grid.t_max())?,
                    kv.take_or("kan_intervals", grid.intervals())?,
                    kv.take_or("kan_order", grid.order())?,
                )?,
            },
        };
        let conf = &d.model.conformer;
        let dim = kv.take_or("model_dim", conf.dim)?;
        let model = ModelConfig {
            projector: ProjectorConfig {
                kind,
                input_dim: kv.take_or("feature_dim", d.model.projector.input_dim)?,
                output_dim: dim,
            },
            conformer: ConformerConfig {
                blocks: kv.take_or("blocks", conf.blocks)?,
                dim,
                heads: kv.take_or("heads", conf.heads)?,
                kernel_size: kv.take_or("kernel_size", conf.kernel_size)?,
                ff_expansion: kv.take_or("ff_expansion", conf.ff_expansion)?,
                dropout: kv.take_or("dropout", conf.dropout)?,
                positional_encoding: kv.take_or("positional_encoding", conf.positional_encoding)?,
            },
        };
        let cfg = TrainConfig {
            model,
            feature_seed: kv.take_or("feature_seed", d.feature_seed)?,
            adam: AdamConfig {
                lr: kv.take_or("lr", d.adam.lr)?,
                beta1: kv.take_or("beta1", d.adam.beta1)?,
                beta2: kv.take_or("beta2", d.adam.beta2)?,
                eps: kv.take_or("eps", d.adam.eps)?,
                weight_decay: kv.take_or("weight_decay", d.adam.weight_decay)?,
            },
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            max_epochs: kv.take_or("max_epochs", d.max_epochs)?,
            patience: kv.take_or("patience", d.patience)?,
            top_n: kv.take_or("top_n", d.top_n)?,
            averaging: kv.take_or("averaging", d.averaging)?,
            target_samples: kv.take_or("target_samples", d.target_samples)?,
            seed: kv.take_or("seed", d.seed)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_config_text(&self) -> String {
        let m = &self.model;
        let c = &m.conformer;
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(s, "{k} = {v}").unwrap();
        };
        put("projector", &m.projector.kind.name());
        match &m.projector.kind {
            ProjectorKind::Mlp => {}
            ProjectorKind::GrKan {
                groups,
                num_order,
                den_order,
                bias,
                init,
            } => {
                put("grkan_groups", groups);
                put("grkan_num_order", num_order);
                put("grkan_den_order", den_order);
                put("grkan_bias", bias);
                put("grkan_init", &init_name(*init));
            }
            ProjectorKind::Kan { grid } => {
                put("kan_grid_min", &grid.t_min());
                put("kan_grid_max", &grid.t_max());
                put("kan_intervals", &grid.intervals());
                put("kan_order", &grid.order());
            }
        }
        put("feature_dim", &m.projector.input_dim);
        put("feature_seed", &self.feature_seed);
        put("model_dim", &c.dim);
        put("blocks", &c.blocks);
        put("heads", &c.heads);
        put("kernel_size", &c.kernel_size);
        put("ff_expansion", &c.ff_expansion);
        put("dropout", &c.dropout);
        put("positional_encoding", &c.positional_encoding);
        put("lr", &self.adam.lr);
        put("beta1", &self.adam.beta1);
        put("beta2", &self.adam.beta2);
        put("eps", &self.adam.eps);
        put("weight_decay", &self.adam.weight_decay);
        put("batch_size", &self.batch_size);
        put("max_epochs", &self.max_epochs);
        put("patience", &self.patience);
        put("top_n", &self.top_n);
        put("averaging", &self.averaging.name());
        put("target_samples", &self.target_samples);
        put("seed", &self.seed);
        s
    }
}
