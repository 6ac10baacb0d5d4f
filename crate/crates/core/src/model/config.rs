use crate::error::{Error, Result};
use crate::grkan::{DEFAULT_DEN_ORDER, DEFAULT_GROUPS, DEFAULT_NUM_ORDER};
use crate::kan::KnotGrid;

/// Starting point of a GR-KAN projector trained from scratch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrKanInit {
    /// Variance-preserving weights with every group's rational fitted to SiLU.
    Silu,
    /// Variance-preserving weights with identity rationals.
    Identity,
    /// A freshly initialized linear layer imported through `load_from_mlp`,
    /// so the projector starts as the MLP baseline with the same seed.
    Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProjectorKind {
    Mlp,
    GrKan {
        groups: usize,
        num_order: usize,
        den_order: usize,
        bias: bool,
        init: GrKanInit,
    },
    Kan {
        grid: KnotGrid,
    },
}

impl ProjectorKind {
    pub fn grkan_default() -> Self {
        ProjectorKind::GrKan {
            groups: DEFAULT_GROUPS,
            num_order: DEFAULT_NUM_ORDER,
            den_order: DEFAULT_DEN_ORDER,
            bias: true,
            init: GrKanInit::Silu,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProjectorKind::Mlp => "mlp",
            ProjectorKind::GrKan { .. } => "grkan",
            ProjectorKind::Kan { .. } => "kan",
        }
    }
}

/// Per-frame projection `D → D′` followed by SeLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorConfig {
    pub kind: ProjectorKind,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl ProjectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Validation(format!(
                "projector widths must be positive, got D={} D'={}",
                self.input_dim, self.output_dim
            )));
        }
        if let ProjectorKind::GrKan { groups, num_order, .. } = &self.kind {
            if *groups == 0 || self.input_dim % groups != 0 {
                return Err(Error::Validation(format!(
                    "GR-KAN group count {groups} must divide D={}",
                    self.input_dim
                )));
            }
            if *num_order == 0 {
                return Err(Error::Validation("GR-KAN numerator order must be >= 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformerConfig {
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
    pub kernel_size: usize,
    pub ff_expansion: usize,
    pub dropout: f64,
    /// Adds a fixed sinusoidal encoding to the projected frames.
    pub positional_encoding: bool,
}

impl ConformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::Validation("need at least one Conformer block".into()));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Validation(format!(
                "width {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Validation(format!(
                "conv kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.ff_expansion == 0 {
            return Err(Error::Validation("feed-forward expansion must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub projector: ProjectorConfig,
    pub conformer: ConformerConfig,
}

impl ModelConfig {
    /// Desk-scale defaults for the given projector kind and feature width.
    pub fn desk(kind: ProjectorKind, input_dim: usize) -> Self {
        ModelConfig {
            projector: ProjectorConfig {
                kind,
                input_dim,
                output_dim: 64,
            },
            conformer: ConformerConfig {
                blocks: 2,
                dim: 64,
                heads: 4,
                kernel_size: 15,
                ff_expansion: 4,
                dropout: 0.1,
                positional_encoding: false,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.projector.validate()?;
        self.conformer.validate()?;
        if self.projector.output_dim != self.conformer.dim {
            return Err(Error::Validation(format!(
                "projector emits width {} but the encoder expects {}",
                self.projector.output_dim, self.conformer.dim
            )));
        }
        Ok(())
    }
}
