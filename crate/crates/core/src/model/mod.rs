//! The synthetic speech detector: a frame-wise projector (linear + SeLU
//! baseline, GR-KAN or B-spline KAN), a learnable classification token, a
//! stack of Conformer blocks and a two-way linear head.
//!
//! The token sits at sequence position [`CLS_INDEX`] (0). Without positional
//! encoding attention treats the other positions symmetrically, so the choice
//! of slot does not change what the model can learn.

mod config;
mod conformer;
mod layers;
mod projector;
mod ssd;

pub use config::{ConformerConfig, GrKanInit, ModelConfig, ProjectorConfig, ProjectorKind};
pub use conformer::{sinusoidal_encoding, ConformerBlock, ConvModule, FeedForward, SelfAttention};
pub use layers::{ForwardCtx, Linear, Norm};
pub use projector::Projector;
pub use ssd::{detection_scores, SsdModel, BONAFIDE, CLS_INDEX, SPOOF};
