//! Kolmogorov-Arnold layers (B-spline and group-rational) on a small
//! reverse-mode autodiff tape, a Conformer-based synthetic speech detector
//! that uses them as its feature projector, countermeasure metrics, and the
//! desk-scale training harness around all of it.

pub mod error;
pub mod eval;
pub mod grkan;
pub mod harness;
pub mod kan;
mod keyvalue;
mod linalg;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
pub use grkan::{GrKanLayer, RationalFn};
pub use kan::{KanLayer, KnotGrid};
pub use model::{ModelConfig, SsdModel};
pub use tensor::{grad_check, Tape, Tensor, Var};
