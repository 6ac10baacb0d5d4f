//! Group-rational KAN layers.
//!
//! Input channels are split into `k` equal groups; each group owns one
//! rational activation in the pole-free form `P(x) / (1 + |S(x)|)` shared by
//! all of its channels. The activated channels are then combined by a plain
//! scalar weight matrix, which is why a linear layer's weights can be loaded
//! into a GR-KAN layer directly.

mod fit;
mod layer;
mod rational;

pub use fit::{fit_rational_to_function, RationalFit};
pub use layer::{
    activation_gain, GrKanLayer, GrKanLayerVars, ImportActivation, FIT_DOMAIN, FIT_SAMPLES, GAIN_SAMPLES, GAIN_SEED,
};
pub use rational::RationalFn;

/// Default numerator order.
pub const DEFAULT_NUM_ORDER: usize = 5;
/// Default denominator order.
pub const DEFAULT_DEN_ORDER: usize = 4;
pub const DEFAULT_GROUPS: usize = 8;
