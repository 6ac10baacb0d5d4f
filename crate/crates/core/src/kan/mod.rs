//! B-spline Kolmogorov-Arnold layers.
//!
//! A layer maps `d_in` inputs to `d_out` outputs by placing a learnable
//! univariate function on every edge and summing per output. Each edge
//! function mixes a fixed SiLU branch with a cubic (by default) B-spline on a
//! uniform grid shared by the whole layer. Widths are free hyperparameters.

mod layer;
mod spline;

pub use layer::{KanLayer, KanLayerVars, KanStack};
pub use spline::{bspline_basis, cox_de_boor, phi_eval, spline_eval, spline_eval_with_derivative, KnotGrid};

pub const DEFAULT_GRID_MIN: f64 = -3.0;
pub const DEFAULT_GRID_MAX: f64 = 3.0;
pub const DEFAULT_INTERVALS: usize = 5;
pub const DEFAULT_ORDER: usize = 3;

impl Default for KnotGrid {
    fn default() -> Self {
        KnotGrid::new(DEFAULT_GRID_MIN, DEFAULT_GRID_MAX, DEFAULT_INTERVALS, DEFAULT_ORDER)
            .expect("default grid is valid")
    }
}
