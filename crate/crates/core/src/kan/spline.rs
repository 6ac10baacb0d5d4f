//! Uniform knot grids and B-spline basis evaluation.

use crate::error::{Error, Result};
use crate::tensor::silu;

/// Uniform knot vector over `[t_min, t_max]` with `intervals` interior
/// intervals, extended by `order` knots past each end so that every point of
/// the domain is covered by `order + 1` full-degree basis functions.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotGrid {
    t_min: f64,
    t_max: f64,
    intervals: usize,
    order: usize,
    knots: Vec<f64>,
}

impl KnotGrid {
    pub fn new(t_min: f64, t_max: f64, intervals: usize, order: usize) -> Result<Self> {
        if !(t_min.is_finite() && t_max.is_finite() && t_min < t_max) {
            return Err(Error::Grid(format!(
                "domain [{t_min}, {t_max}] must be finite with t_min < t_max"
            )));
        }
        if intervals == 0 {
            return Err(Error::Grid("need at least one interval".into()));
        }
        let h = (t_max - t_min) / intervals as f64;
        let knots = (0..intervals + 2 * order + 1)
            .map(|j| t_min + (j as f64 - order as f64) * h)
            .collect();
        Ok(KnotGrid {
            t_min,
            t_max,
            intervals,
            order,
            knots,
        })
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Polynomial degree of the basis.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions, `G + k`.
    pub fn basis_len(&self) -> usize {
        self.intervals + self.order
    }

    pub fn spacing(&self) -> f64 {
        (self.t_max - self.t_min) / self.intervals as f64
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.t_min, self.t_max)
    }

    /// Nonzero basis values (and their derivatives w.r.t. `x`) at a clamped
    /// point. Returns the index of the first nonzero basis function; entries
    /// `0..=order` of the buffers are filled.
    ///
    /// The derivative is zero when `x` lies outside the domain.
    pub(crate) fn eval_local(&self, x: f64, values: &mut [f64], derivs: &mut [f64]) -> usize {
        let k = self.order;
        let inside = x >= self.t_min && x <= self.t_max;
        let xc = self.clamp(x);
        let t = &self.knots;
        // span index j with t[j] <= x < t[j+1], j in [k, G + k - 1]
        let h = self.spacing();
        let rel = ((xc - self.t_min) / h).floor() as isize;
        let mut j = (rel.max(0) as usize).min(self.intervals - 1) + k;
        // guard against rounding at interval boundaries
        while j > k && xc < t[j] {
            j -= 1;
        }
        while j + 1 < k + self.intervals && xc >= t[j + 1] {
            j += 1;
        }

        let mut left = [0.0f64; 16];
        let mut right = [0.0f64; 16];
        assert!(k < 16, "spline order above 15 unsupported");
        values[0] = 1.0;
        let mut lower = [0.0f64; 16];
        for d in 1..=k {
            if d == k {
                lower[..k].copy_from_slice(&values[..k]);
            }
            left[d] = xc - t[j + 1 - d];
            right[d] = t[j + d] - xc;
            let mut saved = 0.0;
            for r in 0..d {
                let temp = values[r] / (right[r + 1] + left[d - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[d - r] * temp;
            }
            values[d] = saved;
        }

        let start = j - k;
        if k == 0 || !inside {
            derivs[..=k].iter_mut().for_each(|d| *d = 0.0);
            return start;
        }
        // lower[r] holds B_{start + 1 + r, k-1} for r in 0..k
        let kf = k as f64;
        for r in 0..=k {
            let i = start + r;
            let a = if r >= 1 {
                kf / (t[i + k] - t[i]) * lower[r - 1]
            } else {
                0.0
            };
            let b = if r < k {
                kf / (t[i + k + 1] - t[i + 1]) * lower[r]
            } else {
                0.0
            };
            derivs[r] = a - b;
        }
        start
    }
}

/// All `G + k` basis values at `x` (clamped to the grid domain).
pub fn bspline_basis(x: f64, grid: &KnotGrid) -> Vec<f64> {
    let k = grid.order();
    let mut vals = vec![0.0; k + 1];
    let mut ders = vec![0.0; k + 1];
    let start = grid.eval_local(x, &mut vals, &mut ders);
    let mut out = vec![0.0; grid.basis_len()];
    out[start..start + k + 1].copy_from_slice(&vals);
    out
}

/// Textbook Cox–de Boor recursion on an arbitrary non-decreasing knot
/// vector. Returns the `knots.len() - degree - 1` basis values at `x` using
/// half-open support intervals.
pub fn cox_de_boor(knots: &[f64], degree: usize, x: f64) -> Vec<f64> {
    assert!(knots.len() > degree + 1, "knot vector too short for degree");
    let mut basis: Vec<f64> = knots
        .windows(2)
        .map(|w| if w[0] <= x && x < w[1] { 1.0 } else { 0.0 })
        .collect();
    for d in 1..=degree {
        let next: Vec<f64> = (0..knots.len() - d - 1)
            .map(|i| {
                let mut v = 0.0;
                let den_l = knots[i + d] - knots[i];
                if den_l > 0.0 {
                    v += (x - knots[i]) / den_l * basis[i];
                }
                let den_r = knots[i + d + 1] - knots[i + 1];
                if den_r > 0.0 {
                    v += (knots[i + d + 1] - x) / den_r * basis[i + 1];
                }
                v
            })
            .collect();
        basis = next;
    }
    basis
}

fn check_coeffs(coeffs: &[f64], grid: &KnotGrid) -> Result<()> {
    if coeffs.len() != grid.basis_len() {
        return Err(Error::dim(format!(
            "spline needs {} coefficients, got {}",
            grid.basis_len(),
            coeffs.len()
        )));
    }
    Ok(())
}

/// `Σᵢ cᵢ·Bᵢ(x)`.
pub fn spline_eval(x: f64, coeffs: &[f64], grid: &KnotGrid) -> Result<f64> {
    Ok(spline_eval_with_derivative(x, coeffs, grid)?.0)
}

/// Spline value and its derivative w.r.t. `x`. The derivative w.r.t. the
/// coefficients is the basis vector itself ([`bspline_basis`]).
pub fn spline_eval_with_derivative(x: f64, coeffs: &[f64], grid: &KnotGrid) -> Result<(f64, f64)> {
    check_coeffs(coeffs, grid)?;
    let k = grid.order();
    let mut vals = [0.0f64; 16];
    let mut ders = [0.0f64; 16];
    let start = grid.eval_local(x, &mut vals, &mut ders);
    let mut value = 0.0;
    let mut deriv = 0.0;
    for r in 0..=k {
        value += coeffs[start + r] * vals[r];
        deriv += coeffs[start + r] * ders[r];
    }
    Ok((value, deriv))
}

/// One learnable edge activation: `w_b·SiLU(x) + w_s·spline(x)`.
pub fn phi_eval(x: f64, w_b: f64, w_s: f64, coeffs: &[f64], grid: &KnotGrid) -> Result<f64> {
    Ok(w_b * silu(x) + w_s * spline_eval(x, coeffs, grid)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout() {
        let g = KnotGrid::new(-3.0, 3.0, 5, 3).unwrap();
        assert_eq!(g.knots().len(), 5 + 2 * 3 + 1);
        assert_eq!(g.basis_len(), 8);
        assert!(g.knots().windows(2).all(|w| w[1] > w[0]));
        assert!((g.knots()[3] + 3.0).abs() < 1e-15);
        assert!((g.knots()[8] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_grids_are_rejected() {
        assert!(KnotGrid::new(1.0, 1.0, 3, 2).is_err());
        assert!(KnotGrid::new(2.0, 1.0, 3, 2).is_err());
        assert!(KnotGrid::new(0.0, 1.0, 0, 2).is_err());
        assert!(KnotGrid::new(f64::NAN, 1.0, 3, 2).is_err());
    }

    #[test]
    fn degree_zero_indicator() {
        let g = KnotGrid::new(0.0, 2.0, 2, 0).unwrap();
        assert_eq!(g.knots(), &[0.0, 1.0, 2.0]);
        assert_eq!(bspline_basis(0.5, &g), vec![1.0, 0.0]);
        assert_eq!(cox_de_boor(&[0.0, 1.0, 2.0], 0, 0.5), vec![1.0, 0.0]);
        // right end of the domain belongs to the last interval
        assert_eq!(bspline_basis(2.0, &g), vec![0.0, 1.0]);
    }

    #[test]
    fn local_basis_matches_textbook_recursion() {
        for order in 0..=4 {
            let g = KnotGrid::new(-2.0, 3.0, 7, order).unwrap();
            for s in 0..200 {
                let x = -2.0 + 5.0 * (s as f64 + 0.37) / 200.0;
                let fast = bspline_basis(x, &g);
                let slow = cox_de_boor(g.knots(), order, x);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-13, "order {order} x {x}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn out_of_domain_is_clamped_with_zero_slope() {
        let g = KnotGrid::new(-1.0, 1.0, 4, 3).unwrap();
        let c: Vec<f64> = (0..g.basis_len()).map(|i| (i as f64).sin() + 0.3).collect();
        let (v_far, d_far) = spline_eval_with_derivative(25.0, &c, &g).unwrap();
        let (v_edge, _) = spline_eval_with_derivative(1.0, &c, &g).unwrap();
        assert_eq!(v_far, v_edge);
        assert_eq!(d_far, 0.0);
        let (_, d_low) = spline_eval_with_derivative(-7.0, &c, &g).unwrap();
        assert_eq!(d_low, 0.0);
    }

    #[test]
    fn coefficient_length_is_checked() {
        let g = KnotGrid::new(-1.0, 1.0, 4, 3).unwrap();
        assert!(matches!(spline_eval(0.0, &[1.0; 3], &g), Err(Error::Dimension(_))));
        assert!(phi_eval(0.0, 1.0, 1.0, &[1.0; 3], &g).is_err());
    }

    #[test]
    fn phi_degenerate_mixes() {
        let g = KnotGrid::new(-3.0, 3.0, 5, 3).unwrap();
        let c: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.2).collect();
        assert_eq!(phi_eval(0.0, 1.0, 0.0, &c, &g).unwrap(), 0.0);
        for x in [-2.5, -0.3, 0.0, 1.7] {
            assert_eq!(phi_eval(x, 0.0, 1.0, &c, &g).unwrap(), spline_eval(x, &c, &g).unwrap());
        }
    }
}
