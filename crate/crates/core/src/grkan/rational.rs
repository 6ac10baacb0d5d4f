use crate::error::{Error, Result};

/// Rational function in safe form, `P(x) / (1 + |S(x)|)` with
/// `P(x) = Σ_{j=0..m} aⱼxʲ` and `S(x) = Σ_{j=1..n} bⱼxʲ`.
///
/// The denominator is at least one for every real `x`, so the function has no
/// poles.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalFn {
    numerator: Vec<f64>,
    denominator: Vec<f64>,
}

/// Value of a rational and its derivative w.r.t. the input.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RationalPoint {
    pub value: f64,
    pub d_input: f64,
    /// `1 / Q(x)`
    pub inv_q: f64,
    /// `sign(S(x))`, with `0` at the kink
    pub sign_s: f64,
}

impl RationalFn {
    /// `numerator` holds `a₀..a_m` (at least one entry); `denominator` holds
    /// `b₁..b_n` (possibly empty).
    pub fn new(numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        if numerator.is_empty() {
            return Err(Error::Validation("numerator needs at least a₀".into()));
        }
        if numerator.iter().chain(&denominator).any(|c| !c.is_finite()) {
            return Err(Error::Validation("rational coefficients must be finite".into()));
        }
        Ok(RationalFn { numerator, denominator })
    }

    /// `x` with numerator order `m ≥ 1` and denominator order `n`.
    pub fn identity(m: usize, n: usize) -> Self {
        assert!(m >= 1, "identity needs numerator order >= 1");
        let mut numerator = vec![0.0; m + 1];
        numerator[1] = 1.0;
        RationalFn {
            numerator,
            denominator: vec![0.0; n],
        }
    }

    pub fn zero(m: usize, n: usize) -> Self {
        RationalFn {
            numerator: vec![0.0; m + 1],
            denominator: vec![0.0; n],
        }
    }

    pub fn numerator(&self) -> &[f64] {
        &self.numerator
    }

    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }

    /// Numerator order `m`.
    pub fn num_order(&self) -> usize {
        self.numerator.len() - 1
    }

    /// Denominator order `n`.
    pub fn den_order(&self) -> usize {
        self.denominator.len()
    }

    pub fn eval(&self, x: f64) -> f64 {
        eval_parts(&self.numerator, &self.denominator, x).value
    }

    /// Derivative w.r.t. `x` (subgradient 0 for the `|·|` kink).
    pub fn derivative(&self, x: f64) -> f64 {
        eval_parts(&self.numerator, &self.denominator, x).d_input
    }

    /// Gradients w.r.t. the numerator and denominator coefficients at `x`.
    pub fn coefficient_grads(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let pt = eval_parts(&self.numerator, &self.denominator, x);
        let mut da = vec![0.0; self.numerator.len()];
        let mut db = vec![0.0; self.denominator.len()];
        accumulate_coeff_grads(&pt, x, 1.0, &mut da, &mut db);
        (da, db)
    }
}

/// Evaluates the safe rational with explicit power accumulation.
pub(crate) fn eval_parts(a: &[f64], b: &[f64], x: f64) -> RationalPoint {
    let mut p = 0.0;
    let mut dp = 0.0;
    let mut pow = 1.0;
    let mut pow_prev = 0.0; // x^(j-1)
    for (j, &aj) in a.iter().enumerate() {
        p += aj * pow;
        if j > 0 {
            dp += j as f64 * aj * pow_prev;
        }
        pow_prev = pow;
        pow *= x;
    }
    let mut s = 0.0;
    let mut ds = 0.0;
    let mut pow = x;
    let mut pow_prev = 1.0;
    for (j, &bj) in b.iter().enumerate() {
        s += bj * pow;
        ds += (j + 1) as f64 * bj * pow_prev;
        pow_prev = pow;
        pow *= x;
    }
    let sign_s = if s > 0.0 {
        1.0
    } else if s < 0.0 {
        -1.0
    } else {
        0.0
    };
    let q = 1.0 + s.abs();
    let inv_q = 1.0 / q;
    let value = p * inv_q;
    let d_input = dp * inv_q - value * inv_q * sign_s * ds;
    RationalPoint {
        value,
        d_input,
        inv_q,
        sign_s,
    }
}

/// Adds `g · ∂φ/∂a` and `g · ∂φ/∂b` at `x`.
pub(crate) fn accumulate_coeff_grads(pt: &RationalPoint, x: f64, g: f64, da: &mut [f64], db: &mut [f64]) {
    let mut pow = 1.0;
    let ga = g * pt.inv_q;
    for d in da.iter_mut() {
        *d += ga * pow;
        pow *= x;
    }
    if pt.sign_s != 0.0 {
        let gb = -g * pt.value * pt.inv_q * pt.sign_s;
        let mut pow = x;
        for d in db.iter_mut() {
            *d += gb * pow;
            pow *= x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_denominator_is_polynomial() {
        let r = RationalFn::new(vec![1.0, -2.0, 0.5], vec![0.0, 0.0]).unwrap();
        for x in [-3.0, -0.5, 0.0, 2.0] {
            assert_eq!(r.eval(x), 1.0 - 2.0 * x + 0.5 * x * x);
        }
        let id = RationalFn::identity(5, 4);
        for x in [-1e6, -3.2, 0.0, 0.7, 1e6] {
            assert_eq!(id.eval(x), x);
        }
    }

    #[test]
    fn denominator_never_vanishes() {
        let r = RationalFn::new(vec![0.3, 1.0, -1.0], vec![-5.0, 0.1, 3.0]).unwrap();
        for i in 0..=2000 {
            let x = -1e6 + i as f64 * 1e3;
            assert!(r.eval(x).is_finite());
            assert!(r.derivative(x).is_finite());
        }
    }

    #[test]
    fn rejects_bad_coefficients() {
        assert!(RationalFn::new(vec![], vec![1.0]).is_err());
        assert!(RationalFn::new(vec![f64::NAN], vec![]).is_err());
    }

    #[test]
    fn derivative_matches_central_difference_away_from_kink() {
        let r = RationalFn::new(vec![0.1, 0.9, 0.3, -0.05], vec![0.4, -0.2, 0.1]).unwrap();
        for x in [-2.3, -1.1, 0.4, 1.9, 2.8] {
            let h = 1e-6;
            let fd = (r.eval(x + h) - r.eval(x - h)) / (2.0 * h);
            assert!((fd - r.derivative(x)).abs() < 1e-7);
        }
    }
}
