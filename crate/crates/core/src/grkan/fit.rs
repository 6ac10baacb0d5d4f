//! Least-squares fitting of safe-form rationals to scalar functions.

use super::rational::{accumulate_coeff_grads, eval_parts, RationalFn};
use crate::error::{Error, Result};
use crate::linalg::{least_squares, solve_spd_scaled, Singular};

/// A fitted rational and its worst absolute error on a grid ten times denser
/// than the fitting samples.
#[derive(Clone, Debug)]
pub struct RationalFit {
    pub rational: RationalFn,
    pub max_error: f64,
}

const EXACT: f64 = 1e-12;
const DENOMINATOR_RIDGE: f64 = 1e-10;
const LM_ITERS: usize = 200;

fn grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (count - 1) as f64;
    (0..count).map(|i| lo + step * i as f64).collect()
}

fn max_error(a: &[f64], b: &[f64], xs: &[f64], target: &impl Fn(f64) -> f64) -> f64 {
    xs.iter()
        .map(|&x| (eval_parts(a, b, x).value - target(x)).abs())
        .fold(0.0, f64::max)
}

fn fit_error(reason: &str, s: Singular) -> Error {
    Error::Fit {
        reason: reason.to_string(),
        condition: s.condition,
    }
}

/// Fits `P(x) / (1 + |S(x)|)` with numerator order `m` and denominator order
/// `n` to `target` sampled uniformly on `domain`.
///
/// The fit starts from a polynomial least-squares solution, tries the
/// linearized rational problem `P(x) − f(x)·S(x) ≈ f(x)`, and refines the best
/// candidate with damped Gauss-Newton on the safe form itself.
pub fn fit_rational_to_function(
    target: impl Fn(f64) -> f64,
    m: usize,
    n: usize,
    domain: (f64, f64),
    samples: usize,
) -> Result<RationalFit> {
    let (lo, hi) = domain;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) || samples == 0 {
        return Err(Error::Fit {
            reason: format!("need a finite domain lo < hi and samples > 0, got [{lo}, {hi}] with {samples}"),
            condition: f64::NAN,
        });
    }
    let xs = grid(lo, hi, samples);
    let ys: Vec<f64> = xs.iter().map(|&x| target(x)).collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::Fit {
            reason: "target is not finite on the domain".into(),
            condition: f64::NAN,
        });
    }
    let dense = grid(lo, hi, samples * 10);

    // polynomial start
    let p_cols = m + 1;
    let rows: Vec<f64> = xs
        .iter()
        .flat_map(|&x| (0..p_cols).map(move |j| x.powi(j as i32)))
        .collect();
    let a_poly = least_squares(&rows, &ys, p_cols, &vec![0.0; p_cols])
        .map_err(|s| fit_error("singular normal equations for the numerator", s))?;
    let b_zero = vec![0.0; n];
    let mut best = (max_error(&a_poly, &b_zero, &dense, &target), a_poly, b_zero);
    if best.0 < EXACT || n == 0 {
        return Ok(finish(best));
    }

    // linearized rational start
    let cols = p_cols + n;
    let rows: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .flat_map(|(&x, &y)| {
            (0..p_cols)
                .map(move |j| x.powi(j as i32))
                .chain((1..=n).map(move |j| -y * x.powi(j as i32)))
        })
        .collect();
    let mut ridge = vec![0.0; cols];
    ridge[p_cols..].iter_mut().for_each(|r| *r = DENOMINATOR_RIDGE);
    if let Ok(theta) = least_squares(&rows, &ys, cols, &ridge) {
        let (a, b) = theta.split_at(p_cols);
        let err = max_error(a, b, &dense, &target);
        if err < best.0 {
            best = (err, a.to_vec(), b.to_vec());
        }
    }

    let (a, b) = refine(&best.1, &best.2, &xs, &ys);
    let err = max_error(&a, &b, &dense, &target);
    if err < best.0 {
        best = (err, a, b);
    }
    Ok(finish(best))
}

fn finish((max_error, a, b): (f64, Vec<f64>, Vec<f64>)) -> RationalFit {
    RationalFit {
        rational: RationalFn::new(a, b).expect("fit produced finite coefficients"),
        max_error,
    }
}

fn sse(a: &[f64], b: &[f64], xs: &[f64], ys: &[f64]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| (eval_parts(a, b, x).value - y).powi(2))
        .sum()
}

/// Levenberg-Marquardt on the safe form.
fn refine(a0: &[f64], b0: &[f64], xs: &[f64], ys: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (pa, pb) = (a0.len(), b0.len());
    let cols = pa + pb;
    let mut theta: Vec<f64> = a0.iter().chain(b0).copied().collect();
    let mut cost = sse(&theta[..pa], &theta[pa..], xs, ys);
    let mut lambda = 1e-3;
    for _ in 0..LM_ITERS {
        let mut jtj = vec![0.0; cols * cols];
        let mut jtr = vec![0.0; cols];
        let mut jrow = vec![0.0; cols];
        for (&x, &y) in xs.iter().zip(ys) {
            let pt = eval_parts(&theta[..pa], &theta[pa..], x);
            jrow.iter_mut().for_each(|v| *v = 0.0);
            let (ja, jb) = jrow.split_at_mut(pa);
            accumulate_coeff_grads(&pt, x, 1.0, ja, jb);
            let r = pt.value - y;
            for i in 0..cols {
                jtr[i] += jrow[i] * r;
                for j in 0..cols {
                    jtj[i * cols + j] += jrow[i] * jrow[j];
                }
            }
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut m = jtj.clone();
            for i in 0..cols {
                m[i * cols + i] += lambda * (jtj[i * cols + i] + 1e-12);
            }
            let mut rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let Ok(step) = solve_spd_scaled(&mut m, &mut rhs, cols) else {
                lambda *= 10.0;
                continue;
            };
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
            if cand.iter().all(|v| v.is_finite()) {
                let c = sse(&cand[..pa], &cand[pa..], xs, ys);
                if c < cost {
                    theta = cand;
                    cost = c;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved || cost < 1e-28 {
            break;
        }
    }
    let b = theta.split_off(pa);
    (theta, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_exact() {
        let fit = fit_rational_to_function(|x| x, 5, 4, (-3.0, 3.0), 1000).unwrap();
        assert!(fit.max_error < 1e-9, "{}", fit.max_error);
        assert!(fit.rational.denominator().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_target_gives_zero_numerator() {
        let fit = fit_rational_to_function(|_| 0.0, 5, 4, (-3.0, 3.0), 200).unwrap();
        assert_eq!(fit.max_error, 0.0);
        assert!(fit.rational.numerator().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn too_few_samples_is_singular() {
        let err = fit_rational_to_function(|x| x * x, 3, 2, (-1.0, 1.0), 2).unwrap_err();
        match err {
            Error::Fit { condition, .. } => assert!(condition > 1e10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_domain_is_rejected() {
        assert!(fit_rational_to_function(|x| x, 2, 1, (1.0, -1.0), 10).is_err());
        assert!(fit_rational_to_function(|x| x, 2, 1, (-1.0, 1.0), 0).is_err());
    }
}
