use grkan_core::tensor::{grad_check, matmul, Tape, Tensor, Var};
use grkan_core::{Error, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.5..1.5))
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.at(&[i, p]) * b.at(&[p, j]);
            }
            out.data_mut()[i * n + j] = s;
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[5, 7], &mut rng);
    let b = random(&[7, 3], &mut rng);
    assert!(matmul(&a, &b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);

    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let c = tape.matmul(va, vb).unwrap();
    assert!(tape.value(c).max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn matmul_oracle_up_to_32(m in 1usize..=32, k in 1usize..=32, n in 1usize..=32, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[m, k], &mut rng);
        let b = random(&[k, n], &mut rng);
        prop_assert!(matmul(&a, &b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 5]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Dimension(_)));
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn backward_basic_rules() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    tape.backward(x).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0]);

    let mut tape = Tape::new();
    let xs = Tensor::new(vec![4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
    let x = tape.param(xs.clone());
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    let expected: Vec<f64> = xs.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(tape.grad(x).unwrap().data(), expected.as_slice());

    // a second sweep without reset accumulates
    tape.backward(loss).unwrap();
    let doubled: Vec<f64> = expected.iter().map(|v| 2.0 * v).collect();
    assert_eq!(tape.grad(x).unwrap().data(), doubled.as_slice());
    tape.zero_grad();
    assert!(tape.grad(x).is_none());
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(&[2]));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn grad_check_rejects_non_scalar_function() {
    let x = Tensor::zeros(&[3]);
    let err = grad_check(|_, v| Ok(v), &x, H).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn grad_check_of_linear_sum_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[3, 4], &mut rng);
    let err = grad_check(|t, v| Ok(t.sum(v)), &x, H).unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn shared_leaf_sums_path_gradients() {
    // f(x) = sum(exp(x) * x) + sum(silu(x)), x used on three paths
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[6], &mut rng);
    let f = |t: &mut Tape, v: Var| -> Result<Var> {
        let e = t.exp(v);
        let p = t.mul(e, v)?;
        let s = t.silu(v);
        let a = t.sum(p);
        let b = t.sum(s);
        let both = t.add(a, b)?;
        Ok(both)
    };
    let err = grad_check(f, &x, H).unwrap();
    assert!(err < 1e-6, "{err}");

    // analytic cross-check: d/dx (x e^x) = (1 + x) e^x
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v).unwrap();
    tape.backward(out).unwrap();
    for (g, xv) in tape.grad(v).unwrap().data().iter().zip(x.data()) {
        let sig = 1.0 / (1.0 + (-xv).exp());
        let expected = (1.0 + xv) * xv.exp() + sig * (1.0 + xv * (1.0 - sig));
        assert!((g - expected).abs() < 1e-12);
    }
}

/// A loss that mixes every value of `y` non-uniformly so that each element
/// receives a distinct upstream gradient.
fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::from_fn(t.shape(y), |_| rng.gen_range(-1.0..1.0));
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn check_op(name: &str, shape: &[usize], f: impl Fn(&mut Tape, Var) -> Result<Var>) {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = random(shape, &mut rng);
        let err = grad_check(
            |t, v| {
                let y = f(t, v)?;
                weighted_sum(t, y, seed)
            },
            &x,
            H,
        )
        .unwrap();
        assert!(err < 1e-5, "{name} seed {seed}: relative error {err:.3e}");
    }
}

#[test]
fn every_elementwise_op_passes_grad_check() {
    check_op("silu", &[3, 4], |t, v| Ok(t.silu(v)));
    check_op("selu", &[3, 4], |t, v| Ok(t.selu(v)));
    check_op("exp", &[3, 4], |t, v| Ok(t.exp(v)));
    check_op("sigmoid", &[3, 4], |t, v| Ok(t.sigmoid(v)));
    check_op("pow2", &[3, 4], |t, v| Ok(t.pow(v, 2.0)));
    check_op("pow3", &[3, 4], |t, v| Ok(t.pow(v, 3.0)));
    check_op("abs", &[3, 4], |t, v| Ok(t.abs(v)));
    check_op("scale", &[5], |t, v| Ok(t.scale(v, -0.7)));
    check_op("add_scalar", &[5], |t, v| Ok(t.add_scalar(v, 0.3)));
    check_op("mul_self", &[5], |t, v| t.mul(v, v));
    check_op("sub", &[5], |t, v| {
        let e = t.exp(v);
        t.sub(e, v)
    });
}

#[test]
fn scalar_and_row_broadcast_ops_pass_grad_check() {
    check_op("mul_scalar_var lhs", &[2, 3], |t, v| {
        let s = t.constant(Tensor::scalar(1.7));
        t.mul_scalar_var(v, s)
    });
    check_op("mul_scalar_var rhs", &[1], |t, v| {
        let a = t.constant(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5));
        t.mul_scalar_var(a, v)
    });
    check_op("add_scalar_var rhs", &[1], |t, v| {
        let a = t.constant(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5));
        let s = t.add_scalar_var(a, v)?;
        Ok(t.pow(s, 2.0))
    });
    check_op("add_row row", &[3], |t, v| {
        let a = t.constant(Tensor::from_fn(&[4, 3], |i| (i as f64).sin()));
        let s = t.add_row(a, v)?;
        Ok(t.silu(s))
    });
    check_op("mul_row both", &[4, 3], |t, v| {
        let r = t.reshape(v, &[12])?;
        let row = t.constant(Tensor::from_fn(&[3], |i| 0.5 + i as f64));
        let m = t.mul_row(v, row)?;
        let r2 = t.reshape(m, &[12])?;
        t.mul(r, r2)
    });
    check_op("mul_row gain", &[3], |t, v| {
        let a = t.constant(Tensor::from_fn(&[4, 3], |i| (i as f64).cos()));
        t.mul_row(a, v)
    });
}

#[test]
fn structural_ops_pass_grad_check() {
    check_op("matmul lhs", &[3, 4], |t, v| {
        let b = t.constant(Tensor::from_fn(&[4, 2], |i| (i as f64 * 0.37).sin()));
        t.matmul(v, b)
    });
    check_op("matmul rhs", &[4, 2], |t, v| {
        let a = t.constant(Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).cos()));
        t.matmul(a, v)
    });
    check_op("bmm", &[2, 3, 4], |t, v| {
        let b = t.constant(Tensor::from_fn(&[2, 4, 5], |i| (i as f64 * 0.21).sin()));
        let p = t.bmm(v, b, false)?;
        let q = t.bmm(p, p, true)?;
        Ok(q)
    });
    check_op("bmm trans rhs", &[2, 5, 4], |t, v| {
        let a = t.constant(Tensor::from_fn(&[2, 3, 4], |i| (i as f64 * 0.21).cos()));
        t.bmm(a, v, true)
    });
    check_op("permute", &[2, 3, 4], |t, v| {
        let p = t.permute(v, &[2, 0, 1])?;
        let s = t.silu(p);
        t.reshape(s, &[24])
    });
    check_op("softmax", &[3, 5], |t, v| t.softmax(v));
    check_op("layer_norm", &[3, 5], |t, v| t.layer_norm(v));
    check_op("glu", &[3, 6], |t, v| t.glu(v));
    check_op("mean", &[7], |t, v| {
        let s = t.silu(v);
        Ok(t.mean(s))
    });
    check_op("depthwise conv x", &[2, 6, 3], |t, v| {
        let w = t.constant(Tensor::from_fn(&[3, 5], |i| (i as f64 * 0.5).sin()));
        t.depthwise_conv1d(v, w)
    });
    check_op("depthwise conv w", &[3, 3], |t, v| {
        let x = t.constant(Tensor::from_fn(&[2, 4, 3], |i| (i as f64 * 0.3).cos()));
        t.depthwise_conv1d(x, v)
    });
    check_op("prepend_row x", &[2, 3, 4], |t, v| {
        let tok = t.constant(Tensor::from_fn(&[1, 4], |i| i as f64));
        let p = t.prepend_row(v, tok)?;
        Ok(t.silu(p))
    });
    check_op("prepend_row token", &[1, 4], |t, v| {
        let x = t.constant(Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin()));
        let p = t.prepend_row(x, v)?;
        Ok(t.silu(p))
    });
    check_op("select_row", &[2, 3, 4], |t, v| t.select_row(v, 1));
    check_op("cross_entropy", &[4, 2], |t, v| t.cross_entropy(v, &[0, 1, 1, 0]));
}

#[test]
fn permute_moves_elements() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
    let p = tape.permute(x, &[1, 0]).unwrap();
    assert_eq!(tape.shape(p), &[3, 2]);
    assert_eq!(tape.value(p).data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    assert!(tape.permute(x, &[0, 0]).is_err());
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_fn(&[5, 7], |_| rng.gen_range(-30.0..30.0)));
    let s = tape.softmax(x).unwrap();
    for row in tape.value(s).data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn abs_subgradient_at_zero_is_zero() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    let a = tape.abs(x);
    let s = tape.sum(a);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[-1.0, 0.0, 1.0]);
}

#[test]
fn elementwise_shape_mismatch_is_dimension_error() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 2]));
    let b = tape.constant(Tensor::zeros(&[4]));
    assert!(matches!(tape.add(a, b), Err(Error::Dimension(_))));
    assert!(matches!(tape.mul(a, b), Err(Error::Dimension(_))));
    assert!(matches!(tape.mul_scalar_var(a, b), Err(Error::Dimension(_))));
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::scalar(2.0));
    let x = tape.param(Tensor::scalar(3.0));
    let p = tape.mul(c, x).unwrap();
    tape.backward(p).unwrap();
    assert!(tape.grad(c).is_none());
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0]);
}
