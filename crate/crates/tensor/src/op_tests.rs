use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fixtures::{Cube, MiscalibratedCube};
use crate::*;

const GRAD_TOL: f64 = 1e-5;
const H: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Random tensor whose entries are at least `gap` away from zero.
fn random_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let mut t = random(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (gap + v.abs());
    }
    t
}

/// Projects a node onto a scalar with fixed weights in [0.5, 3.0] that
/// differ between neighbouring elements, so no element's contribution to the
/// loss vanishes or cancels against its row neighbours.
fn weighted_sum(t: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let n = t.value(x).len();
    let offset = (seed % 11) as usize;
    let w: Vec<f64> = (0..n).map(|i| 0.5 + 0.25 * ((i * 7 + offset) % 11) as f64).collect();
    let w = t.constant(Tensor::new(t.shape(x).to_vec(), w)?);
    let p = t.mul(x, w)?;
    Ok(t.sum(p))
}

fn check(f: impl Fn(&mut Tape, &[Var]) -> Result<Var>, params: &[Tensor]) -> GradcheckReport {
    let report = finite_diff_gradcheck(f, params, H).unwrap();
    assert!(report.passes(GRAD_TOL), "{report:?}");
    report
}

#[test]
fn matmul_identity_and_hand_example() {
    let mut t = Tape::new();
    let x = Tensor::new([2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, 7.0]).unwrap();
    let i2 = t.constant(Tensor::eye(2));
    let xv = t.constant(x.clone());
    let y = t.matmul(i2, xv).unwrap();
    assert_eq!(t.value(y), &x);

    let a = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let b = t.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.value(c).shape(), &[2, 1]);
    assert_eq!(t.value(c).data(), &[3.0, 7.0]);
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros([2, 3]));
    let b = t.constant(Tensor::zeros([2, 2]));
    let err = t.matmul(a, b).unwrap_err();
    assert!(matches!(err, TensorError::ShapeMismatch { op: "matmul", .. }), "{err}");
}

#[test]
fn matmul_gradient_of_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 2]);
    let r = check(
        |t, v| {
            let c = t.matmul(v[0], v[1])?;
            Ok(t.sum(c))
        },
        &[a, b],
    );
    assert!(r.max_rel_error <= 1e-6);
}

#[test]
fn softmax_examples() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![1000.0, 0.0]]).unwrap());
    let y = t.softmax_rows(x).unwrap();
    let y = t.value(y).data().to_vec();
    assert_eq!(&y[..2], &[0.5, 0.5]);
    // exp(-1000) underflows to exactly 0 in f64; the true value is ~5e-435.
    assert_eq!(y[2], 1.0);
    assert!(y[3] >= 0.0 && y[3] < 1e-300);

    for c in [-3.0, 0.0, 17.5, 1e6] {
        let x = t.constant(Tensor::full([1, 4], c));
        let y = t.softmax_rows(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.25; 4]);
    }
}

#[test]
fn masked_softmax_zeroes_disallowed_positions() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new([2, 3, 3], (0..18).map(|i| i as f64 * 0.3).collect()).unwrap());
    let mask = Mask::causal(3);
    let y = t.softmax_masked(x, Some(&mask)).unwrap();
    let v = t.value(y);
    for b in 0..2 {
        let row0 = v.row(b * 3);
        assert_eq!(row0, &[1.0, 0.0, 0.0]);
        assert_eq!(v.row(b * 3 + 1)[2], 0.0);
    }
    let bad = Mask::causal(2);
    assert!(t.softmax_masked(x, Some(&bad)).is_err());
}

#[test]
fn layer_norm_examples() {
    let mut t = Tape::new();
    let g = t.constant(Tensor::full([2], 1.0));
    let b = t.constant(Tensor::zeros([2]));
    let x = t.constant(Tensor::from_rows(&[vec![5.0, 5.0], vec![-1.0, 1.0]]).unwrap());
    let y = t.layer_norm(x, g, b).unwrap();
    let y = t.value(y).data();
    assert_eq!(&y[..2], &[0.0, 0.0]);
    let k = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
    assert!((y[2] + k).abs() < 1e-15 && (y[3] - k).abs() < 1e-15);
    assert!((y[3] - 1.0).abs() < 1e-5);

    let g = t.constant(Tensor::full([4], 1.0));
    let bias = Tensor::new([4], vec![0.5, -1.0, 2.0, 0.1]).unwrap();
    let bias_mean = bias.data().iter().sum::<f64>() / 4.0;
    let b = t.constant(bias);
    let x = t.constant(Tensor::new([1, 4], vec![3.0, -7.0, 0.25, 9.0]).unwrap());
    let y = t.layer_norm(x, g, b).unwrap();
    let m = t.value(y).data().iter().sum::<f64>() / 4.0;
    assert!((m - bias_mean).abs() < 1e-12);
}

#[test]
fn layer_norm_rejects_width_one() {
    let mut t = Tape::new();
    let g = t.constant(Tensor::full([1], 1.0));
    let b = t.constant(Tensor::zeros([1]));
    let x = t.constant(Tensor::zeros([3, 1]));
    assert!(t.layer_norm(x, g, b).is_err());
}

#[test]
fn linear_examples() {
    let mut t = Tape::new();
    let x = Tensor::new([3, 2], vec![1.0, 2.0, -3.0, 4.0, 0.5, 0.0]).unwrap();
    let xv = t.constant(x.clone());
    let w0 = t.constant(Tensor::zeros([2, 3]));
    let c0 = t.constant(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
    let y = t.linear(xv, w0, Some(c0)).unwrap();
    for r in 0..3 {
        assert_eq!(t.value(y).row(r), &[1.0, -2.0, 0.5]);
    }
    let eye = t.constant(Tensor::eye(2));
    let zero = t.constant(Tensor::zeros([2]));
    let y = t.linear(xv, eye, Some(zero)).unwrap();
    assert_eq!(t.value(y), &x);
    let bad = t.constant(Tensor::zeros([3]));
    assert!(t.linear(xv, eye, Some(bad)).is_err());
}

#[test]
fn linear_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = [random(&mut rng, &[2, 3, 4]), random(&mut rng, &[4, 5]), random(&mut rng, &[5])];
    let r = check(
        |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            weighted_sum(t, y, 9)
        },
        &params,
    );
    assert!(r.max_rel_error <= 1e-6, "{r:?}");
}

#[test]
fn relu_examples_and_gradcheck() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap());
    let y = t.relu(x);
    assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    let x = t.constant(Tensor::full([4], -0.5));
    let y = t.relu(x);
    assert_eq!(t.value(y).data(), &[0.0; 4]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_away_from_zero(&mut rng, &[3, 5], 1e-2);
    check(
        |t, v| {
            let y = t.relu(v[0]);
            weighted_sum(t, y, 4)
        },
        &[p],
    );
}

#[test]
fn mse_examples_and_gradient_formula() {
    let mut t = Tape::new();
    let p = Tensor::new([2, 3], vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap();
    let pv = t.constant(p.clone());
    let l = t.mse_loss(pv, pv).unwrap();
    assert_eq!(t.value(l).item().unwrap(), 0.0);
    let shifted = Tensor::new([2, 3], p.data().iter().map(|v| v - 0.1).collect()).unwrap();
    let sv = t.constant(shifted);
    let l = t.mse_loss(pv, sv).unwrap();
    assert!((t.value(l).item().unwrap() - 0.01).abs() < 1e-15);
    let wrong = t.constant(Tensor::zeros([3, 2]));
    assert!(t.mse_loss(pv, wrong).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pred = random(&mut rng, &[3, 4]);
    let target = random(&mut rng, &[3, 4]);
    let mut t = Tape::new();
    let pv = t.param(pred.clone());
    let tv = t.constant(target.clone());
    let l = t.mse_loss(pv, tv).unwrap();
    let g = t.backward(l).unwrap();
    for ((gi, a), b) in g.get(pv).unwrap().iter().zip(pred.data()).zip(target.data()) {
        assert!((gi - 2.0 * (a - b) / 12.0).abs() < 1e-15);
    }
    check(
        |t, v| {
            let tv = t.constant(target.clone());
            t.mse_loss(v[0], tv)
        },
        &[pred],
    );
}

#[test]
fn backward_sum_and_fan_out() {
    let mut t = Tape::new();
    let x = t.param(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let s = t.sum(x);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0; 4]);

    let mut t = Tape::new();
    let y = t.param(Tensor::new([3], vec![0.5, -1.0, 2.0]).unwrap());
    let s1 = t.sum(y);
    let s2 = t.sum(y);
    let l = t.add(s1, s2).unwrap();
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(y).unwrap(), &[2.0; 3]);
}

#[test]
fn fan_out_equals_sum_of_consumers() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, &[2, 3]);
    let w = random(&mut rng, &[3, 3]);
    let grad_of = |which: u8| {
        let mut t = Tape::new();
        let xv = t.param(x.clone());
        let wv = t.constant(w.clone());
        let a = t.matmul(xv, wv).unwrap();
        let a = t.tanh(a);
        let b = t.sigmoid(xv);
        let la = weighted_sum(&mut t, a, 1).unwrap();
        let lb = weighted_sum(&mut t, b, 2).unwrap();
        let l = match which {
            0 => la,
            1 => lb,
            _ => t.add(la, lb).unwrap(),
        };
        t.backward(l).unwrap().tensor(xv)
    };
    let (ga, gb, both) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..both.len() {
        assert!((both.data()[i] - ga.data()[i] - gb.data()[i]).abs() < 1e-15);
    }
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut t = Tape::new();
    let x = t.param(Tensor::zeros([2]));
    let y = t.scale(x, 2.0);
    assert!(matches!(t.backward(y), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn tape_is_topologically_ordered() {
    let mut t = Tape::new();
    let a = t.param(Tensor::zeros([2, 2]));
    let b = t.param(Tensor::eye(2));
    let c = t.matmul(a, b).unwrap();
    let d = t.add(c, a).unwrap();
    let _ = t.sum(d);
    for (id, deps) in t.dependencies().iter().enumerate() {
        assert!(deps.iter().all(|v| v.index() < id));
    }
}

#[test]
fn miscalibrated_backward_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = random_away_from_zero(&mut rng, &[4], 0.1);
    let bad = finite_diff_gradcheck(
        |t, v| {
            let y = t.custom(Arc::new(MiscalibratedCube), &[v[0]])?;
            Ok(t.sum(y))
        },
        std::slice::from_ref(&p),
        H,
    )
    .unwrap();
    assert!(bad.max_rel_error > 1e-2, "{bad:?}");
    check(
        |t, v| {
            let y = t.custom(Arc::new(Cube), &[v[0]])?;
            Ok(t.sum(y))
        },
        &[p],
    );
}

#[test]
fn forward_ops_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut t = Tape::new();
        let x = t.constant(random(&mut rng, &[2, 4, 8]));
        let w = t.constant(random(&mut rng, &[8, 8]));
        let g = t.constant(Tensor::full([8], 1.0));
        let b = t.constant(Tensor::zeros([8]));
        let y = t.matmul(x, w).unwrap();
        let y = t.layer_norm(y, g, b).unwrap();
        let y = t.softmax_rows(y).unwrap();
        t.value(y).clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn split_and_merge_heads_are_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&mut rng, &[2, 3, 8]);
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let s = t.split_heads(xv, 4).unwrap();
    assert_eq!(t.shape(s), &[8, 3, 2]);
    // head 1 of batch 0, step 2 holds features 2..4 of x[0, 2]
    assert_eq!(t.value(s).row(3 + 2), &x.row(2)[2..4]);
    let m = t.merge_heads(s, 4).unwrap();
    assert_eq!(t.value(m), &x);
}

fn shape_strategy() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..=4, 2usize..=8, 1usize..=8, any::<u64>())
}

proptest! {
    // a fixed stream: random signs occasionally cancel a gradient down to
    // the finite-difference rounding floor, which would make runs flaky
    #![proptest_config(ProptestConfig {
        cases: 24,
        rng_seed: RngSeed::Fixed(0),
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        rows in 1usize..6, cols in 1usize..9, shift in -50.0f64..50.0, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[rows, cols]);
        let shifted = Tensor::new([rows, cols], x.data().iter().map(|v| v * 10.0 + shift).collect()).unwrap();
        let base = Tensor::new([rows, cols], x.data().iter().map(|v| v * 10.0).collect()).unwrap();
        let mut t = Tape::new();
        let a = t.constant(base);
        let b = t.constant(shifted);
        let ya = t.softmax_rows(a).unwrap();
        let yb = t.softmax_rows(b).unwrap();
        for r in 0..rows {
            let row = t.value(ya).row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        prop_assert!(t.value(ya).max_abs_diff(t.value(yb)) <= 1e-12);
    }

    #[test]
    fn gradcheck_matmul_bmm((m, k, n, seed) in shape_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[m, k]);
        let b = random(&mut rng, &[k, n]);
        let r = finite_diff_gradcheck(|t, v| { let c = t.matmul(v[0], v[1])?; weighted_sum(t, c, seed) }, &[a, b], H).unwrap();
        prop_assert!(r.passes(GRAD_TOL), "{:?}", r);

        let a = random(&mut rng, &[2, m, k]);
        let b = random(&mut rng, &[2, k, n]);
        let bt = random(&mut rng, &[2, n, k]);
        let r = finite_diff_gradcheck(|t, v| { let c = t.bmm(v[0], v[1], false)?; weighted_sum(t, c, seed) }, &[a.clone(), b], H).unwrap();
        prop_assert!(r.passes(GRAD_TOL), "{:?}", r);
        let r = finite_diff_gradcheck(|t, v| { let c = t.bmm(v[0], v[1], true)?; weighted_sum(t, c, seed) }, &[a, bt], H).unwrap();
        prop_assert!(r.passes(GRAD_TOL), "{:?}", r);
    }

    #[test]
    fn gradcheck_elementwise((m, k, _n, seed) in shape_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // the gradient wrt b carries a factor tanh(a)·a
        let a = random_away_from_zero(&mut rng, &[m, k], 0.1);
        let b = random(&mut rng, &[m, k]);
        let bias = random(&mut rng, &[k]);
        let r = finite_diff_gradcheck(|t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(s, v[1])?;
            let p = t.mul(d, v[1])?;
            let p = t.add_broadcast(p, v[2])?;
            let p = t.scale(p, -1.5);
            let s = t.sigmoid(p);
            let h = t.tanh(v[0]);
            let y = t.mul(s, h)?;
            weighted_sum(t, y, seed)
        }, &[a, b, bias], H).unwrap();
        prop_assert!(r.passes(GRAD_TOL), "{:?}", r);
    }

    #[test]
    fn gradcheck_softmax_and_layer_norm((m, k, _n, seed) in shape_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[m, k]);
        let r = finite_diff_gradcheck(|t, v| {
            let y = t.softmax_rows(v[0])?;
            weighted_sum(t, y, seed)
        }, &[x], H).unwrap();
        prop_assert!(r.passes(GRAD_TOL), "{:?}", r);
        let mask = Mask::causal(k);
        let sq = random(&mut rng, &[m, k, k]);
        let r = finite_diff_gradcheck(|t, v| {
            let y = t.softmax_masked(v[0], Some(&mask))?;
            weighted_sum(t, y, seed)
        }, &[sq], H).unwrap();
        prop_assert!(r.passes(GRAD_TOL), "{:?}", r);
        // two features normalize to ±1 whatever their values, leaving
        // only epsilon-sized gradients wrt x
        let x = random(&mut rng, &[m, k + 1]);
        let g = random(&mut rng, &[k + 1]);
        let b = random(&mut rng, &[k + 1]);
        let r = finite_diff_gradcheck(|t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            weighted_sum(t, y, seed)
        }, &[x, g, b], H).unwrap();
        prop_assert!(r.passes(GRAD_TOL), "{:?}", r);
    }

    #[test]
    fn gradcheck_structural_ops((m, k, n, seed) in shape_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[2, m, 2 * k]);
        let b = random(&mut rng, &[2, n, 2 * k]);
        let r = finite_diff_gradcheck(|t, v| {
            let c = t.concat(&[v[0], v[1]], 1)?;
            let s = t.slice(c, 2, 1, 2 * k - 1)?;
            let h = t.split_heads(c, 2)?;
            let h = t.tanh(h);
            let h = t.merge_heads(h, 2)?;
            let r = t.reshape(h, &[2 * (m + n), 2 * k])?;
            let l1 = weighted_sum(t, s, seed)?;
            let l2 = weighted_sum(t, r, seed ^ 1)?;
            let l3 = t.mean(c);
            let l = t.add(l1, l2)?;
            t.add(l, l3)
        }, &[a, b], H).unwrap();
        prop_assert!(r.passes(GRAD_TOL), "{:?}", r);
    }
}
