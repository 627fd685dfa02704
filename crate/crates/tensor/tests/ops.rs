use hlpnn_tensor::gradcheck::{grad_check, DEFAULT_EPS};
use hlpnn_tensor::{Rng, Tape, Tensor, TensorError, Var};
use proptest::prelude::*;

const TOL: f64 = 1e-4;

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut Rng::seed_from(seed))
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= tol, "got {got:?}, want {want:?}");
    }
}

/// Weighted sum so the upstream gradient is not uniform.
fn weighted_sum(t: &mut Tape, x: Var, seed: u64) -> hlpnn_tensor::Result<Var> {
    let w = rand_t(t.shape(x), seed ^ 0xabc);
    let w = t.constant(w);
    let p = t.mul(x, w)?;
    Ok(t.sum(p))
}

#[test]
fn matmul_examples() {
    let mut t = Tape::new();
    let i = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let a = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let ia = t.matmul(i, a).unwrap();
    assert_eq!(t.value(ia), t.value(a));
    let ones = t.constant(Tensor::ones(&[2, 1]));
    let r = t.matmul(a, ones).unwrap();
    assert_eq!(t.shape(r), &[2, 1]);
    assert_eq!(t.value(r), &[3.0, 7.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    let err = t.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, TensorError::ShapeMismatch { .. }));
}

#[test]
fn matmul_gradient_of_sum() {
    // d sum(a·b) / da = ones(3×2) · bᵀ
    let a0 = rand_t(&[3, 4], 1);
    let b0 = rand_t(&[4, 2], 2);
    let mut t = Tape::new();
    let a = t.variable(a0.clone());
    let b = t.constant(b0.clone());
    let c = t.matmul(a, b).unwrap();
    let s = t.sum(c);
    let g = t.backward(s).unwrap();
    let ga = g.get(a).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let want = b0.data()[k * 2] + b0.data()[k * 2 + 1];
            assert!((ga[i * 4 + k] - want).abs() < 1e-12);
        }
    }
    let report = grad_check(
        |t, x| {
            let c = t.matmul(x[0], x[1])?;
            Ok(t.sum(c))
        },
        &[a0, b0],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(report.passed(TOL), "{report:?}");
}

#[test]
fn primitive_examples() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    let r = t.relu(x);
    assert_eq!(t.value(r), &[0.0, 0.0, 2.0]);

    let mut rng = Rng::seed_from(0);
    t.set_training(true);
    let d = t.dropout(x, 0.0, &mut rng).unwrap();
    assert_eq!(t.value(d), t.value(x));
    assert!(t.dropout(x, 1.0, &mut rng).is_err());

    let mut t = Tape::new();
    let x = t.variable(Tensor::new(vec![3], vec![0.1, 0.9, 0.4]).unwrap());
    let m = t.max_axis(x, 0).unwrap();
    assert_eq!(t.value(m), &[0.9]);
    let up = t.constant(Tensor::scalar(2.5));
    let l = t.mul(m, up).unwrap();
    let l = t.sum(l);
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.0, 2.5, 0.0]);
}

#[test]
fn max_pool_ties_go_to_first() {
    let mut t = Tape::new();
    let x = t.variable(Tensor::new(vec![3], vec![0.5, 0.5, 0.1]).unwrap());
    let m = t.max_axis(x, 0).unwrap();
    let g = t.backward(m).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0, 0.0, 0.0]);
}

#[test]
fn dropout_scaling_and_eval_identity() {
    let mut rng = Rng::seed_from(4);
    let mut t = Tape::new();
    let x = t.constant(Tensor::ones(&[2000]));
    let eval = t.dropout(x, 0.3, &mut rng).unwrap();
    assert_eq!(eval, x);
    t.set_training(true);
    let d = t.dropout(x, 0.3, &mut rng).unwrap();
    let vals = t.value(d);
    assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12));
    let kept = vals.iter().filter(|&&v| v > 0.0).count() as f64 / 2000.0;
    assert!((kept - 0.7).abs() < 0.05);
}

#[test]
fn lookup_and_axis_errors() {
    let mut t = Tape::new();
    let table = t.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(t.embedding_lookup(table, &[0, 3]), Err(TensorError::IndexOutOfRange { .. })));
    let x = t.constant(Tensor::zeros(&[2, 2]));
    assert!(matches!(t.sum_axis(x, 2), Err(TensorError::AxisOutOfRange { .. })));
    assert!(matches!(t.concat(&[x, x], 5), Err(TensorError::AxisOutOfRange { .. })));
}

#[test]
fn softmax_examples() {
    let mut t = Tape::new();
    let z = t.constant(Tensor::zeros(&[3]));
    let s = t.softmax(z, 0).unwrap();
    assert_close(t.value(s), &[1.0 / 3.0; 3], 1e-15);

    let big = t.constant(Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap());
    let s = t.softmax(big, 0).unwrap();
    assert!((t.value(s)[0] - 1.0).abs() < 1e-12 && t.value(s)[1] < 1e-300 + 1e-12);
    assert!(t.value(s).iter().all(|v| v.is_finite()));

    // exp(k)/Σexp for k = 1,2,3
    let x = t.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let s = t.softmax(x, 0).unwrap();
    assert_close(t.value(s), &[0.09003, 0.24473, 0.66524], 1e-5);

    let nan = t.constant(Tensor::new(vec![2], vec![f64::NAN, 0.0]).unwrap());
    assert!(matches!(t.softmax(nan, 0), Err(TensorError::NonFinite(_))));
}

#[test]
fn masked_positions_get_zero_probability() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new(vec![3], vec![0.3, f64::NEG_INFINITY, 0.3]).unwrap());
    let s = t.softmax(x, 0).unwrap();
    assert_eq!(t.value(s), &[0.5, 0.0, 0.5]);
}

#[test]
fn layer_norm_examples() {
    let mut t = Tape::new();
    let one = t.constant(Tensor::ones(&[2]));
    let zero = t.constant(Tensor::zeros(&[2]));
    let c = t.constant(Tensor::new(vec![1, 2], vec![5.0, 5.0]).unwrap());
    let y = t.layer_norm(c, one, zero, 1e-5).unwrap();
    assert_eq!(t.value(y), &[0.0, 0.0]);

    let x = t.constant(Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap());
    let y = t.layer_norm(x, one, zero, 1e-12).unwrap();
    assert_close(t.value(y), &[-1.0, 1.0], 1e-9);

    let g0 = t.constant(Tensor::zeros(&[2]));
    let b = t.constant(Tensor::new(vec![2], vec![0.7, -0.2]).unwrap());
    let x = t.constant(rand_t(&[3, 2], 5));
    let y = t.layer_norm(x, g0, b, 1e-5).unwrap();
    assert_eq!(t.value(y), &[0.7, -0.2, 0.7, -0.2, 0.7, -0.2]);
}

#[test]
fn backward_examples() {
    let x0 = rand_t(&[2, 3], 8);
    let mut t = Tape::new();
    let x = t.variable(x0.clone());
    let s = t.sum(x);
    assert_eq!(t.backward(s).unwrap().get(x).unwrap(), &[1.0; 6]);

    let sq = t.mul(x, x).unwrap();
    let s2 = t.sum(sq);
    let g = t.backward(s2).unwrap();
    let want: Vec<f64> = x0.data().iter().map(|v| 2.0 * v).collect();
    assert_close(g.get(x).unwrap(), &want, 1e-15);

    assert!(matches!(t.backward(x), Err(TensorError::NotScalar(_))));
}

#[test]
fn grads_accumulate_across_backward_calls() {
    use hlpnn_tensor::ParamStore;
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap()).unwrap();
    for _ in 0..2 {
        let grads = {
            let mut t = Tape::with_params(&store);
            let w = t.param(id);
            let s = t.sum(w);
            t.backward(s).unwrap()
        };
        store.accumulate(&grads);
    }
    assert_eq!(store.get(id).grad.as_deref(), Some(&[2.0, 2.0][..]));
    store.zero_grad();
    assert!(store.get(id).grad.is_none());
}

#[test]
fn grad_check_linear_is_exact() {
    let r = grad_check(
        |t, x| {
            let y = t.scale(x[0], 3.0);
            let y = t.add_scalar(y, 1.0);
            Ok(t.sum(y))
        },
        &[rand_t(&[4], 1)],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-10, "{r:?}");
}

#[test]
fn grad_check_softmax_cross_entropy() {
    let r = grad_check(
        |t, x| {
            let ls = t.log_softmax(x[0], 1)?;
            let p = t.pick(ls, &[2, 0, 1])?;
            let s = t.sum(p);
            Ok(t.scale(s, -1.0))
        },
        &[rand_t(&[3, 4], 11)],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn grad_check_reports_nan_as_failure() {
    let r = grad_check(
        |t, x| {
            let n = t.constant(Tensor::scalar(f64::NAN));
            let y = t.mul(x[0], n)?;
            Ok(t.sum(y))
        },
        &[rand_t(&[2], 1)],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(!r.passed(TOL));
}

type UnaryCase = (&'static str, fn(&mut Tape, Var) -> hlpnn_tensor::Result<Var>);

/// Every differentiable op on three random shapes.
#[test]
fn every_op_passes_grad_check() {
    let shapes: [&[usize]; 3] = [&[2, 3], &[3, 5], &[4, 2, 3]];
    let unary: Vec<UnaryCase> = vec![
        ("relu", |t, x| Ok(t.relu(x))),
        ("tanh", |t, x| Ok(t.tanh(x))),
        ("sigmoid", |t, x| Ok(t.sigmoid(x))),
        ("exp", |t, x| Ok(t.exp(x))),
        ("scale", |t, x| Ok(t.scale(x, -1.7))),
        ("softmax_last", |t, x| {
            let ax = t.shape(x).len() - 1;
            t.softmax(x, ax)
        }),
        ("softmax_first", |t, x| t.softmax(x, 0)),
        ("log_softmax", |t, x| {
            let ax = t.shape(x).len() - 1;
            t.log_softmax(x, ax)
        }),
        ("sum_axis", |t, x| t.sum_axis(x, 0)),
        ("max_axis", |t, x| {
            let ax = t.shape(x).len() - 1;
            t.max_axis(x, ax)
        }),
        ("slice", |t, x| t.slice(x, 1, 1, 1)),
        ("concat", |t, x| {
            let y = t.scale(x, 2.0);
            t.concat(&[x, y, x], 1)
        }),
        ("permute", |t, x| {
            let r = t.shape(x).len();
            let perm: Vec<usize> = (0..r).rev().collect();
            t.permute(x, &perm)
        }),
        ("reshape", |t, x| {
            let n = t.value(x).len();
            t.reshape(x, &[n])
        }),
        ("layer_norm", |t, x| {
            let n = *t.shape(x).last().unwrap();
            let g = t.constant(Tensor::uniform(&[n], 0.5, 1.5, &mut Rng::seed_from(3)));
            let b = t.constant(Tensor::uniform(&[n], -0.5, 0.5, &mut Rng::seed_from(4)));
            t.layer_norm(x, g, b, 1e-5)
        }),
        ("mul_self", |t, x| t.mul(x, x)),
        ("bias_broadcast", |t, x| {
            let n = *t.shape(x).last().unwrap();
            let b = t.constant(Tensor::uniform(&[n], -1.0, 1.0, &mut Rng::seed_from(5)));
            let y = t.add(x, b)?;
            t.mul(y, b)
        }),
    ];
    for (si, shape) in shapes.iter().enumerate() {
        for (name, op) in &unary {
            let x0 = rand_t(shape, 100 + si as u64);
            let r = grad_check(
                |t, xs| {
                    let y = op(t, xs[0])?;
                    weighted_sum(t, y, 7)
                },
                &[x0],
                DEFAULT_EPS,
            )
            .unwrap();
            assert!(r.passed(TOL), "{name} on {shape:?}: {r:?}");
        }
    }
}

#[test]
fn binary_and_structural_ops_pass_grad_check() {
    for (seed, (m, k, n)) in [(2, 3, 4), (1, 5, 2), (4, 2, 3)].into_iter().enumerate() {
        let seed = seed as u64;
        let cases: Vec<(&str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> hlpnn_tensor::Result<Var>>)> = vec![
            ("matmul_nt", vec![rand_t(&[m, k], seed), rand_t(&[n, k], seed + 1)], Box::new(|t, x| t.matmul_nt(x[0], x[1]))),
            (
                "matmul_rank3",
                vec![rand_t(&[2, m, k], seed), rand_t(&[k, n], seed + 1)],
                Box::new(|t, x| t.matmul(x[0], x[1])),
            ),
            ("bmm", vec![rand_t(&[2, m, k], seed), rand_t(&[2, k, n], seed + 1)], Box::new(|t, x| t.bmm(x[0], x[1]))),
            (
                "bmm_nt",
                vec![rand_t(&[3, m, k], seed), rand_t(&[3, n, k], seed + 1)],
                Box::new(|t, x| t.bmm_nt(x[0], x[1])),
            ),
            (
                "broadcast_mul",
                vec![rand_t(&[m, k, n], seed), rand_t(&[m, 1, n], seed + 1)],
                Box::new(|t, x| t.mul(x[0], x[1])),
            ),
            (
                "broadcast_sub",
                vec![rand_t(&[m, k, n], seed), rand_t(&[k, 1], seed + 1)],
                Box::new(|t, x| t.sub(x[0], x[1])),
            ),
            (
                "scalar_mul",
                vec![rand_t(&[1], seed), rand_t(&[m, n], seed + 1)],
                Box::new(|t, x| t.mul(x[0], x[1])),
            ),
            (
                "layer_norm_params",
                vec![rand_t(&[m, k + 1], seed), rand_t(&[k + 1], seed + 1), rand_t(&[k + 1], seed + 2)],
                Box::new(|t, x| t.layer_norm(x[0], x[1], x[2], 1e-5)),
            ),
            (
                "lookup",
                vec![rand_t(&[m + 2, n], seed)],
                Box::new(move |t, x| t.embedding_lookup(x[0], &[0, 1, 0, m + 1])),
            ),
            (
                "unfold",
                vec![rand_t(&[m, k + 3, n], seed)],
                Box::new(|t, x| {
                    let u = t.unfold(x[0], 3)?;
                    t.max_axis(u, 1)
                }),
            ),
            (
                "mean",
                vec![rand_t(&[m, n], seed)],
                Box::new(|t, x| {
                    let y = t.tanh(x[0]);
                    Ok(t.mean(y))
                }),
            ),
        ];
        for (name, inputs, f) in &cases {
            let r = grad_check(
                |t, xs| {
                    let y = f(t, xs)?;
                    weighted_sum(t, y, 9)
                },
                inputs,
                DEFAULT_EPS,
            )
            .unwrap();
            assert!(r.passed(TOL), "{name} case {seed}: {r:?}");
        }
    }
}

#[test]
fn dropout_passes_grad_check_with_fixed_mask() {
    // The mask is re-drawn from the same seed on every evaluation.
    for shape in [&[3usize, 4][..], &[5], &[2, 2, 2]] {
        let r = grad_check(
            |t, x| {
                t.set_training(true);
                let mut rng = Rng::seed_from(42);
                let y = t.dropout(x[0], 0.3, &mut rng)?;
                weighted_sum(t, y, 1)
            },
            &[rand_t(shape, 2)],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(r.passed(TOL), "{r:?}");
    }
}

#[test]
fn forward_backward_is_bit_deterministic() {
    let run = || {
        let mut rng = Rng::seed_from(77);
        let x0 = Tensor::uniform(&[4, 6], -1.0, 1.0, &mut rng);
        let w0 = Tensor::uniform(&[6, 3], -1.0, 1.0, &mut rng);
        let mut t = Tape::new();
        t.set_training(true);
        let x = t.variable(x0);
        let w = t.variable(w0);
        let h = t.matmul(x, w).unwrap();
        let h = t.dropout(h, 0.2, &mut rng).unwrap();
        let s = t.log_softmax(h, 1).unwrap();
        let p = t.pick(s, &[0, 1, 2, 0]).unwrap();
        let l = t.sum(p);
        let g = t.backward(l).unwrap();
        (t.scalar(l).to_bits(), g.get(w).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![3, 4], vals).unwrap());
        let s = t.softmax(x, 1).unwrap();
        for row in t.value(s).chunks(4) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardised(vals in prop::collection::vec(-20.0f64..20.0, 8)) {
        prop_assume!(vals[..4].iter().any(|v| (v - vals[0]).abs() > 1e-3));
        prop_assume!(vals[4..].iter().any(|v| (v - vals[4]).abs() > 1e-3));
        let mut t = Tape::new();
        let g = t.constant(Tensor::ones(&[4]));
        let b = t.constant(Tensor::zeros(&[4]));
        let x = t.constant(Tensor::new(vec![2, 4], vals).unwrap());
        let y = t.layer_norm(x, g, b, 1e-12).unwrap();
        for row in t.value(y).chunks(4) {
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            prop_assert!(mean.abs() < 1e-8);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }
}
