use super::*;
use crate::error::Error;
use crate::rng::Rng;

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gaussian()).collect()).unwrap()
}

fn vecs(g: &mut Graph, data: &[f64]) -> Var {
    g.constant_vec(data.to_vec()).unwrap()
}

#[test]
fn linear_identity() {
    let mut g = Graph::new();
    let x = vecs(&mut g, &[1.0, 0.0]);
    let w = g.constant(&Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let b = vecs(&mut g, &[0.0, 0.0]);
    let y = g.linear(x, w, b).unwrap();
    assert_eq!(g.value(y), &[1.0, 0.0]);
}

#[test]
fn linear_value_and_input_gradient() {
    let xs = [1.0, 2.0];
    let ws = [3.0, 4.0, 5.0, 6.0];
    let bs = [1.0, 1.0];
    // independent scalar loop
    let mut expected = [0.0; 2];
    for i in 0..2 {
        expected[i] = bs[i];
        for j in 0..2 {
            expected[i] += ws[i * 2 + j] * xs[j];
        }
    }
    assert_eq!(expected, [12.0, 18.0]);

    let mut g = Graph::new();
    let x = g.param(&Tensor::vector(xs.to_vec()));
    let w = g.param(&Tensor::matrix(2, 2, ws.to_vec()).unwrap());
    let b = g.param(&Tensor::vector(bs.to_vec()));
    let y = g.linear(x, w, b).unwrap();
    assert_eq!(g.value(y), &expected);

    // upstream g = [1, 1] via sum
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[8.0, 10.0]);
    assert_eq!(g.grad(w).unwrap(), &[1.0, 2.0, 1.0, 2.0]);
    assert_eq!(g.grad(b).unwrap(), &[1.0, 1.0]);
}

#[test]
fn linear_shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let x = vecs(&mut g, &[1.0, 2.0, 3.0]);
    let w = g.constant(&Tensor::zeros(&[2, 2]));
    let b = vecs(&mut g, &[0.0, 0.0]);
    match g.linear(x, w, b) {
        Err(Error::Dimension { left, right, .. }) => {
            assert_eq!(left, vec![2, 2]);
            assert_eq!(right, vec![3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn elementwise_fixed_points() {
    let mut g = Graph::new();
    let z = vecs(&mut g, &[0.0]);
    let s = g.sigmoid(z);
    let t = g.tanh(z);
    assert_eq!(g.value(s), &[0.5]);
    assert_eq!(g.value(t), &[0.0]);
}

#[test]
fn binary_ops_require_equal_shapes() {
    let mut g = Graph::new();
    let a = vecs(&mut g, &[1.0, 2.0]);
    let b = vecs(&mut g, &[1.0]);
    assert!(matches!(g.add(a, b), Err(Error::Dimension { .. })));
    assert!(matches!(g.mul(a, b), Err(Error::Dimension { .. })));
}

#[test]
fn concat_splits_gradient() {
    let mut g = Graph::new();
    let a = g.param(&Tensor::vector(vec![1.0, 2.0]));
    let b = g.param(&Tensor::vector(vec![3.0]));
    let c = g.concat(&[a, b]).unwrap();
    assert_eq!(g.value(c), &[1.0, 2.0, 3.0]);
    let w = g.constant(&Tensor::matrix(1, 3, vec![5.0, 6.0, 7.0]).unwrap());
    let y = g.matvec(w, c).unwrap();
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(a).unwrap(), &[5.0, 6.0]);
    assert_eq!(g.grad(b).unwrap(), &[7.0]);
}

#[test]
fn concat_rejects_matrices() {
    let mut g = Graph::new();
    let m = g.constant(&Tensor::zeros(&[2, 2]));
    assert!(g.concat(&[m]).is_err());
}

#[test]
fn reduction_values() {
    let mut g = Graph::new();
    let a = vecs(&mut g, &[3.0, 4.0]);
    let b = vecs(&mut g, &[-1.0, 2.0, -3.0]);
    let ssq = g.sum_sq(a);
    let l1 = g.l1(b);
    let mean = g.mean(b);
    assert_eq!(g.scalar(ssq), 9.0 + 16.0);
    assert_eq!(g.scalar(l1), 1.0 + 2.0 + 3.0);
    assert!((g.scalar(mean) + 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn l1_zero_subgradient() {
    let mut g = Graph::new();
    let x = g.param(&Tensor::vector(vec![0.0, 0.0]));
    let l = g.l1(x);
    assert_eq!(g.scalar(l), 0.0);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0]);
}

#[test]
fn empty_reduction_input_is_a_domain_error() {
    let mut g = Graph::new();
    assert!(matches!(g.constant_vec(vec![]), Err(Error::Domain(_))));
    assert!(Tensor::new(vec![0], vec![]).is_err());
}

#[test]
fn softmax_xent_values() {
    let mut g = Graph::new();
    let a = vecs(&mut g, &[0.0, 0.0]);
    let b = vecs(&mut g, &[1000.0, 1000.0]);
    let c = vecs(&mut g, &[2.0, 1.0, 0.0]);
    let la = g.softmax_xent(a, 0).unwrap();
    let lb = g.softmax_xent(b, 0).unwrap();
    let lc = g.softmax_xent(c, 0).unwrap();
    let ln2 = 2f64.ln();
    assert!((g.scalar(la) - ln2).abs() < 1e-15);
    assert!((g.scalar(lb) - ln2).abs() < 1e-15);
    let e = std::f64::consts::E;
    let direct = -(e * e / (e * e + e + 1.0)).ln();
    assert!((g.scalar(lc) - direct).abs() < 1e-14);
}

#[test]
fn softmax_xent_target_out_of_range() {
    let mut g = Graph::new();
    let a = vecs(&mut g, &[0.0, 0.0]);
    assert!(matches!(g.softmax_xent(a, 2), Err(Error::Index { .. })));
}

#[test]
fn softmax_xent_gradient_is_probs_minus_onehot() {
    let mut g = Graph::new();
    let logits = g.param(&Tensor::vector(vec![0.5, -1.0, 2.0]));
    let l = g.softmax_xent(logits, 1).unwrap();
    g.backward(l).unwrap();
    let p = softmax(&[0.5, -1.0, 2.0]);
    let grad = g.grad(logits).unwrap();
    for k in 0..3 {
        let expected = p[k] - if k == 1 { 1.0 } else { 0.0 };
        assert!((grad[k] - expected).abs() < 1e-15);
    }
}

#[test]
fn softmax_normalizes_extreme_logits() {
    let mut rng = Rng::new(21);
    for _ in 0..200 {
        let logits: Vec<f64> = (0..30).map(|_| (rng.uniform01() - 0.5) * 2e4).collect();
        let total: f64 = softmax(&logits).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn backward_sum_sq() {
    let mut g = Graph::new();
    let x = g.param(&Tensor::vector(vec![1.0, 2.0]));
    let l = g.sum_sq(x);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_accumulates_over_reuse() {
    let mut g = Graph::new();
    let x = g.param(&Tensor::vector(vec![1.0, -3.0, 0.5]));
    let y = g.add(x, x).unwrap();
    let l = g.sum(y);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
}

#[test]
fn backward_twice_doubles_until_zeroed() {
    let mut g = Graph::new();
    let x = g.param(&Tensor::vector(vec![1.0, 2.0]));
    let l = g.sum_sq(x);
    g.backward(l).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0]);
    g.zero_grad();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.param(&Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn detach_blocks_gradient() {
    let mut g = Graph::new();
    let x = g.param(&Tensor::vector(vec![1.0, 2.0]));
    let d = g.detach(x).unwrap();
    let diff = g.sub(x, d).unwrap();
    let y = g.add(diff, x).unwrap();
    let l = g.sum(y);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
}

#[test]
fn accumulate_into_tensor_grad() {
    let mut g = Graph::new();
    let mut t = Tensor::vector(vec![1.0, 2.0]).with_requires_grad(true);
    let x = g.leaf(&t);
    let l = g.sum_sq(x);
    g.backward(l).unwrap();
    g.accumulate_into(x, &mut t).unwrap();
    g.accumulate_into(x, &mut t).unwrap();
    assert_eq!(t.grad().unwrap(), &[4.0, 8.0]);
    t.zero_grad();
    assert_eq!(t.grad().unwrap(), &[0.0, 0.0]);
}

#[test]
fn grad_check_linear_sum_sq() {
    let mut rng = Rng::new(3);
    let params = vec![randn(&mut rng, &[3]), randn(&mut rng, &[3, 3]), randn(&mut rng, &[3])];
    let report = grad_check(&params, DEFAULT_EPS, |g, v| {
        let y = g.linear(v[0], v[1], v[2])?;
        Ok(g.sum_sq(y))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
    assert_eq!(report.entries_checked, 15);
}

#[test]
fn grad_check_constant_function() {
    let params = vec![Tensor::vector(vec![1.0, 2.0])];
    let report = grad_check(&params, DEFAULT_EPS, |g, _| g.constant_vec(vec![7.0])).unwrap();
    assert_eq!(report.max_rel_error, 0.0);
}

/// Every op kind, 10 seeds, 1e-6.
#[test]
fn grad_check_every_op_kind() {
    type Build = fn(&mut Graph, &[Var]) -> crate::Result<Var>;
    let cases: Vec<(&str, Vec<Vec<usize>>, Build)> = vec![
        ("linear", vec![vec![4], vec![3, 4], vec![3]], |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            Ok(g.sum_sq(y))
        }),
        ("matvec", vec![vec![3, 4], vec![4]], |g, v| {
            let y = g.matvec(v[0], v[1])?;
            Ok(g.sum_sq(y))
        }),
        ("sigmoid", vec![vec![5]], |g, v| {
            let y = g.sigmoid(v[0]);
            Ok(g.sum_sq(y))
        }),
        ("tanh", vec![vec![5]], |g, v| {
            let y = g.tanh(v[0]);
            Ok(g.sum_sq(y))
        }),
        ("add", vec![vec![4], vec![4]], |g, v| {
            let y = g.add(v[0], v[1])?;
            Ok(g.sum_sq(y))
        }),
        ("sub", vec![vec![4], vec![4]], |g, v| {
            let y = g.sub(v[0], v[1])?;
            Ok(g.sum_sq(y))
        }),
        ("mul", vec![vec![4], vec![4]], |g, v| {
            let y = g.mul(v[0], v[1])?;
            let t = g.tanh(y);
            Ok(g.sum(t))
        }),
        ("scale", vec![vec![4]], |g, v| {
            let y = g.scale(v[0], -1.7);
            Ok(g.sum_sq(y))
        }),
        ("concat", vec![vec![2], vec![3], vec![5, 5]], |g, v| {
            let c = g.concat(&[v[0], v[1]])?;
            let y = g.matvec(v[2], c)?;
            Ok(g.sum_sq(y))
        }),
        ("sum", vec![vec![4]], |g, v| {
            let y = g.tanh(v[0]);
            Ok(g.sum(y))
        }),
        ("mean", vec![vec![4]], |g, v| {
            let y = g.sigmoid(v[0]);
            Ok(g.mean(y))
        }),
        ("l1", vec![vec![6]], |g, v| Ok(g.l1(v[0]))),
        ("softmax_xent", vec![vec![7]], |g, v| g.softmax_xent(v[0], 3)),
        ("gather_mean", vec![vec![6, 3]], |g, v| {
            let y = g.gather_mean(v[0], &[1, 4, 1, 5])?;
            let t = g.tanh(y);
            Ok(g.sum_sq(t))
        }),
    ];
    for (name, shapes, build) in cases {
        for seed in 0..10 {
            let mut rng = Rng::new(1000 + seed);
            let params: Vec<Tensor> = shapes.iter().map(|s| randn(&mut rng, s)).collect();
            let report = grad_check(&params, DEFAULT_EPS, build).unwrap();
            assert!(
                report.max_rel_error < 1e-6,
                "{name} seed {seed}: {report:?}"
            );
        }
    }
}

#[test]
fn grad_check_freezes_detached_values() {
    // f(x) = Σ (x - stopgrad(mean(x)))² has backward gradient 2(x - mean),
    // which is also the true gradient; with detach frozen the check is exact.
    let params = vec![Tensor::vector(vec![0.3, -1.2, 2.0])];
    let report = grad_check(&params, DEFAULT_EPS, |g, v| {
        let m = g.mean(v[0]);
        let md = g.detach(m)?;
        let mval = g.scalar(md);
        let c = g.constant_vec(vec![mval; 3])?;
        let d = g.sub(v[0], c)?;
        Ok(g.sum_sq(d))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-8);

    // A detached quantity the output genuinely depends on: f(x) = x · stopgrad(x).
    // Backward gives stopgrad(x); the frozen oracle agrees.
    let params = vec![Tensor::vector(vec![1.5])];
    let report = grad_check(&params, DEFAULT_EPS, |g, v| {
        let d = g.detach(v[0])?;
        let y = g.mul(v[0], d)?;
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-8);
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = Rng::new(77);
        let params = [randn(&mut rng, &[6]), randn(&mut rng, &[4, 6]), randn(&mut rng, &[4])];
        let mut g = Graph::new();
        let v: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
        let y = g.linear(v[0], v[1], v[2]).unwrap();
        let t = g.tanh(y);
        let l = g.softmax_xent(t, 2).unwrap();
        g.backward(l).unwrap();
        (
            g.scalar(l).to_bits(),
            v.iter()
                .flat_map(|&x| g.grad(x).unwrap().iter().map(|f| f.to_bits()).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn outputs_stay_finite(xs in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let mut g = Graph::new();
            let x = g.param(&Tensor::vector(xs.clone()));
            let s = g.sigmoid(x);
            let t = g.tanh(x);
            let st = g.mul(s, t).unwrap();
            let l = g.softmax_xent(st, 0).unwrap();
            prop_assert!(g.value(s).iter().chain(g.value(t)).all(|v| v.is_finite()));
            prop_assert!(g.scalar(l).is_finite());
            g.backward(l).unwrap();
            prop_assert!(g.grad(x).unwrap().iter().all(|v| v.is_finite()));
        }

        #[test]
        fn softmax_sums_to_one(xs in prop::collection::vec(-1e4f64..1e4, 1..40)) {
            let total: f64 = softmax(&xs).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
