use super::*;
use crate::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k) = a.dims2().unwrap();
    let n = b.dims2().unwrap().1;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a.data()[i * k + l] * b.data()[l * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

#[test]
fn matmul_identity_and_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[3, 3]);
    let i = Tensor::identity(3);
    assert_eq!(matmul(&i, &a).unwrap().data(), a.data());
    let z = Tensor::zeros(&[3, 2]);
    assert!(matmul(&a, &z).unwrap().data().iter().all(|v| *v == 0.0));
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&mut rng, &[4, 5]);
    let b = rand_tensor(&mut rng, &[5, 3]);
    let c = matmul(&a, &b).unwrap();
    let oracle = naive_matmul(&a, &b);
    let diff = c
        .data()
        .iter()
        .zip(&oracle)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn matmul_shape_mismatch() {
    let a = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[2, 3]);
    assert!(matches!(matmul(&a, &b), Err(Error::Dimension { .. })));
}

#[test]
fn cosine_examples() {
    let t = |rows: &[&[f64]]| Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
    let c = |a: &Tensor, b: &Tensor| cosine_matrix(a, b, COSINE_EPS).unwrap().data()[0];
    assert_eq!(c(&t(&[&[1.0, 0.0]]), &t(&[&[1.0, 0.0]])), 1.0);
    assert_eq!(c(&t(&[&[1.0, 0.0]]), &t(&[&[0.0, 1.0]])), 0.0);
    let v = c(&t(&[&[1.0, 1.0]]), &t(&[&[1.0, 0.0]]));
    assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    // zero vector gives ~0 instead of an error
    assert_eq!(c(&t(&[&[0.0, 0.0]]), &t(&[&[1.0, 0.0]])), 0.0);
}

#[test]
fn log_sum_exp_examples() {
    assert_eq!(log_sum_exp(&[3.5]).unwrap(), 3.5);
    assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
    let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
    assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
    assert!(matches!(log_sum_exp(&[]), Err(Error::Domain { .. })));
}

#[test]
fn backward_product_rule() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(2.0)).unwrap();
    let y = g.param(Tensor::scalar(3.0)).unwrap();
    let z = g.mul(x, y).unwrap();
    let grads = g.backward(z).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[3.0]);
    assert_eq!(grads.get(y).unwrap().data(), &[2.0]);
}

#[test]
fn backward_lse_of_duplicated_input() {
    for x0 in [-3.0, 0.0, 7.5] {
        let mut g = Graph::new();
        let x = g.param(Tensor::matrix(1, 1, vec![x0]).unwrap()).unwrap();
        let xx = g.concat_cols(&[x, x]).unwrap();
        let l = g.log_sum_exp(xx).unwrap();
        let grads = g.backward(l).unwrap();
        assert!((grads.get(x).unwrap().data()[0] - 1.0).abs() < 1e-15);
    }
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2, 2])).unwrap();
    let y = g.tanh(x).unwrap();
    assert!(matches!(g.backward(y), Err(Error::Usage { .. })));
}

#[test]
fn non_finite_values_are_errors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(1e300)).unwrap();
    assert!(matches!(g.scale(x, 1e300), Err(Error::NonFinite { .. })));
    assert!(g.constant(Tensor::scalar(f64::NAN)).is_err());
}

#[test]
fn fd_check_reference_functions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = rand_tensor(&mut rng, &[3, 4]);
    let sq = finite_diff_check(
        |g, v| {
            let m = g.mul(v[0], v[0])?;
            g.sum(m)
        },
        &[p.clone()],
        1e-5,
    )
    .unwrap();
    assert!(sq < 1e-9, "{sq}");

    let th = finite_diff_check(
        |g, v| {
            let a = g.tanh(v[0])?;
            let b = g.scale(a, 1.7)?;
            let c = g.tanh(b)?;
            let d = g.mul(c, a)?;
            g.sum(d)
        },
        &[p.clone()],
        1e-5,
    )
    .unwrap();
    assert!(th < 1e-6, "{th}");

    let constant = finite_diff_check(
        |g, _| g.constant(Tensor::scalar(4.0)),
        &[p],
        1e-5,
    )
    .unwrap();
    assert_eq!(constant, 0.0);
}

#[test]
fn fd_check_rejects_bad_step() {
    assert!(finite_diff_check(|g, v| g.sum(v[0]), &[Tensor::scalar(1.0)], 0.0).is_err());
}

/// Random weighting keeps reductions from hiding per-element gradient bugs.
fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> crate::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = rand_tensor(&mut rng, g.value(x).shape());
    let w = g.constant(w)?;
    let m = g.mul(x, w)?;
    g.sum(m)
}

fn check_op(name: &str, shapes: &[&[usize]], f: impl Fn(&mut Graph, &[Var]) -> crate::Result<Var>) {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + 7);
        let params: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
        let err = finite_diff_check(
            |g, v| {
                let y = f(g, v)?;
                if g.value(y).numel() == 1 {
                    Ok(y)
                } else {
                    weighted_sum(g, y, seed)
                }
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{name} seed {seed}: {err}");
    }
}

#[test]
fn every_op_passes_gradient_check() {
    check_op("matmul", &[&[3, 4], &[4, 2]], |g, v| g.matmul(v[0], v[1]));
    check_op("transpose", &[&[3, 4]], |g, v| g.transpose(v[0]));
    check_op("add", &[&[2, 3], &[2, 3]], |g, v| g.add(v[0], v[1]));
    check_op("sub", &[&[2, 3], &[2, 3]], |g, v| g.sub(v[0], v[1]));
    check_op("mul", &[&[2, 3], &[2, 3]], |g, v| g.mul(v[0], v[1]));
    check_op("scale", &[&[2, 3]], |g, v| g.scale(v[0], -2.5));
    check_op("add_scalar", &[&[2, 3]], |g, v| g.add_scalar(v[0], 0.3));
    check_op("add_row", &[&[3, 4], &[4]], |g, v| g.add_row(v[0], v[1]));
    check_op("mul_row", &[&[3, 4], &[4]], |g, v| g.mul_row(v[0], v[1]));
    check_op("sigmoid", &[&[3, 4]], |g, v| g.sigmoid(v[0]));
    check_op("tanh", &[&[3, 4]], |g, v| g.tanh(v[0]));
    check_op("relu", &[&[3, 4]], |g, v| g.relu(v[0]));
    check_op("swish", &[&[3, 4]], |g, v| g.swish(v[0]));
    check_op("layer_norm", &[&[3, 5]], |g, v| g.layer_norm(v[0], 1e-5));
    check_op("softmax_rows", &[&[3, 5]], |g, v| g.softmax_rows(v[0]));
    check_op("sum", &[&[3, 5]], |g, v| g.sum(v[0]));
    check_op("mean", &[&[3, 5]], |g, v| g.mean(v[0]));
    check_op("mean_rows", &[&[3, 5]], |g, v| g.mean_rows(v[0]));
    check_op("concat_rows", &[&[2, 3], &[1, 3]], |g, v| g.concat_rows(&[v[0], v[1]]));
    check_op("concat_cols", &[&[2, 3], &[2, 1]], |g, v| g.concat_cols(&[v[0], v[1]]));
    check_op("slice_rows", &[&[4, 3]], |g, v| g.slice_rows(v[0], 1, 3));
    check_op("slice_cols", &[&[3, 5]], |g, v| g.slice_cols(v[0], 2, 4));
    check_op("gather", &[&[3, 3]], |g, v| g.gather(v[0], &[0, 4, 4, 8]));
    check_op("gather_rows", &[&[4, 3]], |g, v| g.gather_rows(v[0], &[3, 0, 3]));
    check_op("cosine_matrix", &[&[3, 4], &[5, 4]], |g, v| {
        g.cosine_matrix(v[0], v[1], COSINE_EPS)
    });
    check_op("log_sum_exp", &[&[2, 4]], |g, v| g.log_sum_exp(v[0]));
    check_op("depthwise_conv", &[&[6, 3], &[5, 3]], |g, v| {
        g.depthwise_conv(v[0], v[1])
    });
}

#[test]
fn shared_subexpression_matches_duplicated_subgraph() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = rand_tensor(&mut rng, &[2, 3]);

    let mut g = Graph::new();
    let x = g.param(p.clone()).unwrap();
    let t = g.tanh(x).unwrap();
    let y = g.mul(t, t).unwrap();
    let z = g.add(y, t).unwrap();
    let root = g.sum(z).unwrap();
    let shared = g.backward(root).unwrap().get(x).unwrap().clone();

    let mut g = Graph::new();
    let x = g.param(p).unwrap();
    let t1 = g.tanh(x).unwrap();
    let t2 = g.tanh(x).unwrap();
    let t3 = g.tanh(x).unwrap();
    let y = g.mul(t1, t2).unwrap();
    let z = g.add(y, t3).unwrap();
    let root = g.sum(z).unwrap();
    let dup = g.backward(root).unwrap().get(x).unwrap().clone();

    assert!(shared.max_abs_diff(&dup) < 1e-15);
}

proptest! {
    #[test]
    fn cosine_entries_in_unit_range(
        a in prop::collection::vec(-1e3f64..1e3, 12),
        b in prop::collection::vec(-1e3f64..1e3, 8),
    ) {
        let a = Tensor::matrix(3, 4, a).unwrap();
        let b = Tensor::matrix(2, 4, b).unwrap();
        let c = cosine_matrix(&a, &b, COSINE_EPS).unwrap();
        for v in c.data() {
            prop_assert!(*v >= -1.0 - 1e-9 && *v <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn log_sum_exp_bounds(x in prop::collection::vec(-500f64..500.0, 1..20)) {
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let v = log_sum_exp(&x).unwrap();
        prop_assert!(v >= m);
        prop_assert!(v <= m + (x.len() as f64).ln() + 1e-12);
    }
}
