use nial_core::tensor::{grad_check, grad_check_many, Graph, Tensor};
use nial_core::NialError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    t(
        shape,
        &(0..n)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<_>>(),
    )
}

/// Random values bounded away from zero (and from each other for pooling).
fn spread(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| 0.1 + 0.05 * i as f64).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    for v in vals.iter_mut() {
        if rng.random::<bool>() {
            *v = -*v;
        }
    }
    t(shape, &vals)
}

const SEEDS: u64 = 20;

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let i = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
    let c = g.matmul(a, i).unwrap();
    assert_eq!(g.data(c), &[1., 2., 3., 4.]);

    let a = g.constant(t(&[1, 2], &[1., 2.]));
    let b = g.constant(t(&[2, 1], &[3., 4.]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(c), &[1, 1]);
    assert_eq!(g.data(c), &[11.]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, NialError::Dimension(_)));
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn matmul_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        let err = grad_check_many(
            |g, v| {
                let c = g.matmul(v[0], v[1])?;
                Ok(g.sum(c))
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn bmm_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[2, 3, 4], &mut rng);
        let b = random(&[2, 4, 2], &mut rng);
        let w = random(&[2, 3, 2], &mut rng);
        let err = grad_check_many(
            |g, v| {
                let c = g.bmm(v[0], v[1])?;
                let c = g.mul(c, v[2])?;
                Ok(g.sum(c))
            },
            &[a, b, w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn conv1d_hand_example() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 4], &[1., 2., 3., 4.]));
    let w = g.constant(t(&[1, 1, 3], &[1., 0., -1.]));
    let b = g.constant(t(&[1], &[0.]));
    let y = g.conv1d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 2]);
    assert_eq!(g.data(y), &[-2., -2.]);
}

#[test]
fn conv1d_identity_kernel() {
    let mut g = Graph::new();
    let data = [0.5, -1.0, 2.0, 3.25, 7.0];
    let x = g.constant(t(&[1, 1, 5], &data));
    let w = g.constant(t(&[1, 1, 1], &[1.]));
    let b = g.constant(t(&[1], &[0.]));
    let y = g.conv1d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.data(y), &data);
}

#[test]
fn conv1d_kernel_too_large() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 1, 3]));
    let w = g.constant(Tensor::zeros(&[1, 1, 6]));
    let b = g.constant(Tensor::zeros(&[1]));
    assert!(matches!(
        g.conv1d(x, w, b, 1, 1),
        Err(NialError::Dimension(_))
    ));
    // fits once padding covers it
    let w = g.constant(Tensor::zeros(&[1, 1, 5]));
    assert!(g.conv1d(x, w, b, 1, 1).is_ok());
}

#[test]
fn conv1d_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = random(&[2, 2, 11], &mut rng);
        let w = random(&[3, 2, 5], &mut rng);
        let b = random(&[3], &mut rng);
        let stride = 1 + (seed as usize % 2);
        let padding = seed as usize % 3;
        let err = grad_check_many(
            |g, v| {
                let y = g.conv1d(v[0], v[1], v[2], stride, padding)?;
                let y2 = g.mul(y, y)?;
                Ok(g.sum(y2))
            },
            &[x, w, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn maxpool_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 4], &[1., 3., 2., 5.]));
    let y = g.maxpool1d(x, 2, 2).unwrap();
    assert_eq!(g.data(y), &[3., 5.]);

    let mut g = Graph::new();
    let x = g.param(Tensor::full(&[1, 1, 6], 2.0));
    let y = g.maxpool1d(x, 3, 3).unwrap();
    assert_eq!(g.data(y), &[2., 2.]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1., 0., 0., 1., 0., 0.]);
}

#[test]
fn maxpool_window_larger_than_input() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 1, 3]));
    assert!(matches!(g.maxpool1d(x, 4, 1), Err(NialError::Dimension(_))));
}

#[test]
fn maxpool_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let x = spread(&[2, 3, 10], &mut rng);
        let w = random(&[2, 3, 4], &mut rng);
        let err = grad_check_many(
            |g, v| {
                let y = g.maxpool1d(v[0], 3, 2)?;
                let y = g.mul(y, v[1])?;
                Ok(g.sum(y))
            },
            &[x, w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn output_lengths_follow_formulas() {
    for len in 1..=20 {
        for k in 1..=7 {
            for stride in 1..=3 {
                for padding in 0..=3 {
                    let mut g = Graph::new();
                    let x = g.constant(Tensor::ones(&[1, 1, len]));
                    let w = g.constant(Tensor::ones(&[1, 1, k]));
                    let b = g.constant(Tensor::zeros(&[1]));
                    let r = g.conv1d(x, w, b, stride, padding);
                    if k <= len + 2 * padding {
                        let expect = (len + 2 * padding - k) / stride + 1;
                        assert_eq!(g.shape(r.unwrap())[2], expect);
                    } else {
                        assert!(r.is_err());
                    }
                }
                let mut g = Graph::new();
                let x = g.constant(Tensor::ones(&[1, 1, len]));
                let r = g.maxpool1d(x, k, stride);
                if k <= len {
                    assert_eq!(g.shape(r.unwrap())[2], (len - k) / stride + 1);
                } else {
                    assert!(r.is_err());
                }
            }
        }
    }
}

#[test]
fn activation_values() {
    let mut g = Graph::new();
    let x = g.constant(t(&[3], &[0., 0., 0.]));
    let s = g.softmax(x, 0).unwrap();
    for v in g.data(s) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let z = g.constant(t(&[1], &[0.]));
    let sg = g.sigmoid(z);
    assert_eq!(g.data(sg), &[0.5]);

    let big = g.constant(t(&[2], &[1000., 0.]));
    let s = g.softmax(big, 0).unwrap();
    let d = g.data(s);
    assert!(d.iter().all(|v| v.is_finite()));
    assert!((d[0] - 1.0).abs() < 1e-15 && d[1] < 1e-300);

    let r = g.constant(t(&[4], &[-2., -0.5, 0., 3.]));
    let r = g.relu(r);
    assert_eq!(g.data(r), &[0., 0., 0., 3.]);
}

#[test]
fn softmax_slices_sum_to_one_on_each_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for axis in 0..3 {
        let mut g = Graph::new();
        let mut x = random(&[3, 4, 5], &mut rng);
        x.data_mut().iter_mut().for_each(|v| *v *= 30.0);
        let x = g.constant(x);
        let s = g.softmax(x, axis).unwrap();
        let shape = g.shape(s).to_vec();
        let d = g.data(s);
        let st = [20, 5, 1];
        let (n, stride) = (shape[axis], st[axis]);
        for start in 0..d.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            let sum: f64 = (0..n).map(|a| d[start + a * stride]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert!(d.iter().all(|&v| v > 0.0 && v <= 1.0));
    }
}

#[test]
fn softmax_bad_axis() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 2]));
    assert!(g.softmax(x, 2).is_err());
}

#[test]
fn activation_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let x = spread(&[3, 4], &mut rng);
        let w = random(&[3, 4], &mut rng);
        for which in 0..4 {
            let err = grad_check_many(
                |g, v| {
                    let y = match which {
                        0 => g.relu(v[0]),
                        1 => g.sigmoid(v[0]),
                        2 => g.softmax(v[0], 1)?,
                        _ => g.softmax(v[0], 0)?,
                    };
                    let y = g.mul(y, v[1])?;
                    Ok(g.sum(y))
                },
                &[x.clone(), w.clone()],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "seed {seed} op {which}: {err}");
        }
    }
}

#[test]
fn layernorm_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 3], &[1., 2., 3.]));
    let gamma = g.constant(Tensor::ones(&[3]));
    let beta = g.constant(Tensor::zeros(&[3]));
    let y = g.layernorm(x, gamma, beta, 1e-5).unwrap();
    let expect = [-1.2247, 0.0, 1.2247];
    for (a, e) in g.data(y).iter().zip(expect) {
        assert!((a - e).abs() < 1e-4, "{a} vs {e}");
    }

    let x = g.constant(t(&[2, 3], &[7., 7., 7., -1., -1., -1.]));
    let beta = g.constant(t(&[3], &[0.5, -0.25, 2.0]));
    let y = g.layernorm(x, gamma, beta, 1e-5).unwrap();
    assert_eq!(g.data(y), &[0.5, -0.25, 2.0, 0.5, -0.25, 2.0]);

    let bad = g.constant(Tensor::ones(&[4]));
    assert!(g.layernorm(x, bad, beta, 1e-5).is_err());
}

#[test]
fn layernorm_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let x = random(&[2, 3, 5], &mut rng);
        let gamma = random(&[5], &mut rng);
        let beta = random(&[5], &mut rng);
        let w = random(&[2, 3, 5], &mut rng);
        let err = grad_check_many(
            |g, v| {
                let y = g.layernorm(v[0], v[1], v[2], 1e-5)?;
                let y = g.mul(y, v[3])?;
                Ok(g.sum(y))
            },
            &[x, gamma, beta, w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::new();
    let z = g.constant(t(&[1, 2], &[0., 0.]));
    let l = g.categorical_cross_entropy(z, &[0]).unwrap();
    assert!((g.value(l).item().unwrap() - 2f64.ln()).abs() < 1e-15);

    let z = g.constant(t(&[1, 3], &[800., 0., -5.]));
    let l = g.categorical_cross_entropy(z, &[0]).unwrap();
    assert!(g.value(l).item().unwrap().abs() < 1e-300);

    let z = g.constant(t(&[2, 3], &[0.; 6]));
    match g.categorical_cross_entropy(z, &[1, 3]) {
        Err(NialError::Label(msg)) => assert!(msg.contains("row 1"), "{msg}"),
        other => panic!("expected label error, got {other:?}"),
    }
}

#[test]
fn binary_cross_entropy_examples() {
    let mut g = Graph::new();
    let z = g.constant(t(&[1, 1], &[0.]));
    let l1 = g.binary_cross_entropy(z, &[1]).unwrap();
    let l0 = g.binary_cross_entropy(z, &[0]).unwrap();
    assert!((g.value(l1).item().unwrap() - 2f64.ln()).abs() < 1e-15);
    assert_eq!(g.value(l0).item(), g.value(l1).item());

    let z = g.constant(t(&[2, 1], &[1000., -1000.]));
    let l = g.binary_cross_entropy(z, &[1, 0]).unwrap();
    assert_eq!(g.value(l).item().unwrap(), 0.0);

    assert!(matches!(
        g.binary_cross_entropy(z, &[1, 2]),
        Err(NialError::Label(_))
    ));
}

#[test]
fn loss_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let z = random(&[4, 3], &mut rng);
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
        let err = grad_check(|g, v| g.categorical_cross_entropy(v, &labels), &z, 1e-5).unwrap();
        assert!(err < 1e-6, "cce seed {seed}: {err}");

        let z = random(&[5, 1], &mut rng);
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..2)).collect();
        let err = grad_check(|g, v| g.binary_cross_entropy(v, &labels), &z, 1e-5).unwrap();
        assert!(err < 1e-6, "bce seed {seed}: {err}");
    }
}

#[test]
fn reshape_permute_mean_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let x = random(&[2, 3, 4], &mut rng);
        let y = random(&[4], &mut rng);
        let w = random(&[3, 2], &mut rng);
        let err = grad_check_many(
            |g, v| {
                let a = g.add_trailing(v[0], v[1])?;
                let a = g.permute(a, &[2, 0, 1])?;
                let a = g.reshape(a, &[4, 2, 3])?;
                let a = g.mean_axis(a, 0)?;
                let a = g.transpose_last(a)?;
                let a = g.mul(a, v[2])?;
                let a = g.scale(a, 1.5);
                let a2 = g.mul(a, a)?;
                Ok(g.mean(a2))
            },
            &[x, y, w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn permute_moves_elements() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
    let y = g.transpose_last(x).unwrap();
    assert_eq!(g.shape(y), &[3, 2]);
    assert_eq!(g.data(y), &[1., 4., 2., 5., 3., 6.]);
    assert!(g.permute(x, &[0, 0]).is_err());
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(t(&[3], &[4., -1., 2.]));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1., 1., 1.]);

    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1., 2.]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2., 4.]);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4., 8.]);
    g.zero_grad();
    assert_eq!(g.grad(x).unwrap(), &[0., 0.]);
}

#[test]
fn backward_twice_doubles_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut g = Graph::new();
    let x = g.param(random(&[2, 1, 12], &mut rng));
    let w = g.param(random(&[3, 1, 3], &mut rng));
    let b = g.param(random(&[3], &mut rng));
    let y = g.conv1d(x, w, b, 1, 1).unwrap();
    let y = g.maxpool1d(y, 2, 2).unwrap();
    let y = g.sigmoid(y);
    let l = g.mean(y);
    g.backward(l).unwrap();
    let once: Vec<Vec<f64>> = [x, w, b]
        .iter()
        .map(|&v| g.grad(v).unwrap().to_vec())
        .collect();
    g.backward(l).unwrap();
    for (v, o) in [x, w, b].iter().zip(&once) {
        let twice: Vec<f64> = o.iter().map(|a| 2.0 * a).collect();
        assert_eq!(g.grad(*v).unwrap(), twice.as_slice());
    }
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.param(Tensor::ones(&[2]));
    assert!(matches!(g.backward(x), Err(NialError::Contract(_))));
}

#[test]
fn constants_get_no_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::ones(&[2]));
    let c = g.constant(Tensor::ones(&[2]));
    let y = g.mul(x, c).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad(c).is_none());
    assert!(g.grad(x).is_some());
}

#[test]
fn grad_check_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[7], &mut rng);
    let err = grad_check(|g, v| Ok(g.sum(v)), &x, 1e-5).unwrap();
    assert!(err < 1e-10, "{err}");

    let x = spread(&[9], &mut rng);
    let err = grad_check(
        |g, v| {
            let r = g.relu(v);
            Ok(g.sum(r))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn ops_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut g = Graph::new();
        let x = g.param(random(&[2, 2, 16], &mut rng));
        let w = g.param(random(&[4, 2, 5], &mut rng));
        let b = g.param(random(&[4], &mut rng));
        let y = g.conv1d(x, w, b, 1, 2).unwrap();
        let y = g.softmax(y, 2).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        (g.data(y).to_vec(), g.grad(w).unwrap().to_vec())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(ga, gb);
}

#[test]
fn relu_and_maxpool_propagate_nan() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![1, 1, 4], vec![1.0, f64::NAN, -2.0, 3.0]).unwrap());
    let r = g.relu(x);
    assert!(g.data(r)[1].is_nan());
    assert_eq!(g.data(r)[2], 0.0);
    let p = g.maxpool1d(x, 2, 2).unwrap();
    assert!(g.data(p)[0].is_nan());
    assert_eq!(g.data(p)[1], 3.0);
}
