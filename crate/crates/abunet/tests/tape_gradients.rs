//! Gradient verification for every tape primitive against the central
//! finite-difference oracle, plus the tape contract tests (accumulation,
//! determinism, error paths).

use abunet::gradcheck::check_graph;
use abunet::tape::{Tape, UnaryFn};
use abunet::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

fn randn(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Random positive-weight projection so the scalar loss sees every output.
fn project(tape: &mut Tape<f64>, y: abunet::ValueId, rng: &mut ChaCha8Rng) -> abunet::ValueId {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let r = Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.5..1.5)).collect()).unwrap();
    let r_vid = tape.leaf_tensor(&r).unwrap();
    let prod = tape.mul(y, r_vid).unwrap();
    tape.sum(prod).unwrap()
}

#[test]
fn forward_shape_examples() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(vec![2, 3], vec![1.0; 6], false).unwrap();
    let b = tape.leaf(vec![3, 4], vec![1.0; 12], false).unwrap();
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.shape(c), &[2, 4]);

    // scaling by α = 1 is the identity
    let alpha = tape.leaf(vec![1], vec![1.0], false).unwrap();
    let x = tape.leaf(vec![2], vec![1.0, 2.0], false).unwrap();
    let y = tape.scalar_mul(alpha, x).unwrap();
    assert_eq!(tape.value(y), &[1.0, 2.0]);
}

#[test]
fn conv2d_same_padded_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::<f64>::new();
    let x = tape
        .leaf(vec![1, 32, 32, 3], (0..32 * 32 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(), false)
        .unwrap();
    let k = tape
        .leaf(vec![5, 5, 3, 64], (0..5 * 5 * 3 * 64).map(|_| rng.gen_range(-0.1..0.1)).collect(), false)
        .unwrap();
    let y = tape.conv2d(x, k).unwrap();
    assert_eq!(tape.shape(y), &[1, 32, 32, 64]);
}

#[test]
fn shape_mismatch_names_primitive_and_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(vec![2, 3], vec![0.0; 6], false).unwrap();
    let b = tape.leaf(vec![4, 2], vec![0.0; 8], false).unwrap();
    let err = tape.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("matmul"), "{err}");
    assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
}

#[test]
fn backward_square_and_linear_alpha() {
    // f(x) = x² at x = 3 → df/dx = 6
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(vec![1], vec![3.0], true).unwrap();
    let y = tape.mul(x, x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[6.0]);

    // f = sum(α·relu(x)), x = [-1, 2], α = 1 → df/dα = relu(-1) + relu(2) = 2
    let mut tape = Tape::<f64>::new();
    let alpha = tape.leaf(vec![1], vec![1.0], true).unwrap();
    let x = tape.leaf(vec![2], vec![-1.0, 2.0], true).unwrap();
    let r = tape.unary(UnaryFn::Relu, x).unwrap();
    let scaled = tape.scalar_mul(alpha, r).unwrap();
    let loss = tape.sum(scaled).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(alpha).unwrap(), &[2.0]);
}

#[test]
fn gradient_accumulation_is_additive() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(vec![1], vec![3.0], true).unwrap();
    let y = tape.mul(x, x).unwrap();
    tape.backward(y).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[12.0]);
}

#[test]
fn backward_error_paths() {
    let mut empty = Tape::<f64>::new();
    let phantom = {
        let mut other = Tape::<f64>::new();
        other.leaf(vec![1], vec![0.0], false).unwrap()
    };
    assert!(empty.backward(phantom).is_err());

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(vec![2], vec![1.0, 2.0], true).unwrap();
    let err = tape.backward(x).unwrap_err().to_string();
    assert!(err.contains("scalar"), "{err}");
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::<f64>::new();
        let x = tape
            .leaf(vec![2, 4, 4, 3], (0..96).map(|_| rng.gen_range(-1.0..1.0)).collect(), false)
            .unwrap();
        let k = tape
            .leaf(vec![3, 3, 3, 2], (0..54).map(|_| rng.gen_range(-1.0..1.0)).collect(), false)
            .unwrap();
        let y = tape.conv2d(x, k).unwrap();
        let p = tape.maxpool(y, 3, 2).unwrap();
        tape.value(p).to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn elementwise_and_reduction_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..20 {
        let n = rng.gen_range(1..8);
        let mut params = vec![randn(&mut rng, vec![n]), randn(&mut rng, vec![n])];
        let mut seed_rng = ChaCha8Rng::seed_from_u64(100 + case);
        check_graph("add_mul", &mut params, EPS, |tape, vids| {
            let mut local = seed_rng.clone();
            let s = tape.add(vids[0], vids[1])?;
            let m = tape.mul(s, vids[0])?;
            Ok(project(tape, m, &mut local))
        })
        .unwrap();
    }
}

#[test]
fn scalar_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..20 {
        let n = rng.gen_range(2..7);
        let mut scalar = randn(&mut rng, vec![1]);
        // keep the divisor away from zero
        if scalar.data()[0].abs() < 0.3 {
            scalar.data_mut()[0] = 0.5;
        }
        let mut params = vec![scalar, randn(&mut rng, vec![n])];
        let mut seed_rng = ChaCha8Rng::seed_from_u64(200 + case);
        check_graph("scalar_mul_div", &mut params, EPS, |tape, vids| {
            let mut local = seed_rng.clone();
            let y = tape.scalar_mul(vids[0], vids[1])?;
            let z = tape.scalar_div(y, vids[0])?;
            let w = tape.scalar_mul(vids[0], z)?;
            Ok(project(tape, w, &mut local))
        })
        .unwrap();
    }
}

#[test]
fn unary_gradients_all_functions() {
    let fns = [
        UnaryFn::Tanh,
        UnaryFn::Relu,
        UnaryFn::Elu,
        UnaryFn::Selu,
        UnaryFn::Sigmoid,
        UnaryFn::Abs,
        UnaryFn::Exp,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for f in fns {
        for case in 0..15 {
            let n = rng.gen_range(1..9);
            let mut params = vec![randn(&mut rng, vec![n])];
            // keep clear of the relu/abs kinks where FD is one-sided
            for v in params[0].data_mut() {
                if v.abs() < 1e-3 {
                    *v = 0.25;
                }
            }
            let mut seed_rng = ChaCha8Rng::seed_from_u64(300 + case);
            check_graph(f.name(), &mut params, EPS, |tape, vids| {
                let mut local = seed_rng.clone();
                let y = tape.unary(f, vids[0])?;
                Ok(project(tape, y, &mut local))
            })
            .unwrap();
        }
    }
}

#[test]
fn swish_gradients_including_beta() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..15 {
        let n = rng.gen_range(1..9);
        let mut params = vec![randn(&mut rng, vec![n]), randn(&mut rng, vec![1])];
        let mut seed_rng = ChaCha8Rng::seed_from_u64(400 + case);
        check_graph("swish", &mut params, EPS, |tape, vids| {
            let mut local = seed_rng.clone();
            let y = tape.swish(vids[0], vids[1])?;
            Ok(project(tape, y, &mut local))
        })
        .unwrap();
    }
}

#[test]
fn softmax_stack_weighted_sum_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..15 {
        let n = rng.gen_range(2..6);
        let mut params = vec![
            randn(&mut rng, vec![1]),
            randn(&mut rng, vec![1]),
            randn(&mut rng, vec![1]),
            randn(&mut rng, vec![n]),
            randn(&mut rng, vec![n]),
            randn(&mut rng, vec![n]),
        ];
        let mut seed_rng = ChaCha8Rng::seed_from_u64(500 + case);
        check_graph("softmax_weighted_sum", &mut params, EPS, |tape, vids| {
            let mut local = seed_rng.clone();
            let stacked = tape.stack_scalars(&[vids[0], vids[1], vids[2]])?;
            let w = tape.softmax1d(stacked)?;
            let y = tape.weighted_sum(w, &[vids[3], vids[4], vids[5]])?;
            Ok(project(tape, y, &mut local))
        })
        .unwrap();
    }
}

#[test]
fn matmul_bias_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..15 {
        let (m, k, n) = (
            rng.gen_range(1..5),
            rng.gen_range(1..5),
            rng.gen_range(1..5),
        );
        let mut params = vec![
            randn(&mut rng, vec![m, k]),
            randn(&mut rng, vec![k, n]),
            randn(&mut rng, vec![n]),
        ];
        let mut seed_rng = ChaCha8Rng::seed_from_u64(600 + case);
        check_graph("matmul_bias", &mut params, EPS, |tape, vids| {
            let mut local = seed_rng.clone();
            let mm = tape.matmul(vids[0], vids[1])?;
            let y = tape.bias_add(mm, vids[2])?;
            Ok(project(tape, y, &mut local))
        })
        .unwrap();
    }
}

#[test]
fn conv_pool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..8 {
        let (b, h, w, cin, cout) = (
            rng.gen_range(1..3),
            rng.gen_range(3..6),
            rng.gen_range(3..6),
            rng.gen_range(1..3),
            rng.gen_range(1..3),
        );
        let kh = [1, 3, 5][rng.gen_range(0..3)];
        let mut params = vec![
            randn(&mut rng, vec![b, h, w, cin]),
            randn(&mut rng, vec![kh, kh, cin, cout]),
            randn(&mut rng, vec![cout]),
        ];
        let mut seed_rng = ChaCha8Rng::seed_from_u64(700 + case);
        check_graph("conv_maxpool", &mut params, EPS, |tape, vids| {
            let mut local = seed_rng.clone();
            let c = tape.conv2d(vids[0], vids[1])?;
            let cb = tape.bias_add(c, vids[2])?;
            let p = tape.maxpool(cb, 3, 2)?;
            Ok(project(tape, p, &mut local))
        })
        .unwrap();

        let mut seed_rng = ChaCha8Rng::seed_from_u64(750 + case);
        check_graph("conv_avgpool", &mut params, EPS, |tape, vids| {
            let mut local = seed_rng.clone();
            let c = tape.conv2d(vids[0], vids[1])?;
            let p = tape.avgpool(c, 3, 2)?;
            Ok(project(tape, p, &mut local))
        })
        .unwrap();
    }
}

#[test]
fn dropout_and_reshape_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..10 {
        let n = rng.gen_range(4..12);
        // frozen mask, as required for deterministic finite differences
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.5) { 0.0 } else { 2.0 })
            .collect();
        let mut params = vec![randn(&mut rng, vec![n])];
        let mut seed_rng = ChaCha8Rng::seed_from_u64(800 + case);
        let mask_ref = mask.clone();
        check_graph("dropout_reshape", &mut params, EPS, move |tape, vids| {
            let mut local = seed_rng.clone();
            let d = tape.dropout(vids[0], mask_ref.clone())?;
            let r = tape.reshape(d, vec![1, n])?;
            Ok(project(tape, r, &mut local))
        })
        .unwrap();
    }
}

#[test]
fn batchnorm_gradients_train_and_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..10 {
        let rows = rng.gen_range(2..6);
        let c = rng.gen_range(1..4);
        let mut params = vec![
            randn(&mut rng, vec![rows, c]),
            randn(&mut rng, vec![c]),
            randn(&mut rng, vec![c]),
        ];
        let mut seed_rng = ChaCha8Rng::seed_from_u64(900 + case);
        check_graph("batchnorm_train", &mut params, EPS, |tape, vids| {
            let mut local = seed_rng.clone();
            let (y, _, _) = tape.batchnorm_train(vids[0], vids[1], vids[2], 1e-5)?;
            Ok(project(tape, y, &mut local))
        })
        .unwrap();

        let running_mean = vec![0.1; c];
        let running_var = vec![1.3; c];
        let mut seed_rng = ChaCha8Rng::seed_from_u64(950 + case);
        check_graph("batchnorm_eval", &mut params, EPS, move |tape, vids| {
            let mut local = seed_rng.clone();
            let y = tape.batchnorm_eval(vids[0], vids[1], vids[2], &running_mean, &running_var, 1e-5)?;
            Ok(project(tape, y, &mut local))
        })
        .unwrap();
    }
}

#[test]
fn softmax_xent_gradient_and_values() {
    // uniform logits over 10 classes → loss = ln 10
    let mut tape = Tape::<f64>::new();
    let logits = tape.leaf(vec![3, 10], vec![0.25; 30], false).unwrap();
    let loss = tape.softmax_xent(logits, vec![1, 5, 9]).unwrap();
    assert!((tape.value(loss)[0] - 10.0f64.ln()).abs() < 1e-12);

    // gradient matches finite differences on a 3×4 case
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut params = vec![randn(&mut rng, vec![3, 4])];
    check_graph("softmax_xent", &mut params, EPS, |tape, vids| {
        tape.softmax_xent(vids[0], vec![2, 0, 3])
    })
    .unwrap();
}

#[test]
fn composed_graph_matches_finite_differences() {
    // a miniature conv-act-pool-dense-loss pipeline, checked end to end
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (b, h, w) = (2, 4, 4);
    let mut params = vec![
        randn(&mut rng, vec![b, h, w, 2]),
        randn(&mut rng, vec![3, 3, 2, 3]),
        randn(&mut rng, vec![3]),
        randn(&mut rng, vec![2 * 2 * 3, 4]),
        randn(&mut rng, vec![4]),
        randn(&mut rng, vec![1]),
    ];
    check_graph("composed_pipeline", &mut params, EPS, |tape, vids| {
        let c = tape.conv2d(vids[0], vids[1])?;
        let cb = tape.bias_add(c, vids[2])?;
        let a = tape.unary(UnaryFn::Tanh, cb)?;
        let s = tape.scalar_mul(vids[5], a)?;
        let p = tape.maxpool(s, 3, 2)?;
        let flat = tape.reshape(p, vec![b, 2 * 2 * 3])?;
        let mm = tape.matmul(flat, vids[3])?;
        let logits = tape.bias_add(mm, vids[4])?;
        tape.softmax_xent(logits, vec![1, 3])
    })
    .unwrap();
}
