//! Independent oracles for the differentiation core: naive nested-loop
//! references for conv/dense, adjointness of the transposed convolution,
//! direct batch statistics, and central-difference gradient checks for
//! every differentiable operation.

use topogan_core::gradcheck::grad_check;
use topogan_core::kernels::{self, Act};
use topogan_core::layers::Parameter;
use topogan_core::rng::SeedStream;
use topogan_core::tape::{Tape, Var};
use topogan_core::tensor::Tensor;

use proptest::prelude::*;

fn rand_tensor(shape: &[usize], rng: &mut SeedStream, scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_sym() * scale).collect();
    Tensor::new(shape, data).unwrap()
}

/// Direct six-nested-loop cross-correlation, independent of the im2col
/// path under test.
fn conv_naive(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let (n, ci, h, wd) = x.dims4().unwrap();
    let (co, _, k, _) = w.dims4().unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    for ni in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()
                                    [((ni * ci + c) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((o * ci + c) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out.data_mut()[((ni * co + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_naive_loops() {
    let mut rng = SeedStream::new(101);
    for case in 0..5 {
        let x = rand_tensor(&[1, 2, 6, 6], &mut rng, 1.0);
        let w = rand_tensor(&[4, 2, 3, 3], &mut rng, 1.0);
        let b = rand_tensor(&[4], &mut rng, 1.0);
        for &(stride, pad) in &[(1usize, 0usize), (1, 1), (2, 1)] {
            let fast = kernels::conv2d_forward(&x, &w, &b, stride, pad).unwrap();
            let slow = conv_naive(&x, &w, &b, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, o) in fast.data().iter().zip(slow.data()) {
                assert!((a - o).abs() < 1e-12, "case {case} stride {stride} pad {pad}");
            }
        }
    }
}

#[test]
fn dense_matches_naive_triple_loop() {
    let mut rng = SeedStream::new(7);
    let x = rand_tensor(&[2, 3], &mut rng, 2.0);
    let w = rand_tensor(&[3, 4], &mut rng, 2.0);
    let b = rand_tensor(&[4], &mut rng, 1.0);
    let fast = kernels::dense_forward(&x, &w, &b).unwrap();
    for i in 0..2 {
        for j in 0..4 {
            let mut acc = b.data()[j];
            for p in 0..3 {
                acc += x.data()[i * 3 + p] * w.data()[p * 4 + j];
            }
            assert!((fast.data()[i * 4 + j] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    // ⟨conv2d(x), y⟩ = ⟨x, conv_transpose2d(y)⟩ with a shared kernel and
    // zero bias, for geometries where the spatial maps line up.
    let mut rng = SeedStream::new(55);
    for &(ci, co, h, k, stride, pad) in &[
        (1usize, 1usize, 4usize, 3usize, 1usize, 0usize),
        (2, 3, 6, 3, 2, 1),
        (3, 2, 8, 5, 2, 2),
        (1, 4, 5, 3, 1, 1),
    ] {
        let x = rand_tensor(&[1, ci, h, h], &mut rng, 1.0);
        let w = rand_tensor(&[co, ci, k, k], &mut rng, 1.0);
        let zero_co = Tensor::zeros(&[co]);
        let zero_ci = Tensor::zeros(&[ci]);
        let cx = kernels::conv2d_forward(&x, &w, &zero_co, stride, pad).unwrap();
        let oh = cx.shape()[2];
        let y = rand_tensor(&[1, co, oh, oh], &mut rng, 1.0);
        // output_pad chosen so the transposed output matches the conv input.
        let output_pad = h - ((oh - 1) * stride + k - 2 * pad);
        let ty = kernels::convt2d_forward(&y, &w, &zero_ci, stride, pad, output_pad).unwrap();
        assert_eq!(ty.shape(), x.shape());
        let lhs = cx.dot(&y).unwrap();
        let rhs = x.dot(&ty).unwrap();
        assert!(
            (lhs - rhs).abs() < 1e-10,
            "⟨conv(x),y⟩={lhs} vs ⟨x,convᵀ(y)⟩={rhs} for ci={ci} co={co} h={h} k={k} s={stride} p={pad}"
        );
    }
}

#[test]
fn batchnorm_normalizes_random_batch() {
    let mut rng = SeedStream::new(13);
    let x = rand_tensor(&[8, 4, 5, 5], &mut rng, 3.0);
    let gamma = Tensor::full(&[4], 1.0);
    let beta = Tensor::zeros(&[4]);
    let (y, _) = kernels::batchnorm_train_forward(&x, &gamma, &beta, 1e-12).unwrap();
    let (n, c, h, w) = y.dims4().unwrap();
    let m = (n * h * w) as f64;
    for ci in 0..c {
        let mut s = 0.0;
        let mut s2 = 0.0;
        for ni in 0..n {
            let base = ((ni * c + ci) * h) * w;
            for &v in &y.data()[base..base + h * w] {
                s += v;
                s2 += v * v;
            }
        }
        let mean = s / m;
        let var = s2 / m - mean * mean;
        assert!(mean.abs() < 1e-6, "channel {ci} mean {mean}");
        assert!((var - 1.0).abs() < 1e-5, "channel {ci} var {var}");
    }
}

#[test]
fn batchnorm_affine_law() {
    // gamma=2, beta=3 on a random batch → per-channel mean ≈ 3, std ≈ 2.
    let mut rng = SeedStream::new(21);
    let x = rand_tensor(&[4, 2, 6, 6], &mut rng, 2.0);
    let gamma = Tensor::full(&[2], 2.0);
    let beta = Tensor::full(&[2], 3.0);
    let (y, _) = kernels::batchnorm_train_forward(&x, &gamma, &beta, 1e-12).unwrap();
    let (n, c, h, w) = y.dims4().unwrap();
    let m = (n * h * w) as f64;
    for ci in 0..c {
        let mut s = 0.0;
        let mut s2 = 0.0;
        for ni in 0..n {
            let base = ((ni * c + ci) * h) * w;
            for &v in &y.data()[base..base + h * w] {
                s += v;
                s2 += v * v;
            }
        }
        let mean = s / m;
        let std = (s2 / m - mean * mean).sqrt();
        assert!((mean - 3.0).abs() < 1e-6);
        assert!((std - 2.0).abs() < 1e-5);
    }
}

// ---------------------------------------------------------------------------
// finite-difference gradient checks, 5 random instances per op
// ---------------------------------------------------------------------------

const H_SCALE: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

/// Loss = mean(op_output ⊙ fixed_mask): the mask breaks the uniform
/// upstream gradient a plain mean would give, so index errors cannot
/// cancel.
fn masked_mean(tape: &mut Tape<f64>, y: Var, mask: &Tensor<f64>) -> Var {
    let m = tape.leaf(mask.clone());
    let prod = tape.mul(y, m).unwrap();
    tape.mean_all(prod).unwrap()
}

#[test]
fn grad_check_dense() {
    let mut rng = SeedStream::new(301);
    for _ in 0..5 {
        let mut params = [
            Parameter::new("x", rand_tensor(&[3, 4], &mut rng, 1.0)),
            Parameter::new("w", rand_tensor(&[4, 5], &mut rng, 1.0)),
            Parameter::new("b", rand_tensor(&[5], &mut rng, 1.0)),
        ];
        let mask = rand_tensor(&[3, 5], &mut rng, 1.0);
        let err = grad_check(
            &mut params,
            |tape: &mut Tape<f64>, vars: &[Var]| {
                let y = tape.dense(vars[0], vars[1], vars[2])?;
                Ok(masked_mean(tape, y, &mask))
            },
            H_SCALE,
            6,
            &mut rng,
        )
        .unwrap();
        assert!(err < 1e-6, "dense rel err {err}");
    }
}

#[test]
fn grad_check_conv2d() {
    let mut rng = SeedStream::new(302);
    for case in 0..5 {
        let mut params = [
            Parameter::new("x", rand_tensor(&[2, 2, 5, 5], &mut rng, 1.0)),
            Parameter::new("w", rand_tensor(&[3, 2, 3, 3], &mut rng, 1.0)),
            Parameter::new("b", rand_tensor(&[3], &mut rng, 1.0)),
        ];
        let mask = rand_tensor(&[2, 3, 3, 3], &mut rng, 1.0);
        let err = grad_check(
            &mut params,
            |tape: &mut Tape<f64>, vars: &[Var]| {
                let y = tape.conv2d(vars[0], vars[1], vars[2], 2, 1)?;
                Ok(masked_mean(tape, y, &mask))
            },
            H_SCALE,
            5,
            &mut rng,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "conv2d case {case} rel err {err}");
    }
}

#[test]
fn grad_check_transposed_conv2d() {
    let mut rng = SeedStream::new(303);
    for case in 0..5 {
        let mut params = [
            Parameter::new("x", rand_tensor(&[2, 3, 4, 4], &mut rng, 1.0)),
            Parameter::new("w", rand_tensor(&[3, 2, 3, 3], &mut rng, 1.0)),
            Parameter::new("b", rand_tensor(&[2], &mut rng, 1.0)),
        ];
        let mask = rand_tensor(&[2, 2, 8, 8], &mut rng, 1.0);
        let err = grad_check(
            &mut params,
            |tape: &mut Tape<f64>, vars: &[Var]| {
                let y = tape.conv_transpose2d(vars[0], vars[1], vars[2], 2, 1, 1)?;
                Ok(masked_mean(tape, y, &mask))
            },
            H_SCALE,
            5,
            &mut rng,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "transposed conv case {case} rel err {err}");
    }
}

#[test]
fn grad_check_batchnorm_train() {
    let mut rng = SeedStream::new(304);
    for case in 0..5 {
        let mut params = [
            Parameter::new("x", rand_tensor(&[3, 2, 4, 4], &mut rng, 2.0)),
            Parameter::new("gamma", rand_tensor(&[2], &mut rng, 1.0)),
            Parameter::new("beta", rand_tensor(&[2], &mut rng, 1.0)),
        ];
        let mask = rand_tensor(&[3, 2, 4, 4], &mut rng, 1.0);
        let err = grad_check(
            &mut params,
            |tape: &mut Tape<f64>, vars: &[Var]| {
                let (y, _, _) = tape.batchnorm_train(vars[0], vars[1], vars[2], 1e-5)?;
                Ok(masked_mean(tape, y, &mask))
            },
            H_SCALE,
            5,
            &mut rng,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "batchnorm case {case} rel err {err}");
    }
}

#[test]
fn grad_check_activations() {
    let mut rng = SeedStream::new(305);
    let acts = [
        Act::Relu,
        Act::LeakyRelu { slope: 0.2 },
        Act::Tanh,
        Act::Sigmoid,
        Act::Softmax,
    ];
    for act in acts {
        for case in 0..5 {
            // Keep magnitudes >= 0.05 so ±h never crosses the ReLU kink.
            let n = 12;
            let data: Vec<f64> = (0..n)
                .map(|_| {
                    let mag = 0.05 + 0.95 * rng.uniform01();
                    if rng.uniform01() < 0.5 {
                        -mag
                    } else {
                        mag
                    }
                })
                .collect();
            let mut params = [Parameter::new("x", Tensor::new(&[3, 4], data).unwrap())];
            let mask = rand_tensor(&[3, 4], &mut rng, 1.0);
            let err = grad_check(
                &mut params,
                |tape: &mut Tape<f64>, vars: &[Var]| {
                    let y = tape.activation(vars[0], act);
                    Ok(masked_mean(tape, y, &mask))
                },
                H_SCALE,
                6,
                &mut rng,
            )
            .unwrap();
            assert!(err < GRAD_TOL, "{act:?} case {case} rel err {err}");
        }
    }
}

#[test]
fn grad_check_bce_loss() {
    let mut rng = SeedStream::new(306);
    for case in 0..5 {
        let n = 8;
        let preds: Vec<f64> = (0..n).map(|_| 0.1 + 0.8 * rng.uniform01()).collect();
        let targets: Vec<f64> = (0..n)
            .map(|_| if rng.uniform01() < 0.5 { 0.0 } else { 1.0 })
            .collect();
        let target = Tensor::new(&[n], targets).unwrap();
        let mut params = [Parameter::new("p", Tensor::new(&[n], preds).unwrap())];
        let err = grad_check(
            &mut params,
            |tape: &mut Tape<f64>, vars: &[Var]| tape.bce(vars[0], target.clone()),
            H_SCALE,
            8,
            &mut rng,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "bce case {case} rel err {err}");
    }
}

#[test]
fn grad_check_softmax_cross_entropy() {
    let mut rng = SeedStream::new(307);
    for case in 0..5 {
        let (n, k) = (4, 6);
        let mut params = [Parameter::new("logits", rand_tensor(&[n, k], &mut rng, 2.0))];
        let targets: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let err = grad_check(
            &mut params,
            |tape: &mut Tape<f64>, vars: &[Var]| {
                tape.softmax_cross_entropy(vars[0], targets.clone())
            },
            H_SCALE,
            8,
            &mut rng,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "softmax-ce case {case} rel err {err}");
    }
}

#[test]
fn deterministic_forward_same_inputs() {
    let mut rng = SeedStream::new(909);
    let x = rand_tensor(&[2, 3, 8, 8], &mut rng, 1.0);
    let w = rand_tensor(&[4, 3, 3, 3], &mut rng, 1.0);
    let b = rand_tensor(&[4], &mut rng, 1.0);
    let a = kernels::conv2d_forward(&x, &w, &b, 2, 1).unwrap();
    let bb = kernels::conv2d_forward(&x, &w, &b, 2, 1).unwrap();
    assert_eq!(a.data(), bb.data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Transposed conv with output_pad = stride−1 inverts the conv
    /// spatial map for the odd-kernel, stride ≤ 2 geometry family the
    /// networks use, whenever the input size is a multiple of the stride.
    #[test]
    fn shape_map_inverts(
        h_mult in 2usize..12,
        k_half in 1usize..3,
        stride in 1usize..3,
        pad in 0usize..3,
    ) {
        let k = 2 * k_half + 1;
        let h = h_mult * stride;
        prop_assume!(h + 2 * pad >= k);
        let down = kernels::conv_out_dim(h, k, stride, pad).unwrap();
        prop_assume!(down >= 1);
        let up = kernels::convt_out_dim(down, k, stride, pad, stride - 1).unwrap();
        prop_assert_eq!(up, h);
    }

    /// Adjoint identity on random geometries.
    #[test]
    fn adjoint_inner_products_agree(
        seed in 0u64..1000,
        ci in 1usize..3,
        co in 1usize..3,
        h_mult in 2usize..5,
        stride in 1usize..3,
        pad in 0usize..2,
    ) {
        let k = 3;
        let h = h_mult * stride;
        prop_assume!(h + 2 * pad >= k);
        let mut rng = SeedStream::new(seed);
        let x = rand_tensor(&[1, ci, h, h], &mut rng, 1.0);
        let w = rand_tensor(&[co, ci, k, k], &mut rng, 1.0);
        let zero_co = Tensor::zeros(&[co]);
        let zero_ci = Tensor::zeros(&[ci]);
        let cx = kernels::conv2d_forward(&x, &w, &zero_co, stride, pad).unwrap();
        let oh = cx.shape()[2];
        let back = (oh - 1) * stride + k;
        prop_assume!(back >= 2 * pad && back - 2 * pad <= h && h - (back - 2 * pad) < stride);
        let output_pad = h - (back - 2 * pad);
        let y = rand_tensor(&[1, co, oh, oh], &mut rng, 1.0);
        let ty = kernels::convt2d_forward(&y, &w, &zero_ci, stride, pad, output_pad).unwrap();
        let lhs = cx.dot(&y).unwrap();
        let rhs = x.dot(&ty).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }
}
