use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::rng::substream;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = substream(seed, "test");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct sextuple-loop convolution.
fn naive_conv(x: &Tensor, k: &Tensor, b: &[f64], stride: usize, pad: usize) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[fi];
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (oy * stride + ki) as isize - pad as isize;
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * c + ci) * h + iy as usize) * w + ix as usize];
                                let kv = k.data()[((fi * c + ci) * kh + ki) * kw + kj];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((ni * f + fi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, f, oh, ow], out).unwrap()
}

fn naive_pool(x: &Tensor, max: bool, window: usize, stride: usize) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let mut out = Vec::new();
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let vals: Vec<f64> = (0..window)
                    .flat_map(|i| (0..window).map(move |j| (i, j)))
                    .map(|(i, j)| x.data()[p * h * w + (oy * stride + i) * w + ox * stride + j])
                    .collect();
                out.push(if max {
                    vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                });
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, d, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            for k in 0..d {
                out[i * m + j] += a.at2(i, k) * b.at2(k, j);
            }
        }
    }
    Tensor::new(vec![n, m], out).unwrap()
}

fn forward1(f: impl FnOnce(&mut Tape, Var) -> crate::Result<Var>, x: &Tensor) -> crate::Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone())?;
    let out = f(&mut tape, v)?;
    Ok(tape.value(out).clone())
}

#[test]
fn conv_one_by_one_scales() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones(vec![1, 1, 3, 3])).unwrap();
    let k = tape.constant(Tensor::full(vec![1, 1, 1, 1], 2.0)).unwrap();
    let b = tape.constant(Tensor::zeros(vec![1])).unwrap();
    let y = tape.conv2d(x, k, Some(b), 1, 0).unwrap();
    assert_eq!(tape.value(y), &Tensor::full(vec![1, 1, 3, 3], 2.0));
}

#[test]
fn conv_full_window_sum() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let k = tape.constant(Tensor::ones(vec![1, 1, 2, 2])).unwrap();
    let y = tape.conv2d(x, k, None, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), [10.0]);
}

#[test]
fn conv_matches_naive_oracle() {
    for seed in 0..5 {
        let x = rand_tensor(&[2, 3, 8, 8], seed);
        let k = rand_tensor(&[4, 3, 3, 3], seed + 100);
        let b = rand_tensor(&[4], seed + 200);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (
            tape.constant(x.clone()).unwrap(),
            tape.constant(k.clone()).unwrap(),
            tape.constant(b.clone()).unwrap(),
        );
        let y = tape.conv2d(xv, kv, Some(bv), 2, 1).unwrap();
        assert_eq!(tape.value(y).shape(), [2, 4, 4, 4]);
        let oracle = naive_conv(&x, &k, b.data(), 2, 1);
        assert!(tape.value(y).max_abs_diff(&oracle) < 1e-12);
    }
    // pointwise fast path
    let x = rand_tensor(&[2, 5, 4, 4], 9);
    let k = rand_tensor(&[3, 5, 1, 1], 10);
    let out = forward1(
        |t, v| {
            let kv = t.constant(k.clone())?;
            t.conv2d(v, kv, None, 1, 0)
        },
        &x,
    )
    .unwrap();
    assert!(out.max_abs_diff(&naive_conv(&x, &k, &[0.0; 3], 1, 0)) < 1e-12);
}

#[test]
fn conv_forward_and_backward_match_naive_across_geometries() {
    // (kernel, stride, padding, side)
    let geoms = [(3, 1, 1, 5), (3, 1, 1, 2), (3, 1, 1, 1), (5, 1, 2, 4), (3, 1, 0, 5), (7, 2, 3, 8), (2, 2, 0, 4)];
    for (gi, &(kk, stride, pad, side)) in geoms.iter().enumerate() {
        let seed = 300 + gi as u64;
        let x = rand_tensor(&[2, 2, side, side], seed);
        let k = rand_tensor(&[3, 2, kk, kk], seed + 1);
        let mut tape = Tape::new();
        let (xv, kv) = (tape.param(x.clone()).unwrap(), tape.param(k.clone()).unwrap());
        let y = tape.conv2d(xv, kv, None, stride, pad).unwrap();
        let oracle = naive_conv(&x, &k, &[0.0; 3], stride, pad);
        assert!(tape.value(y).max_abs_diff(&oracle) < 1e-12, "geometry {gi}");

        let g = rand_tensor(oracle.shape(), seed + 2);
        let gv = tape.constant(g.clone()).unwrap();
        let p = tape.mul(y, gv).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        // the map is linear in each argument, so unit probes give exact gradients
        let probe = |xp: &Tensor, kp: &Tensor| -> f64 {
            let out = naive_conv(xp, kp, &[0.0; 3], stride, pad);
            out.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        };
        let dx = tape.grad(xv).unwrap();
        for i in 0..x.numel() {
            let mut e = Tensor::zeros(x.shape().to_vec());
            e.data_mut()[i] = 1.0;
            assert!((dx.data()[i] - probe(&e, &k)).abs() < 1e-12, "geometry {gi} dx[{i}]");
        }
        let dk = tape.grad(kv).unwrap();
        for i in 0..k.numel() {
            let mut e = Tensor::zeros(k.shape().to_vec());
            e.data_mut()[i] = 1.0;
            assert!((dk.data()[i] - probe(&x, &e)).abs() < 1e-12, "geometry {gi} dk[{i}]");
        }
    }
}

#[test]
fn conv_channel_mismatch_is_config_error() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(vec![1, 2, 4, 4])).unwrap();
    let k = tape.constant(Tensor::zeros(vec![1, 3, 3, 3])).unwrap();
    assert!(matches!(tape.conv2d(x, k, None, 1, 0), Err(Error::Config(_))));
    let k = tape.constant(Tensor::zeros(vec![1, 2, 7, 7])).unwrap();
    assert!(matches!(tape.conv2d(x, k, None, 1, 1), Err(Error::Config(_))));
}

#[test]
fn pool_examples_and_oracle() {
    let c = forward1(|t, v| t.pool2d(v, PoolKind::Avg, 2, 2), &Tensor::full(vec![1, 1, 4, 4], 3.5)).unwrap();
    assert!(c.data().iter().all(|v| *v == 3.5));
    let m = forward1(
        |t, v| t.pool2d(v, PoolKind::Max, 2, 2),
        &Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
    )
    .unwrap();
    assert_eq!(m.data(), [4.0]);
    for seed in 0..3 {
        let x = rand_tensor(&[1, 2, 6, 6], seed);
        for (kind, max) in [(PoolKind::Avg, false), (PoolKind::Max, true)] {
            let out = forward1(|t, v| t.pool2d(v, kind, 2, 2), &x).unwrap();
            assert!(out.max_abs_diff(&naive_pool(&x, max, 2, 2)) < 1e-15);
        }
    }
    let err = forward1(|t, v| t.pool2d(v, PoolKind::Max, 3, 1), &Tensor::zeros(vec![1, 1, 2, 2]));
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn max_pool_ties_route_to_lowest_index() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::full(vec![1, 1, 2, 2], 1.0)).unwrap();
    let y = tape.pool2d(x, PoolKind::Max, 2, 2).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), [1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn avg_pool_backward_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.param(rand_tensor(&[1, 1, 4, 4], 1)).unwrap();
    let y = tape.pool2d(x, PoolKind::Avg, 2, 2).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|g| *g == 0.25));
}

#[test]
fn affine_examples_and_oracle() {
    let x = rand_tensor(&[3, 4], 2);
    let mut eye = Tensor::zeros(vec![4, 4]);
    for i in 0..4 {
        eye.data_mut()[i * 4 + i] = 1.0;
    }
    let out = forward1(
        |t, v| {
            let w = t.constant(eye.clone())?;
            let b = t.constant(Tensor::zeros(vec![4]))?;
            t.affine(v, w, Some(b))
        },
        &x,
    )
    .unwrap();
    assert_eq!(out, x);

    let out = forward1(
        |t, v| {
            let w = t.constant(Tensor::new(vec![2, 1], vec![1.0, 1.0])?)?;
            let b = t.constant(Tensor::scalar(0.5))?;
            t.affine(v, w, Some(b))
        },
        &Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(),
    )
    .unwrap();
    assert_eq!(out.data(), [3.5]);

    let a = rand_tensor(&[3, 5], 3);
    let b = rand_tensor(&[5, 4], 4);
    let out = forward1(
        |t, v| {
            let w = t.constant(b.clone())?;
            t.matmul(v, w)
        },
        &a,
    )
    .unwrap();
    assert!(out.max_abs_diff(&naive_matmul(&a, &b)) < 1e-14);

    let err = forward1(
        |t, v| {
            let w = t.constant(Tensor::zeros(vec![3, 2]))?;
            t.matmul(v, w)
        },
        &a,
    );
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn elementwise_examples() {
    let s = |kind, v: f64| forward1(|t, x| t.unary(kind, x), &Tensor::scalar(v)).unwrap().data()[0];
    assert_eq!(s(UnaryKind::Sigmoid, 0.0), 0.5);
    assert_eq!(s(UnaryKind::Tanh, 0.0), 0.0);
    assert_eq!(s(UnaryKind::Relu, -1.0), 0.0);
    assert_eq!(s(UnaryKind::Sigmoid, 2.0), 0.8807970779778823);
    assert_eq!(sigmoid(-800.0), 0.0);
}

#[test]
fn log_of_non_positive_reports_index() {
    let x = Tensor::new(vec![3], vec![1.0, 0.5, -2.0]).unwrap();
    match forward1(|t, v| t.log(v), &x) {
        Err(Error::Domain { op: "log", index: 2, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn binary_rejects_mismatched_shapes_but_broadcasts_scalars() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3])).unwrap();
    let b = tape.constant(Tensor::zeros(vec![3, 2])).unwrap();
    assert!(matches!(tape.add(a, b), Err(Error::Config(_))));
    let s = tape.constant(Tensor::scalar(2.0)).unwrap();
    let y = tape.add(a, s).unwrap();
    assert!(tape.value(y).data().iter().all(|v| *v == 2.0));
}

#[test]
fn concat_examples() {
    let x = rand_tensor(&[1, 2, 4, 4], 5);
    let out = forward1(
        |t, v| {
            let e = t.constant(Tensor::zeros(vec![1, 0, 4, 4]))?;
            t.concat_channels(v, e)
        },
        &x,
    )
    .unwrap();
    assert_eq!(out, x);
    let out = forward1(
        |t, v| {
            let e = t.constant(Tensor::zeros(vec![1, 3, 4, 4]))?;
            t.concat_channels(v, e)
        },
        &x,
    )
    .unwrap();
    assert_eq!(out.shape(), [1, 5, 4, 4]);
    let err = forward1(
        |t, v| {
            let e = t.constant(Tensor::zeros(vec![1, 3, 2, 4]))?;
            t.concat_channels(v, e)
        },
        &x,
    );
    assert!(matches!(err, Err(Error::Config(_))));
}

/// Per-channel mean/variance computed directly from the definition.
fn naive_batch_norm(x: &Tensor, gamma: &[f64], beta: &[f64], eps: f64) -> Tensor {
    let (n, c, hw) = (x.shape()[0], x.shape()[1], x.shape()[2] * x.shape()[3]);
    let mut out = x.clone();
    for ci in 0..c {
        let vals: Vec<f64> = (0..n)
            .flat_map(|ni| (0..hw).map(move |i| (ni * c + ci) * hw + i))
            .map(|i| x.data()[i])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        for ni in 0..n {
            for i in 0..hw {
                let idx = (ni * c + ci) * hw + i;
                out.data_mut()[idx] = gamma[ci] * (x.data()[idx] - mean) / (var + eps).sqrt() + beta[ci];
            }
        }
    }
    out
}

fn bn_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor, running: &RunningStats, mode: Mode) -> crate::Result<(Tensor, Option<BatchStats>)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone())?;
    let g = tape.constant(gamma.clone())?;
    let b = tape.constant(beta.clone())?;
    let (y, s) = tape.batch_norm(xv, g, b, running, mode, 1e-5)?;
    Ok((tape.value(y).clone(), s))
}

#[test]
fn batch_norm_examples_and_oracle() {
    let running = RunningStats::new(2);
    let (y, _) = bn_forward(&Tensor::full(vec![2, 2, 3, 3], 4.2), &Tensor::ones(vec![2]), &Tensor::zeros(vec![2]), &running, Mode::Train).unwrap();
    assert!(y.data().iter().all(|v| v.abs() < 1e-9));

    let x = rand_tensor(&[4, 2, 3, 3], 6);
    let beta = Tensor::new(vec![2], vec![0.3, -0.7]).unwrap();
    let (y, _) = bn_forward(&x, &Tensor::zeros(vec![2]), &beta, &running, Mode::Train).unwrap();
    for (i, v) in y.data().iter().enumerate() {
        assert_eq!(*v, beta.data()[(i / 9) % 2]);
    }

    let gamma = Tensor::new(vec![2], vec![1.5, 0.5]).unwrap();
    let (y, stats) = bn_forward(&x, &gamma, &beta, &running, Mode::Train).unwrap();
    assert!(y.max_abs_diff(&naive_batch_norm(&x, gamma.data(), beta.data(), 1e-5)) < 1e-12);
    assert_eq!(stats.unwrap().count, 36);
}

#[test]
fn batch_norm_state_errors() {
    let x = rand_tensor(&[2, 1, 2, 2], 1);
    let (g, b) = (Tensor::ones(vec![1]), Tensor::zeros(vec![1]));
    let err = bn_forward(&x, &g, &b, &RunningStats::uninitialized(1), Mode::Eval);
    assert!(matches!(err, Err(Error::State(_))));
    let err = bn_forward(&Tensor::zeros(vec![1, 1, 1, 1]), &g, &b, &RunningStats::new(1), Mode::Train);
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn running_stats_track_batches() {
    let x = rand_tensor(&[4, 2, 3, 3], 7);
    let mut running = RunningStats::new(2);
    let (_, stats) = bn_forward(&x, &Tensor::ones(vec![2]), &Tensor::zeros(vec![2]), &running, Mode::Train).unwrap();
    let stats = stats.unwrap();
    running.update(&stats, 1.0);
    assert_eq!(running.mean, stats.mean);
    // eval with statistics equal to the batch's (unbiased) reproduces train output up to the n/(n-1) factor
    let (y_eval, none) = bn_forward(&x, &Tensor::ones(vec![2]), &Tensor::zeros(vec![2]), &running, Mode::Eval).unwrap();
    assert!(none.is_none());
    assert!(y_eval.data().iter().all(|v| v.is_finite()));
}

#[test]
fn backward_basics() {
    let mut tape = Tape::new();
    let x = tape.param(rand_tensor(&[2, 3, 2], 8)).unwrap();
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|g| *g == 1.0));
    assert!(matches!(tape.backward(s), Err(Error::Usage(_))));
    tape.reset_grads();
    tape.backward(s).unwrap();

    let mut tape = Tape::new();
    let w = tape.param(Tensor::scalar(0.0)).unwrap();
    let one = tape.constant(Tensor::scalar(1.0)).unwrap();
    let p = tape.mul(w, one).unwrap();
    let y = tape.sigmoid(p).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(w).unwrap().data(), [0.25]);

    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(vec![2])).unwrap();
    assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
}

#[test]
fn multi_consumer_gradients_accumulate() {
    // f = sum(x*x + x) -> 2x + 1
    let x0 = rand_tensor(&[5], 3);
    let mut tape = Tape::new();
    let x = tape.param(x0.clone()).unwrap();
    let sq = tape.mul(x, x).unwrap();
    let y = tape.add(sq, x).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    let g = tape.grad(x).unwrap();
    for (g, x) in g.data().iter().zip(x0.data()) {
        assert!((g - (2.0 * x + 1.0)).abs() < 1e-15);
    }
}

#[test]
fn grad_check_examples() {
    let quad = grad_check(
        |t, x| {
            let sq = t.mul(x, x)?;
            t.sum(sq)
        },
        &Tensor::scalar(3.0),
        1e-5,
    )
    .unwrap();
    assert!(quad < 1e-8, "{quad}");
    let sig = grad_check(
        |t, x| {
            let s = t.sigmoid(x)?;
            t.sum(s)
        },
        &rand_tensor(&[7], 4),
        1e-5,
    )
    .unwrap();
    assert!(sig < 1e-6, "{sig}");
}

#[test]
fn composite_conv_pool_affine_passes_grad_check() {
    let report = grad_check_resampled(
        |a| {
            let s = 40 + a as u64 * 7;
            vec![rand_tensor(&[2, 2, 6, 6], s), rand_tensor(&[3, 2, 3, 3], s + 1), rand_tensor(&[12, 2], s + 2)]
        },
        |t, v| {
            let c = t.conv2d(v[0], v[1], None, 1, 1)?;
            let p = t.pool2d(c, PoolKind::Max, 3, 3)?;
            let p = t.reshape(p, vec![2, 12])?;
            let a = t.matmul(p, v[2])?;
            let s = t.sigmoid(a)?;
            t.sum(s)
        },
        1e-5,
        20,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn forward_and_backward_replay_bit_identically() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.param(rand_tensor(&[2, 2, 4, 4], 1)).unwrap();
        let k = tape.param(rand_tensor(&[3, 2, 3, 3], 2)).unwrap();
        let c = tape.conv2d(x, k, None, 1, 1).unwrap();
        let r = tape.tanh(c).unwrap();
        let s = tape.sum(r).unwrap();
        tape.backward(s).unwrap();
        (tape.value(s).clone(), tape.grad(x).unwrap(), tape.grad(k).unwrap())
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn concat_then_slice_is_identity(c1 in 0usize..4, c2 in 1usize..4, seed in 0u64..1000) {
        let a0 = rand_tensor(&[2, c1, 3, 3], seed);
        let b0 = rand_tensor(&[2, c2, 3, 3], seed + 1);
        let wa = rand_tensor(&[2, c1, 3, 3], seed + 2);
        let wb = rand_tensor(&[2, c2, 3, 3], seed + 3);
        let mut tape = Tape::new();
        let a = tape.param(a0.clone()).unwrap();
        let b = tape.param(b0.clone()).unwrap();
        let cat = tape.concat_channels(a, b).unwrap();
        let sa = tape.slice_channels(cat, 0, c1).unwrap();
        let sb = tape.slice_channels(cat, c1, c2).unwrap();
        prop_assert_eq!(tape.value(sa), &a0);
        prop_assert_eq!(tape.value(sb), &b0);
        let (wa_v, wb_v) = (tape.constant(wa.clone()).unwrap(), tape.constant(wb.clone()).unwrap());
        let la = tape.mul(sa, wa_v).unwrap();
        let lb = tape.mul(sb, wb_v).unwrap();
        let la = tape.sum(la).unwrap();
        let lb = tape.sum(lb).unwrap();
        let l = tape.add(la, lb).unwrap();
        tape.backward(l).unwrap();
        prop_assert_eq!(tape.grad(a).unwrap(), wa);
        prop_assert_eq!(tape.grad(b).unwrap(), wb);
    }

    #[test]
    fn backward_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in 0u64..1000) {
        let x0 = rand_tensor(&[6], seed);
        let grad_of = |which: u8| {
            let mut tape = Tape::new();
            let x = tape.param(x0.clone()).unwrap();
            let f = { let s = tape.sigmoid(x).unwrap(); tape.sum(s).unwrap() };
            let g = { let s = tape.tanh(x).unwrap(); let q = tape.mul(s, x).unwrap(); tape.sum(q).unwrap() };
            let out = match which {
                0 => f,
                1 => g,
                _ => {
                    let a = tape.scale(f, alpha).unwrap();
                    let b = tape.scale(g, beta).unwrap();
                    tape.add(a, b).unwrap()
                }
            };
            tape.backward(out).unwrap();
            tape.grad(x).unwrap()
        };
        let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..6 {
            let expect = alpha * gf.data()[i] + beta * gg.data()[i];
            prop_assert!((gc.data()[i] - expect).abs() < 1e-12);
        }
    }
}
