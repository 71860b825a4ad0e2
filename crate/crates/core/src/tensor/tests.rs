use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Direct nested-loop cross-correlation.
fn naive_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h;
    let ho = (xs.h + 2 * pad - k) / stride + 1;
    let wo = (xs.w + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, ho, wo));
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..xs.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                    acc += x.at(n, ci, iy as usize, ix as usize) * w.at(co, ci, ky, kx);
                                }
                            }
                        }
                    }
                    out.set(n, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

fn run1(x: &Tensor, f: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), false);
    let y = f(&mut tape, v).unwrap();
    tape.value(y).clone()
}

fn check(f: impl Fn(&mut Tape, &[Var]) -> Result<Var>, inputs: &[Tensor]) -> GradCheckReport {
    let spec = GradCheckSpec {
        max_coords: Some(80),
        ..GradCheckSpec::default()
    };
    let r = grad_check(f, inputs, spec).unwrap();
    assert!(
        r.passed(),
        "max rel error {} at {:?} (analytic {}, numeric {})",
        r.max_rel_error,
        r.worst,
        r.analytic,
        r.numeric
    );
    r
}

#[test]
fn conv_ones_counts_overlap() {
    let x = Tensor::ones(Shape::new(1, 1, 3, 3));
    let w = Tensor::ones(Shape::new(1, 1, 3, 3));
    let mut tape = Tape::new();
    let (xv, wv) = (tape.constant(x), tape.constant(w));
    let y = tape.conv2d(xv, wv, None, 1, 1).unwrap();
    let y = tape.value(y);
    assert_eq!(y.at(0, 0, 1, 1), 9.0);
    for (h, w) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
        assert_eq!(y.at(0, 0, h, w), 4.0);
    }
    assert_eq!(y.at(0, 0, 0, 1), 6.0);
}

#[test]
fn conv_identity_kernel() {
    let x = Tensor::randn(Shape::new(2, 3, 5, 6), &mut rng(1));
    let w = Tensor::from_fn(Shape::new(3, 3, 3, 3), |co, ci, ky, kx| {
        if co == ci && ky == 1 && kx == 1 {
            1.0
        } else {
            0.0
        }
    });
    let y = run1(&x, |t, v| {
        let wv = t.constant(w.clone());
        t.conv2d(v, wv, None, 1, 1)
    });
    assert_eq!(y, x);
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let mut r = rng(2);
    let x = Tensor::randn(Shape::new(2, 3, 8, 8), &mut r);
    let w = Tensor::randn(Shape::new(4, 3, 3, 3), &mut r);
    let b = Tensor::randn(Shape::new(1, 4, 1, 1), &mut r);
    for (stride, pad, bias) in [(1, 1, false), (1, 1, true), (2, 1, true), (1, 0, false)] {
        let y = run1(&x, |t, v| {
            let wv = t.constant(w.clone());
            let bv = bias.then(|| t.constant(b.clone()));
            t.conv2d(v, wv, bv, stride, pad)
        });
        let oracle = naive_conv(&x, &w, bias.then_some(&b), stride, pad);
        assert_eq!(y.shape(), oracle.shape());
        assert!(y.max_abs_diff(&oracle) < 1e-12, "stride {stride} pad {pad}");
    }
}

#[test]
fn conv_output_size_formula() {
    let x = Tensor::zeros(Shape::new(1, 2, 13, 10));
    let w = Tensor::zeros(Shape::new(3, 2, 5, 5));
    let y = run1(&x, |t, v| {
        let wv = t.constant(w.clone());
        t.conv2d(v, wv, None, 2, 2)
    });
    assert_eq!(y.shape(), Shape::new(1, 3, (13 + 4 - 5) / 2 + 1, (10 + 4 - 5) / 2 + 1));
}

#[test]
fn depthwise_conv_matches_per_channel_oracle() {
    let mut r = rng(3);
    let x = Tensor::randn(Shape::new(2, 4, 7, 6), &mut r);
    let w = Tensor::randn(Shape::new(4, 1, 3, 3), &mut r);
    let y = run1(&x, |t, v| {
        let wv = t.constant(w.clone());
        t.conv2d_grouped(v, wv, None, 1, 1, 4)
    });
    for c in 0..4 {
        let xc = Tensor::from_fn(Shape::new(2, 1, 7, 6), |n, _, h, ww| x.at(n, c, h, ww));
        let wc = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, h, ww| w.at(c, 0, h, ww));
        let oc = naive_conv(&xc, &wc, None, 1, 1);
        for n in 0..2 {
            for h in 0..7 {
                for ww in 0..6 {
                    assert!((y.at(n, c, h, ww) - oc.at(n, 0, h, ww)).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn conv_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(Shape::new(1, 3, 4, 4)));
    let w = tape.constant(Tensor::zeros(Shape::new(2, 2, 3, 3)));
    let err = tape.conv2d(x, w, None, 1, 1).unwrap_err().to_string();
    assert!(err.contains("(1, 3, 4, 4)") && err.contains("(2, 2, 3, 3)"), "{err}");
}

#[test]
fn resize_constant_stays_constant() {
    let x = Tensor::full(Shape::new(1, 2, 4, 6), 0.7);
    for (h, w) in [(8, 12), (16, 24), (2, 3), (1, 1), (7, 5)] {
        let y = run1(&x, |t, v| t.resize_to(v, h, w));
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }
}

#[test]
fn resize_up2_golden() {
    // 1-D align-corners-false weights for 2 -> 4: [a, .75a+.25b, .25a+.75b, b].
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let y = run1(&x, |t, v| t.bilinear_resize(v, 2, ResizeMode::Up));
    let u = [0.0, 0.25, 0.75, 1.0];
    for i in 0..4 {
        for j in 0..4 {
            assert!((y.at(0, 0, i, j) - (u[j] + 2.0 * u[i])).abs() < 1e-15);
        }
    }
}

#[test]
fn resize_down_of_up_ramp_is_exact_in_interior() {
    let x = Tensor::from_fn(Shape::new(1, 1, 8, 8), |_, _, h, w| 0.3 * h as Real - 0.2 * w as Real + 1.0);
    let y = run1(&x, |t, v| {
        let up = t.bilinear_resize(v, 2, ResizeMode::Up)?;
        t.bilinear_resize(up, 2, ResizeMode::Down)
    });
    for h in 1..7 {
        for w in 1..7 {
            assert!((y.at(0, 0, h, w) - x.at(0, 0, h, w)).abs() < 1e-12);
        }
    }
    // Border taps are clamped, so the outermost ring is pulled inward by
    // one eighth of the ramp slope.
    assert!((y.at(0, 0, 3, 0) - (x.at(0, 0, 3, 0) - 0.2 * 0.125)).abs() < 1e-12);
}

#[test]
fn resize_down_averages_pairs() {
    let x = Tensor::randn(Shape::new(1, 1, 4, 4), &mut rng(4));
    let y = run1(&x, |t, v| t.bilinear_resize(v, 2, ResizeMode::Down));
    for i in 0..2 {
        for j in 0..2 {
            let m = (x.at(0, 0, 2 * i, 2 * j)
                + x.at(0, 0, 2 * i + 1, 2 * j)
                + x.at(0, 0, 2 * i, 2 * j + 1)
                + x.at(0, 0, 2 * i + 1, 2 * j + 1))
                / 4.0;
            assert!((y.at(0, 0, i, j) - m).abs() < 1e-12);
        }
    }
}

#[test]
fn resize_rejects_non_integral_or_bad_factor() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(Shape::new(1, 1, 6, 6)));
    assert!(tape.bilinear_resize(x, 4, ResizeMode::Down).is_err());
    assert!(tape.bilinear_resize(x, 3, ResizeMode::Up).is_err());
    assert!(tape.bilinear_resize(x, 2, ResizeMode::Down).is_ok());
}

#[test]
fn global_pools() {
    let ones = Tensor::ones(Shape::new(1, 2, 3, 3));
    assert!(run1(&ones, |t, v| Ok(t.global_avg_pool(v))).data().iter().all(|&v| v == 1.0));
    assert!(run1(&ones, |t, v| Ok(t.global_max_pool(v))).data().iter().all(|&v| v == 1.0));
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(run1(&x, |t, v| Ok(t.global_avg_pool(v))).item(), 2.5);
    assert_eq!(run1(&x, |t, v| Ok(t.global_max_pool(v))).item(), 4.0);
}

#[test]
fn pools_match_loop_oracle() {
    let x = Tensor::randn(Shape::new(2, 4, 8, 8), &mut rng(5));
    let gap = run1(&x, |t, v| Ok(t.global_avg_pool(v)));
    let gmp = run1(&x, |t, v| Ok(t.global_max_pool(v)));
    let local = run1(&x, |t, v| t.avg_pool(v, 3, 1, 1));
    for n in 0..2 {
        for c in 0..4 {
            let mut s = 0.0;
            let mut m = Real::NEG_INFINITY;
            for h in 0..8 {
                for w in 0..8 {
                    s += x.at(n, c, h, w);
                    m = m.max(x.at(n, c, h, w));
                }
            }
            assert!((gap.at(n, c, 0, 0) - s / 64.0).abs() < 1e-12);
            assert_eq!(gmp.at(n, c, 0, 0), m);
            for h in 0..8usize {
                for w in 0..8usize {
                    let mut acc = 0.0;
                    let mut cnt = 0.0;
                    for y in h.saturating_sub(1)..=(h + 1).min(7) {
                        for xx in w.saturating_sub(1)..=(w + 1).min(7) {
                            acc += x.at(n, c, y, xx);
                            cnt += 1.0;
                        }
                    }
                    assert!((local.at(n, c, h, w) - acc / cnt).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn elementwise_examples() {
    let z = Tensor::zeros(Shape::scalar());
    assert_eq!(run1(&z, |t, v| Ok(t.sigmoid(v))).item(), 0.5);
    assert!((run1(&z, |t, v| Ok(t.sqrt_eps(v, 1e-6))).item() - 1e-3).abs() < 1e-15);
    let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(run1(&x, |t, v| Ok(t.relu(v))).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn broadcast_gate_scales_each_channel() {
    let mut r = rng(6);
    let x = Tensor::randn(Shape::new(1, 3, 2, 2), &mut r);
    let gate = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![0.5, -2.0, 3.0]).unwrap();
    let y = run1(&x, |t, v| {
        let g = t.constant(gate.clone());
        t.mul(g, v)
    });
    for c in 0..3 {
        for h in 0..2 {
            for w in 0..2 {
                assert_eq!(y.at(0, c, h, w), x.at(0, c, h, w) * gate.data()[c]);
            }
        }
    }
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(Shape::new(1, 3, 2, 2)));
    let b = tape.constant(Tensor::zeros(Shape::new(1, 2, 2, 2)));
    assert!(tape.add(a, b).is_err());
}

#[test]
fn softmax_examples() {
    let x = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.3, 0.3]).unwrap();
    assert_eq!(run1(&x, |t, v| t.softmax_channels(v, 1)).data(), &[0.5, 0.5]);
    let x = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.0, (3.0 as Real).ln()]).unwrap();
    let y = run1(&x, |t, v| t.softmax_channels(v, 1));
    assert!((y.data()[0] - 0.25).abs() < 1e-15 && (y.data()[1] - 0.75).abs() < 1e-15);
    let x = Tensor::randn(Shape::new(3, 2, 5, 5), &mut rng(7)).map(|v| 30.0 * v);
    let y = run1(&x, |t, v| t.softmax_channels(v, 1));
    for n in 0..3 {
        for h in 0..5 {
            for w in 0..5 {
                let s = y.at(n, 0, h, w) + y.at(n, 1, h, w);
                assert!((s - 1.0).abs() < 1e-12);
                assert!(y.at(n, 0, h, w) > 0.0 || x.at(n, 0, h, w) - x.at(n, 1, h, w) < -700.0);
            }
        }
    }
    assert!(run1(&Tensor::zeros(Shape::new(1, 4, 1, 1)), |t, v| t.softmax_channels(v, 2))
        .data()
        .iter()
        .all(|&v| v == 0.5));
}

fn bn_run(x: &Tensor, gamma: Real, beta: Real, train: bool, rm: Real, rv: Real) -> (Tensor, Option<BatchStats>) {
    let c = x.shape().c;
    let cs = Shape::new(1, c, 1, 1);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(Tensor::full(cs, gamma));
    let b = tape.constant(Tensor::full(cs, beta));
    let (y, stats) = tape
        .batch_norm(xv, g, b, &Tensor::full(cs, rm), &Tensor::full(cs, rv), train, 1e-5)
        .unwrap();
    (tape.value(y).clone(), stats)
}

#[test]
fn batch_norm_eval_identity() {
    let x = Tensor::full(Shape::new(2, 3, 2, 2), 0.4);
    let (y, stats) = bn_run(&x, 1.0, 0.0, false, 0.0, 1.0);
    assert!(stats.is_none());
    assert!(y.max_abs_diff(&x) < 1e-5);
}

#[test]
fn batch_norm_train_moments_and_affine() {
    let x = Tensor::randn(Shape::new(3, 4, 5, 5), &mut rng(8)).map(|v| 5.0 * v + 1.5);
    let (y, stats) = bn_run(&x, 1.0, 0.0, true, 0.0, 1.0);
    assert!(stats.is_some());
    for c in 0..4 {
        let vals: Vec<Real> = (0..3)
            .flat_map(|n| (0..25).map(move |p| (n, p)))
            .map(|(n, p)| y.at(n, c, p / 5, p % 5))
            .collect();
        let m = vals.iter().sum::<Real>() / 75.0;
        let v = vals.iter().map(|u| (u - m) * (u - m)).sum::<Real>() / 75.0;
        assert!(m.abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-6, "var {v}");
    }
    let (y2, _) = bn_run(&x, 2.0, 1.0, true, 0.0, 1.0);
    for (a, b) in y.data().iter().zip(y2.data()) {
        assert!((b - (2.0 * a + 1.0)).abs() < 1e-12);
    }
}

#[test]
fn batch_norm_rejects_single_item_batch_in_train() {
    let x = Tensor::zeros(Shape::new(1, 2, 3, 3));
    let c = Tensor::zeros(Shape::new(1, 2, 1, 1));
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(c.clone());
    let b = tape.constant(c.clone());
    assert!(matches!(
        tape.batch_norm(xv, g, b, &c, &c, true, 1e-5),
        Err(Error::BatchTooSmall(1))
    ));
    assert!(tape.batch_norm(xv, g, b, &c, &Tensor::ones(c.shape()), false, 1e-5).is_ok());
}

#[test]
fn backward_sum_of_squares() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 2.0]).unwrap(), true);
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_sigmoid_at_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(Shape::scalar()), true);
    let y = tape.sigmoid(x);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 0.25);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, 1, 2)), true);
    assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn fan_out_accumulates_exactly() {
    let x0 = Tensor::randn(Shape::new(1, 2, 3, 3), &mut rng(9));
    let grad_of = |twice: bool| {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone(), true);
        let s = tape.sigmoid(x);
        let g = tape.mul(s, x).unwrap();
        let y = if twice { tape.add(g, g).unwrap() } else { g };
        let l = tape.sum(y);
        tape.backward(l).unwrap().get(x).unwrap().clone()
    };
    let single = grad_of(false);
    let double = grad_of(true);
    for (a, b) in single.data().iter().zip(double.data()) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn gradcheck_conv_family() {
    let mut r = rng(10);
    let x = Tensor::randn(Shape::new(2, 3, 6, 6), &mut r);
    let w = Tensor::randn(Shape::new(4, 3, 3, 3), &mut r);
    let b = Tensor::randn(Shape::new(1, 4, 1, 1), &mut r);
    check(|t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1), &[x.clone(), w, b]);
    let w2 = Tensor::randn(Shape::new(2, 3, 3, 3), &mut r);
    check(|t, v| t.conv2d(v[0], v[1], None, 2, 1), &[x.clone(), w2]);
    let dw = Tensor::randn(Shape::new(3, 1, 3, 3), &mut r);
    check(|t, v| t.conv2d_grouped(v[0], v[1], None, 1, 1, 3), &[x, dw]);
}

#[test]
fn gradcheck_pointwise_and_broadcast() {
    let mut r = rng(11);
    let a = Tensor::randn(Shape::new(2, 3, 4, 4), &mut r);
    let g = Tensor::randn(Shape::new(2, 3, 1, 1), &mut r);
    let m = Tensor::randn(Shape::new(2, 1, 4, 4), &mut r);
    check(|t, v| t.mul(v[0], v[1]), &[a.clone(), g.clone()]);
    check(|t, v| t.mul(v[1], v[0]), &[a.clone(), m.clone()]);
    check(|t, v| t.sub(v[0], v[1]), &[a.clone(), m.clone()]);
    check(|t, v| t.add(v[1], v[0]), &[a.clone(), g]);
    check(|t, v| Ok(t.sigmoid(v[0])), &[a.clone()]);
    check(|t, v| {
        let sq = t.mul(v[0], v[0])?;
        Ok(t.sqrt_eps(sq, 1e-6))
    }, &[a.clone()]);
    check(|t, v| Ok(t.scale(v[0], -1.7)), &[a.clone()]);
    // Keep ReLU inputs away from the kink.
    let shifted = a.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    check(|t, v| Ok(t.relu(v[0])), &[shifted]);
}

#[test]
fn gradcheck_resize_pool_softmax() {
    let mut r = rng(12);
    let a = Tensor::randn(Shape::new(2, 3, 6, 6), &mut r);
    check(|t, v| t.bilinear_resize(v[0], 2, ResizeMode::Up), &[a.clone()]);
    check(|t, v| t.bilinear_resize(v[0], 2, ResizeMode::Down), &[a.clone()]);
    check(|t, v| t.resize_to(v[0], 13, 7), &[a.clone()]);
    check(|t, v| t.resize_to(v[0], 3, 2), &[a.clone()]);
    check(|t, v| t.avg_pool(v[0], 3, 1, 1), &[a.clone()]);
    check(|t, v| Ok(t.global_avg_pool(v[0])), &[a.clone()]);
    check(|t, v| Ok(t.global_max_pool(v[0])), &[a.clone()]);
    check(|t, v| t.softmax_channels(v[0], 1), &[a.clone()]);
    check(|t, v| {
        let c = t.concat_channels(&[v[0], v[0]])?;
        t.narrow_channels(c, 2, 3)
    }, &[a.clone()]);
    check(|t, v| Ok(t.mean(v[0])), &[a]);
}

#[test]
fn gradcheck_batch_norm_both_modes() {
    let mut r = rng(13);
    let x = Tensor::randn(Shape::new(3, 2, 4, 4), &mut r);
    let g = Tensor::uniform(Shape::new(1, 2, 1, 1), 0.5, 1.5, &mut r);
    let b = Tensor::randn(Shape::new(1, 2, 1, 1), &mut r);
    let rm = Tensor::randn(Shape::new(1, 2, 1, 1), &mut r);
    let rv = Tensor::uniform(Shape::new(1, 2, 1, 1), 0.5, 2.0, &mut r);
    for train in [true, false] {
        check(
            |t, v| Ok(t.batch_norm(v[0], v[1], v[2], &rm, &rv, train, 1e-5)?.0),
            &[x.clone(), g.clone(), b.clone()],
        );
    }
}

#[test]
fn gradcheck_losses() {
    let mut r = rng(14);
    let m = Tensor::uniform(Shape::new(2, 1, 4, 4), 0.05, 0.95, &mut r);
    let g = Tensor::from_fn(m.shape(), |_, _, h, w| ((h + w) % 3 == 0) as u8 as Real);
    check(|t, v| t.bce(v[0], &g, 1e-7), &[m.clone()]);
    check(|t, v| t.iou(v[0], &g), &[m]);
}

#[test]
fn fault_injection_is_caught() {
    let a = Tensor::randn(Shape::new(1, 2, 3, 3), &mut rng(15));
    set_fault_injection(true);
    let r = grad_check(|t, v| Ok(t.sigmoid(v[0])), &[a], GradCheckSpec::default());
    set_fault_injection(false);
    assert!(!r.unwrap().passed());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_groups_sum_to_one(seed in any::<u64>(), groups in 1usize..4, per in 1usize..4, scale in 0.1f64..50.0) {
        let x = Tensor::randn(Shape::new(2, groups * per, 3, 3), &mut rng(seed)).map(|v| v * scale as Real);
        let y = run1(&x, |t, v| t.softmax_channels(v, groups));
        for n in 0..2 {
            for g in 0..groups {
                for p in 0..9 {
                    let s: Real = (0..per).map(|j| y.at(n, g * per + j, p / 3, p % 3)).sum();
                    prop_assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn conv_agrees_with_oracle(seed in any::<u64>(), cin in 1usize..4, cout in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5]), stride in 1usize..3, hw in 5usize..9) {
        let mut r = rng(seed);
        let x = Tensor::randn(Shape::new(2, cin, hw, hw), &mut r);
        let w = Tensor::randn(Shape::new(cout, cin, k, k), &mut r);
        let pad = (k - 1) / 2;
        let y = run1(&x, |t, v| { let wv = t.constant(w.clone()); t.conv2d(v, wv, None, stride, pad) });
        prop_assert!(y.max_abs_diff(&naive_conv(&x, &w, None, stride, pad)) < 1e-12);
    }
}
