use burstkit_tensor::gradcheck::{check_gradients, GradCheck};
use burstkit_tensor::kernels::resize::cubic_weight;
use burstkit_tensor::{
    concat_batch, concat_channels, io, ConvSpec, ResizeMode, Shape, Tape, Tensor, TensorError,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

/// Direct six-loop cross-correlation with zero padding.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, spec: ConvSpec) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape();
    let [cout, cin_g, k, _] = w.shape();
    let cout_g = cout / spec.groups;
    let ho = (h + 2 * spec.padding - spec.dilation * (k - 1) - 1) / spec.stride + 1;
    let wo = (wd + 2 * spec.padding - spec.dilation * (k - 1) - 1) / spec.stride + 1;
    let _ = cin;
    Tensor::from_fn([n, cout, ho, wo], |b, co, oy, ox| {
        let g = co / cout_g;
        let mut acc = 0.0;
        for ci in 0..cin_g {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                        continue;
                    }
                    acc += w.at(co, ci, ky, kx) * x.at(b, g * cin_g + ci, iy as usize, ix as usize);
                }
            }
        }
        acc
    })
}

fn rel_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let scale = b.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.max_abs_diff(b).unwrap() / scale
}

#[test]
fn conv_scalar_scaling() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::ones([1, 1, 3, 3]));
    let w = tape.constant(Tensor::full([1, 1, 1, 1], 2.0));
    let y = x.conv2d(w, None, ConvSpec::pointwise().without_bias()).unwrap();
    assert_eq!(y.value(), Tensor::full([1, 1, 3, 3], 2.0));
}

#[test]
fn conv_identity_kernel() {
    let tape = Tape::<f64>::new();
    let input = rand_tensor([1, 1, 3, 3], 3);
    let mut k = Tensor::zeros([1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    let y = tape
        .constant(input.clone())
        .conv2d(tape.constant(k), None, ConvSpec::same(3).without_bias())
        .unwrap();
    assert_eq!(y.value(), input);
}

#[test]
fn conv_matches_naive_loops() {
    let x = rand_tensor([2, 4, 8, 8], 1);
    let w = rand_tensor([8, 4, 3, 3], 2);
    let spec = ConvSpec::same(3).without_bias();
    let got = burstkit_tensor::conv2d(&x, &w, None, spec).unwrap();
    assert!(rel_diff(&got, &naive_conv(&x, &w, spec)) < 1e-6);

    // Strided, dilated and grouped variants against the same oracle.
    for (spec, wshape) in [
        (ConvSpec::same(3).with_stride(2).without_bias(), [6, 4, 3, 3]),
        (ConvSpec::same(3).with_dilation(2).with_padding(2).without_bias(), [4, 4, 3, 3]),
        (ConvSpec::same(3).with_groups(2).without_bias(), [6, 2, 3, 3]),
        (ConvSpec::same(5).with_groups(4).without_bias(), [4, 1, 5, 5]),
        (ConvSpec::same(3).with_groups(4).with_stride(2).without_bias(), [4, 1, 3, 3]),
    ] {
        let w = rand_tensor(wshape, 7);
        let got = burstkit_tensor::conv2d(&x, &w, None, spec).unwrap();
        assert!(rel_diff(&got, &naive_conv(&x, &w, spec)) < 1e-9, "{spec:?}");
    }
}

#[test]
fn depthwise_equals_per_channel_correlation() {
    let x = rand_tensor([1, 3, 6, 5], 4);
    let w = rand_tensor([3, 1, 3, 3], 5);
    let spec = ConvSpec::same(3).with_groups(3).without_bias();
    let y = burstkit_tensor::conv2d(&x, &w, None, spec).unwrap();
    for c in 0..3 {
        let xc = x.channel_slice(c, 1).unwrap();
        let wc = w.batch_slice(c, 1).unwrap();
        let yc = burstkit_tensor::conv2d(&xc, &wc, None, ConvSpec::same(3).without_bias()).unwrap();
        assert!(y.channel_slice(c, 1).unwrap().max_abs_diff(&yc).unwrap() < 1e-12);
    }
}

#[test]
fn conv_shape_errors() {
    let x = rand_tensor([1, 4, 4, 4], 1);
    let w = rand_tensor([2, 3, 3, 3], 1);
    let err = burstkit_tensor::conv2d(&x, &w, None, ConvSpec::same(3).without_bias()).unwrap_err();
    assert!(matches!(err, TensorError::Dimension(_)));
    let w = rand_tensor([2, 4, 5, 5], 1);
    let err = burstkit_tensor::conv2d(&x, &w, None, ConvSpec::same(5).with_padding(0).without_bias())
        .unwrap_err();
    assert!(matches!(err, TensorError::Spec(_)));
}

#[test]
fn resize_preserves_constants() {
    let x = Tensor::<f64>::full([1, 1, 4, 4], 0.375);
    for mode in [ResizeMode::Nearest, ResizeMode::Bilinear, ResizeMode::Bicubic] {
        for (h, w) in [(8, 8), (2, 2), (12, 4), (4, 4)] {
            let y = burstkit_tensor::resize(&x, h, w, mode).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.375).abs() < 1e-12));
        }
    }
}

#[test]
fn bilinear_half_pixel_closed_form() {
    let x = Tensor::<f64>::from_slice([1, 1, 2, 2], &[0.0, 1.0, 2.0, 3.0]).unwrap();
    let y = burstkit_tensor::resize(&x, 4, 4, ResizeMode::Bilinear).unwrap();
    // Per-axis weights at half-pixel sources (-0.25 -> clamp 0, 0.25, 0.75, 1.25 -> clamp 1).
    #[rustfmt::skip]
    let expected = [
        0.0, 0.25, 0.75, 1.0,
        0.5, 0.75, 1.25, 1.5,
        1.5, 1.75, 2.25, 2.5,
        2.0, 2.25, 2.75, 3.0,
    ];
    assert_eq!(y.data(), &expected);
}

#[test]
fn bicubic_matches_direct_kernel_weights() {
    let x = rand_tensor([1, 2, 5, 6], 9);
    let y = burstkit_tensor::resize(&x, 10, 12, ResizeMode::Bicubic).unwrap();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let oracle = Tensor::from_fn([1, 2, 10, 12], |_, c, oy, ox| {
        let sy = (oy as f64 + 0.5) / 2.0 - 0.5;
        let sx = (ox as f64 + 0.5) / 2.0 - 0.5;
        let (fy, fx) = (sy.floor(), sx.floor());
        let mut acc = 0.0;
        for dy in -1..=2isize {
            for dx in -1..=2isize {
                let wy = cubic_weight(sy - (fy + dy as f64));
                let wx = cubic_weight(sx - (fx + dx as f64));
                let iy = clamp(fy as isize + dy, 5);
                let ix = clamp(fx as isize + dx, 6);
                acc += wy * wx * x.at(0, c, iy, ix);
            }
        }
        acc
    });
    assert!(y.max_abs_diff(&oracle).unwrap() < 1e-6);
}

#[test]
fn resize_unit_scale_is_identity_and_rejects_fractional_dims() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(rand_tensor([1, 2, 3, 5], 2));
    for mode in [ResizeMode::Nearest, ResizeMode::Bilinear, ResizeMode::Bicubic] {
        assert_eq!(x.resize_by(1, 1, mode).unwrap().value(), x.value());
    }
    assert!(matches!(
        x.resize_by(1, 2, ResizeMode::Bilinear).unwrap_err(),
        TensorError::Spec(_)
    ));
}

#[test]
fn pixel_shuffle_definition() {
    let x = Tensor::<f64>::from_slice([1, 4, 1, 1], &[0.0, 1.0, 2.0, 3.0]).unwrap();
    let y = burstkit_tensor::pixel_shuffle(&x, 2).unwrap();
    assert_eq!(y.shape(), [1, 1, 2, 2]);
    assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0]);
    assert_eq!(burstkit_tensor::pixel_shuffle(&x, 1).unwrap(), x);
    assert!(matches!(
        burstkit_tensor::pixel_shuffle(&rand_tensor([1, 6, 2, 2], 0), 2).unwrap_err(),
        TensorError::Spec(_)
    ));
}

#[test]
fn layer_norm_statistics() {
    let tape = Tape::<f64>::new();
    let gamma = tape.constant(Tensor::ones([1, 16, 1, 1]));
    let beta = tape.constant(Tensor::zeros([1, 16, 1, 1]));
    let constant = tape.constant(Tensor::full([1, 16, 2, 2], 3.5));
    let y = constant.layer_norm(gamma, beta, 1e-6).unwrap().value();
    assert!(y.data().iter().all(|&v| v == 0.0));

    let x = tape.constant(rand_tensor([1, 16, 2, 2], 11));
    let y = x.layer_norm(gamma, beta, 1e-6).unwrap().value();
    for yy in 0..2 {
        for xx in 0..2 {
            let vals: Vec<f64> = (0..16).map(|c| y.at(0, c, yy, xx)).collect();
            let mean = vals.iter().sum::<f64>() / 16.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
    let empty = tape.constant(Tensor::zeros([1, 0, 2, 2]));
    let g0 = tape.constant(Tensor::zeros([1, 0, 1, 1]));
    assert!(matches!(
        empty.layer_norm(g0, g0, 1e-6).unwrap_err(),
        TensorError::Spec(_)
    ));
}

#[test]
fn softmax_examples() {
    let tape = Tape::<f64>::new();
    let eq = tape.constant(Tensor::full([1, 1, 1, 4], 0.7)).softmax_last().unwrap();
    assert!(eq.value().data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    let big = tape
        .constant(Tensor::from_slice([1, 1, 1, 2], &[1000.0, 0.0]).unwrap())
        .softmax_last()
        .unwrap()
        .value();
    assert!((big.data()[0] - 1.0).abs() < 1e-12 && big.data()[1] < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_is_shift_invariant(seed in 0u64..1000, shift in -50.0f64..50.0) {
        let tape = Tape::<f64>::new();
        let base = rand_tensor([1, 1, 8, 8], seed).scaled(5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
        let row_shift: Vec<f64> = (0..8).map(|_| shift + rng.gen_range(-1.0..1.0)).collect();
        let shifted = Tensor::from_fn([1, 1, 8, 8], |_, _, y, x| base.at(0, 0, y, x) + row_shift[y]);
        let a = tape.constant(base).softmax_last().unwrap().value();
        let b = tape.constant(shifted).softmax_last().unwrap().value();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-9);
        for row in a.data().chunks(8) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn pixel_shuffle_round_trip_is_exact(seed in 0u64..1000) {
        let x = rand_tensor([2, 8, 3, 3], seed).cast::<f32>();
        let y = burstkit_tensor::pixel_shuffle(&x, 2).unwrap();
        prop_assert_eq!(burstkit_tensor::pixel_unshuffle(&y, 2).unwrap(), x);
    }

    #[test]
    fn tensor_file_round_trip(seed in 0u64..1000, n in 1usize..3, c in 1usize..4, h in 1usize..5) {
        let x = rand_tensor([n, c, h, 3], seed);
        prop_assert_eq!(io::decode::<f64>(&io::encode(&x)).unwrap(), x.clone());
        let xf = x.cast::<f32>();
        prop_assert_eq!(io::decode::<f32>(&io::encode(&xf)).unwrap(), xf);
    }
}

#[test]
fn backward_simple_rules() {
    let tape = Tape::<f64>::new();
    let x0 = rand_tensor([1, 2, 3, 3], 1);
    let x = tape.leaf(x0.clone(), true);
    let s = x.sum().unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &Tensor::ones([1, 2, 3, 3]));

    let tape = Tape::<f64>::new();
    let x = tape.leaf(x0.clone(), true);
    let s = x.mul(x).unwrap().sum().unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().max_abs_diff(&x0.scaled(2.0)).unwrap() < 1e-15);
}

#[test]
fn backward_contract_errors() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(rand_tensor([1, 1, 2, 2], 1), true);
    let y = x.scale(2.0).unwrap();
    assert!(matches!(tape.backward(y), Err(TensorError::Contract(_))));
    let s = y.sum().unwrap();
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(s), Err(TensorError::Tape(_))));
}

#[test]
fn composed_conv_gelu_norm_gradient() {
    for seed in 0..5 {
        let inputs = vec![
            rand_tensor([1, 3, 5, 5], seed),
            rand_tensor([4, 3, 3, 3], seed + 100),
            rand_tensor([1, 4, 1, 1], seed + 200),
            rand_tensor([1, 4, 1, 1], seed + 300).map(|v| v + 1.5),
            rand_tensor([1, 4, 1, 1], seed + 400),
        ];
        let report = check_gradients(
            |_, v| {
                let y = v[0].conv2d(v[1], Some(v[2]), ConvSpec::same(3))?.gelu()?;
                let y = y.layer_norm(v[3], v[4], 1e-6)?;
                // Weight the sum so the layer-norm gradient is not identically zero.
                y.mul(y)?.sum()
            },
            &inputs,
            GradCheck {
                max_coords: 1000,
                seed,
                ..GradCheck::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_err() < 1e-4, "seed {seed}: {:?}", report.rel_err);
    }
}

#[test]
fn matmul_matches_loops_for_all_transposes() {
    let a = rand_tensor([2, 1, 3, 4], 1);
    let b = rand_tensor([2, 1, 4, 5], 2);
    let tape = Tape::<f64>::new();
    let expected = Tensor::from_fn([2, 1, 3, 5], |n, _, i, j| {
        (0..4).map(|k| a.at(n, 0, i, k) * b.at(n, 0, k, j)).sum()
    });
    let at = Tensor::from_fn([2, 1, 4, 3], |n, _, i, j| a.at(n, 0, j, i));
    let bt = Tensor::from_fn([2, 1, 5, 4], |n, _, i, j| b.at(n, 0, j, i));
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let av = tape.constant(if ta { at.clone() } else { a.clone() });
        let bv = tape.constant(if tb { bt.clone() } else { b.clone() });
        let got = av.matmul(bv, ta, tb).unwrap().value();
        assert!(got.max_abs_diff(&expected).unwrap() < 1e-12);
    }
}

#[test]
fn structural_ops_round_trip() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(rand_tensor([2, 3, 2, 2], 1));
    let b = tape.constant(rand_tensor([2, 1, 2, 2], 2));
    let cat = concat_channels(&[a, b]).unwrap();
    assert_eq!(cat.slice_channels(0, 3).unwrap().value(), a.value());
    assert_eq!(cat.slice_channels(3, 1).unwrap().value(), b.value());
    let stacked = concat_batch(&[a, a]).unwrap();
    assert_eq!(stacked.slice_batch(2, 2).unwrap().value(), a.value());
    let g = a.gather_batch(&[1, 1, 0]).unwrap().value();
    assert_eq!(g.batch_slice(2, 1).unwrap(), a.value().batch_slice(0, 1).unwrap());
}

#[test]
fn non_finite_outputs_are_errors() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full([1, 1, 1, 1], 1e308));
    assert!(matches!(
        x.scale(10.0).unwrap_err(),
        TensorError::NonFinite { .. }
    ));
}
