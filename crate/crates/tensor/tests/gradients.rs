//! Central finite-difference checks of every differentiable op in 64-bit.

use burstkit_tensor::gradcheck::{check_gradients, GradCheck};
use burstkit_tensor::{concat_batch, concat_channels, ConvSpec, ResizeMode, Result, Shape, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 5;
const TOL: f64 = 1e-4;

fn rand_tensor(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

/// A fixed random projection so every output element influences the scalar.
fn project<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let w = y.tape().constant(rand_tensor(y.shape(), seed ^ 0xABCD));
    y.mul(w)?.sum()
}

fn check<F>(name: &str, shapes: &[Shape], f: F)
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    for seed in 0..SEEDS {
        let inputs: Vec<Tensor<f64>> = shapes
            .iter()
            .enumerate()
            .map(|(i, &s)| rand_tensor(s, seed * 31 + i as u64))
            .collect();
        let report = check_gradients(
            |t, v| project(f(t, v)?, seed),
            &inputs,
            GradCheck {
                max_coords: 200,
                seed,
                ..GradCheck::default()
            },
        )
        .unwrap();
        assert!(
            report.max_rel_err() < TOL,
            "{name} seed {seed}: {:?}",
            report.rel_err
        );
    }
}

#[test]
fn elementwise_and_broadcast() {
    check("add", &[[2, 3, 2, 2], [1, 3, 1, 1]], |_, v| v[0].add(v[1]));
    check("sub", &[[2, 3, 2, 2], [2, 1, 2, 1]], |_, v| v[0].sub(v[1]));
    check("mul", &[[2, 3, 2, 2], [1, 3, 2, 2]], |_, v| v[0].mul(v[1]));
    check("scale", &[[1, 2, 3, 3]], |_, v| v[0].scale(-1.7)?.add_scalar(0.3));
    check("gelu", &[[1, 2, 3, 3]], |_, v| v[0].scale(3.0)?.gelu());
    check("sigmoid", &[[1, 2, 3, 3]], |_, v| v[0].scale(3.0)?.sigmoid());
}

#[test]
fn reductions() {
    check("mean", &[[2, 2, 3, 3]], |_, v| v[0].mul(v[0])?.mean());
    check("mean_hw", &[[2, 3, 3, 4]], |_, v| v[0].mean_hw());
    check("mean_batch", &[[3, 2, 2, 2]], |_, v| v[0].mean_batch());
}

#[test]
fn structural() {
    check("reshape", &[[1, 4, 2, 3]], |_, v| v[0].reshape([1, 2, 4, 3]));
    check("slice_channels", &[[2, 5, 2, 2]], |_, v| v[0].slice_channels(1, 3));
    check("slice_batch", &[[3, 2, 2, 2]], |_, v| v[0].slice_batch(1, 2));
    check("gather_batch", &[[3, 2, 2, 2]], |_, v| v[0].gather_batch(&[2, 0, 0, 1]));
    check("concat_channels", &[[2, 1, 2, 2], [2, 3, 2, 2]], |_, v| concat_channels(&[v[0], v[1], v[0]]));
    check("concat_batch", &[[1, 2, 2, 2], [2, 2, 2, 2]], |_, v| concat_batch(&[v[1], v[0]]));
    check("pixel_shuffle", &[[1, 8, 2, 3]], |_, v| v[0].pixel_shuffle(2));
    check("pixel_unshuffle", &[[1, 2, 4, 6]], |_, v| v[0].pixel_unshuffle(2));
}

#[test]
fn matmul_softmax_norm() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a: Shape = if ta { [1, 2, 4, 3] } else { [1, 2, 3, 4] };
        let b: Shape = if tb { [1, 2, 5, 4] } else { [1, 2, 4, 5] };
        check("matmul", &[a, b], move |_, v| v[0].matmul(v[1], ta, tb));
    }
    check("softmax", &[[1, 2, 3, 5]], |_, v| v[0].scale(2.0)?.softmax_last());
    check("l2_normalize", &[[1, 2, 3, 5]], |_, v| v[0].l2_normalize_last(1e-12));
    check("layer_norm", &[[2, 6, 2, 3], [1, 6, 1, 1], [1, 6, 1, 1]], |_, v| {
        v[0].layer_norm(v[1], v[2], 1e-6)
    });
    check("l1_loss", &[[1, 2, 3, 3], [1, 2, 3, 3]], |_, v| v[0].l1_loss(v[1]));
}

#[test]
fn convolutions() {
    check("conv3x3", &[[2, 3, 5, 5], [4, 3, 3, 3], [1, 4, 1, 1]], |_, v| {
        v[0].conv2d(v[1], Some(v[2]), ConvSpec::same(3))
    });
    check("conv1x1", &[[1, 4, 3, 3], [2, 4, 1, 1]], |_, v| {
        v[0].conv2d(v[1], None, ConvSpec::pointwise().without_bias())
    });
    check("conv_stride2", &[[1, 2, 6, 6], [3, 2, 3, 3], [1, 3, 1, 1]], |_, v| {
        v[0].conv2d(v[1], Some(v[2]), ConvSpec::same(3).with_stride(2))
    });
    check("conv_grouped", &[[1, 4, 4, 4], [6, 2, 3, 3]], |_, v| {
        v[0].conv2d(v[1], None, ConvSpec::same(3).with_groups(2).without_bias())
    });
    check("conv_depthwise5", &[[2, 3, 6, 6], [3, 1, 5, 5], [1, 3, 1, 1]], |_, v| {
        v[0].conv2d(v[1], Some(v[2]), ConvSpec::same(5).with_groups(3))
    });
}

#[test]
fn resizes() {
    for mode in [ResizeMode::Nearest, ResizeMode::Bilinear, ResizeMode::Bicubic] {
        check("resize_up", &[[1, 2, 3, 4]], move |_, v| v[0].resize(6, 8, mode));
        check("resize_down", &[[1, 2, 8, 8]], move |_, v| v[0].resize(4, 2, mode));
    }
}

#[test]
fn deformable_conv_input_weight_modulation() {
    // Offsets are held fixed at non-integral values; their own check lives in deform.rs.
    check(
        "deform_conv",
        &[[2, 4, 5, 5], [3, 4, 3, 3], [1, 3, 1, 1], [2, 18, 5, 5]],
        |t, v| {
            let off = t.constant(rand_tensor([2, 36, 5, 5], 5).map(|v| v * 1.3 + 0.37));
            let mask = v[3].sigmoid()?;
            v[0].deform_conv2d(off, mask, v[1], Some(v[2]), ConvSpec::same(3))
        },
    );
}
