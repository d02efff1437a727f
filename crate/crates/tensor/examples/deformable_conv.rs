//! Modulated deformable convolution on a tape: with zero offsets and unit
//! masks it reduces to a plain convolution, and gradients reach the offsets.

use burstkit_tensor::gradcheck::{check_gradients, GradCheck};
use burstkit_tensor::{conv2d, ConvSpec, Tape, Tensor};

fn main() -> burstkit_tensor::Result<()> {
    let x = Tensor::from_fn([1, 2, 6, 6], |_, c, y, xx| ((c * 36 + y * 6 + xx) as f64 * 0.21).sin());
    let w = Tensor::from_fn([3, 2, 3, 3], |o, c, y, xx| ((o * 18 + c * 9 + y * 3 + xx) as f64 * 0.4).cos());

    let tape = Tape::new();
    let deformed = tape
        .constant(x.clone())
        .deform_conv2d(
            tape.constant(Tensor::zeros([1, 18, 6, 6])),
            tape.constant(Tensor::ones([1, 9, 6, 6])),
            tape.constant(w.clone()),
            None,
            ConvSpec::same(3).without_bias(),
        )?
        .value();
    let plain = conv2d(&x, &w, None, ConvSpec::same(3).without_bias())?;
    println!("zero offsets vs conv: max diff {:.1e}", deformed.max_abs_diff(&plain)?);

    let offsets = Tensor::from_fn([1, 18, 6, 6], |_, c, y, xx| 0.3 + 0.2 * ((c + y + xx) as f64).sin());
    let report = check_gradients(
        |tape, v| {
            let mask = tape.constant(Tensor::full([1, 9, 6, 6], 0.7));
            let y = v[0].deform_conv2d(v[1], mask, v[2], None, ConvSpec::same(3).without_bias())?;
            y.mul(y)?.sum()
        },
        &[x, offsets, w],
        GradCheck::default(),
    )?;
    println!("relative gradient error: input {:.1e}, offsets {:.1e}, weight {:.1e}", report.rel_err[0], report.rel_err[1], report.rel_err[2]);
    Ok(())
}
