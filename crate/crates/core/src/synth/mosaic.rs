//! RGGB Bayer sampling and packing into four half-resolution planes.

use burstkit_tensor::Tensor;

use crate::error::{bail, Result};

/// `(row, col, rgb channel)` of each packed plane within a 2x2 block.
pub const RGGB: [(usize, usize, usize); 4] = [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 2)];

/// `(N, 3, 2h, 2w)` RGB to `(N, 4, h, w)` packed `[R, G, G, B]`.
pub fn mosaic_pack(rgb: &Tensor<f64>) -> Result<Tensor<f64>> {
    let [n, c, hh, ww] = rgb.shape();
    if c != 3 {
        bail!(Contract, "expected 3 channels, got shape {:?}", rgb.shape());
    }
    if hh % 2 != 0 || ww % 2 != 0 || hh == 0 || ww == 0 {
        bail!(Contract, "mosaicking needs even, non-zero dims, got {hh}x{ww}");
    }
    Ok(Tensor::from_fn([n, 4, hh / 2, ww / 2], |b, k, y, x| {
        let (dy, dx, ch) = RGGB[k];
        rgb.at(b, ch, 2 * y + dy, 2 * x + dx)
    }))
}

/// Inverse lattice placement: every packed sample returns to its RGB
/// position; unsampled positions are zero.
pub fn mosaic_unpack(packed: &Tensor<f64>) -> Result<Tensor<f64>> {
    let [n, c, h, w] = packed.shape();
    if c != 4 {
        bail!(Contract, "expected packed RGGB (4 channels), got shape {:?}", packed.shape());
    }
    let mut out = Tensor::zeros([n, 3, 2 * h, 2 * w]);
    for b in 0..n {
        for (k, &(dy, dx, ch)) in RGGB.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let i = out.index(b, ch, 2 * y + dy, 2 * x + dx);
                    out.data_mut()[i] = packed.at(b, k, y, x);
                }
            }
        }
    }
    Ok(out)
}

/// Packed planes to half-resolution RGB: `(R, (G1 + G2) / 2, B)`.
pub fn packed_to_rgb(packed: &Tensor<f64>) -> Result<Tensor<f64>> {
    let [n, c, h, w] = packed.shape();
    if c != 4 {
        bail!(Contract, "expected packed RGGB (4 channels), got shape {:?}", packed.shape());
    }
    Ok(Tensor::from_fn([n, 3, h, w], |b, ch, y, x| match ch {
        0 => packed.at(b, 0, y, x),
        1 => 0.5 * (packed.at(b, 1, y, x) + packed.at(b, 2, y, x)),
        _ => packed.at(b, 3, y, x),
    }))
}
