//! Separable resampling with the half-pixel coordinate convention
//! (`src = (dst + 0.5) * in / out - 0.5`, corners not aligned).

use crate::error::{bail, Result};
use crate::par;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    Nearest,
    Bilinear,
    /// Keys cubic convolution with `a = -0.75`.
    Bicubic,
}

pub const CUBIC_A: f64 = -0.75;

pub fn cubic_weight(t: f64) -> f64 {
    let a = CUBIC_A;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

type Taps = Vec<Vec<(usize, f64)>>;

/// Source taps for every output coordinate along one axis.
pub fn axis_taps(in_len: usize, out_len: usize, mode: ResizeMode) -> Taps {
    let scale = in_len as f64 / out_len as f64;
    let last = in_len as isize - 1;
    let clamp = |i: isize| i.clamp(0, last) as usize;
    (0..out_len)
        .map(|d| {
            let centre = (d as f64 + 0.5) * scale;
            let mut taps: Vec<(usize, f64)> = match mode {
                ResizeMode::Nearest => vec![(clamp(centre.floor() as isize), 1.0)],
                ResizeMode::Bilinear => {
                    let src = (centre - 0.5).max(0.0);
                    let i0 = (src.floor() as isize).min(last);
                    let l = if i0 == last { 0.0 } else { src - i0 as f64 };
                    vec![(clamp(i0), 1.0 - l), (clamp(i0 + 1), l)]
                }
                ResizeMode::Bicubic => {
                    let src = centre - 0.5;
                    let i = src.floor();
                    let t = src - i;
                    let i = i as isize;
                    vec![
                        (clamp(i - 1), cubic_weight(t + 1.0)),
                        (clamp(i), cubic_weight(t)),
                        (clamp(i + 1), cubic_weight(1.0 - t)),
                        (clamp(i + 2), cubic_weight(2.0 - t)),
                    ]
                }
            };
            taps.retain(|&(_, w)| w != 0.0);
            taps
        })
        .collect()
}

pub fn resize_forward<T: Scalar>(
    x: &Tensor<T>,
    out_h: usize,
    out_w: usize,
    mode: ResizeMode,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        bail!(Spec, "resize to {out_h}x{out_w} from {h}x{w}");
    }
    if (out_h, out_w) == (h, w) {
        return Ok(x.clone());
    }
    let ty = axis_taps(h, out_h, mode);
    let tx = axis_taps(w, out_w, mode);
    let ty: Vec<Vec<(usize, T)>> = cast_taps(&ty);
    let tx = FlatTaps::<T>::new(&tx);
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    par::for_each_chunk(&mut out, out_h * out_w, |plane_idx, oplane| {
        let src = &xd[plane_idx * h * w..(plane_idx + 1) * h * w];
        let mut tmp = vec![T::zero(); h * out_w];
        for y in 0..h {
            let srow = &src[y * w..(y + 1) * w];
            let trow = &mut tmp[y * out_w..(y + 1) * out_w];
            for (o, (idx, wt)) in trow.iter_mut().zip(tx.iter()) {
                *o = srow[idx[0]] * wt[0] + srow[idx[1]] * wt[1] + srow[idx[2]] * wt[2] + srow[idx[3]] * wt[3];
            }
        }
        for (oy, taps) in ty.iter().enumerate() {
            let orow = &mut oplane[oy * out_w..(oy + 1) * out_w];
            for &(iy, wt) in taps {
                let trow = &tmp[iy * out_w..(iy + 1) * out_w];
                for (o, &v) in orow.iter_mut().zip(trow) {
                    *o += wt * v;
                }
            }
        }
    });
    Tensor::new([n, c, out_h, out_w], out)
}

/// Adjoint of [`resize_forward`].
pub fn resize_backward<T: Scalar>(
    gout: &Tensor<T>,
    in_h: usize,
    in_w: usize,
    mode: ResizeMode,
) -> Result<Tensor<T>> {
    let [n, c, out_h, out_w] = gout.shape();
    if (out_h, out_w) == (in_h, in_w) {
        return Ok(gout.clone());
    }
    let ty: Vec<Vec<(usize, T)>> = cast_taps(&axis_taps(in_h, out_h, mode));
    let tx = FlatTaps::<T>::new(&axis_taps(in_w, out_w, mode));
    let gd = gout.data();
    let mut gin = vec![T::zero(); n * c * in_h * in_w];
    par::for_each_chunk(&mut gin, in_h * in_w, |plane_idx, gplane| {
        let g = &gd[plane_idx * out_h * out_w..(plane_idx + 1) * out_h * out_w];
        let mut tmp = vec![T::zero(); in_h * out_w];
        for (oy, taps) in ty.iter().enumerate() {
            let grow = &g[oy * out_w..(oy + 1) * out_w];
            for &(iy, wt) in taps {
                let trow = &mut tmp[iy * out_w..(iy + 1) * out_w];
                for (t, &v) in trow.iter_mut().zip(grow) {
                    *t += wt * v;
                }
            }
        }
        for y in 0..in_h {
            let trow = &tmp[y * out_w..(y + 1) * out_w];
            let dst = &mut gplane[y * in_w..(y + 1) * in_w];
            for ((idx, wt), &v) in tx.iter().zip(trow) {
                for k in 0..TAPS {
                    dst[idx[k]] += wt[k] * v;
                }
            }
        }
    });
    Tensor::new([n, c, in_h, in_w], gin)
}

const TAPS: usize = 4;

/// Taps padded to a fixed width of four (padding has weight zero).
struct FlatTaps<T> {
    idx: Vec<[usize; TAPS]>,
    w: Vec<[T; TAPS]>,
}

impl<T: Scalar> FlatTaps<T> {
    fn new(taps: &Taps) -> Self {
        let mut idx = Vec::with_capacity(taps.len());
        let mut w = Vec::with_capacity(taps.len());
        for t in taps {
            debug_assert!(t.len() <= TAPS);
            let mut i4 = [0usize; TAPS];
            let mut w4 = [T::zero(); TAPS];
            for (k, &(i, wt)) in t.iter().enumerate() {
                i4[k] = i;
                w4[k] = T::c(wt);
            }
            idx.push(i4);
            w.push(w4);
        }
        Self { idx, w }
    }

    fn iter(&self) -> impl Iterator<Item = (&[usize; TAPS], &[T; TAPS])> {
        self.idx.iter().zip(&self.w)
    }
}

fn cast_taps<T: Scalar>(taps: &Taps) -> Vec<Vec<(usize, T)>> {
    taps.iter()
        .map(|t| t.iter().map(|&(i, w)| (i, T::c(w))).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_kernel_partition_of_unity() {
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let s = cubic_weight(t + 1.0) + cubic_weight(t) + cubic_weight(1.0 - t) + cubic_weight(2.0 - t);
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(cubic_weight(0.0), 1.0);
        assert_eq!(cubic_weight(1.0), 0.0);
        assert_eq!(cubic_weight(2.0), 0.0);
    }

    #[test]
    fn taps_sum_to_one() {
        for mode in [ResizeMode::Nearest, ResizeMode::Bilinear, ResizeMode::Bicubic] {
            for (a, b) in [(4, 8), (8, 4), (5, 7), (3, 3)] {
                for taps in axis_taps(a, b, mode) {
                    let s: f64 = taps.iter().map(|t| t.1).sum();
                    assert!((s - 1.0).abs() < 1e-12, "{mode:?} {a}->{b}");
                }
            }
        }
    }
}
