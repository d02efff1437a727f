use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Depth-to-space: `out[n, c, h*r + a, w*r + b] = in[n, c*r*r + a*r + b, h, w]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if r == 0 || c % (r * r) != 0 {
        bail!(Spec, "pixel shuffle factor {r} needs channels divisible by r^2, got {c}");
    }
    if r == 1 {
        return Ok(x.clone());
    }
    let co = c / (r * r);
    let (ho, wo) = (h * r, w * r);
    let xd = x.data();
    let mut out = vec![T::zero(); x.numel()];
    for b in 0..n {
        for oc in 0..co {
            for a in 0..r {
                for bb in 0..r {
                    let ic = oc * r * r + a * r + bb;
                    let src = &xd[((b * c + ic) * h) * w..((b * c + ic + 1) * h) * w];
                    for y in 0..h {
                        let orow = ((b * co + oc) * ho + y * r + a) * wo;
                        for xx in 0..w {
                            out[orow + xx * r + bb] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new([n, co, ho, wo], out)
}

/// Space-to-depth, the exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if r == 0 || h % r != 0 || w % r != 0 {
        bail!(Spec, "pixel unshuffle factor {r} does not divide {h}x{w}");
    }
    if r == 1 {
        return Ok(x.clone());
    }
    let (ho, wo) = (h / r, w / r);
    let co = c * r * r;
    let xd = x.data();
    let mut out = vec![T::zero(); x.numel()];
    for b in 0..n {
        for ic in 0..c {
            for a in 0..r {
                for bb in 0..r {
                    let oc = ic * r * r + a * r + bb;
                    let dst = ((b * co + oc) * ho) * wo;
                    for y in 0..ho {
                        let irow = ((b * c + ic) * h + y * r + a) * w;
                        for xx in 0..wo {
                            out[dst + y * wo + xx] = xd[irow + xx * r + bb];
                        }
                    }
                }
            }
        }
    }
    Tensor::new([n, co, ho, wo], out)
}
