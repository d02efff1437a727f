//! Full-reference image quality: PSNR and Gaussian-window SSIM.

use burstkit_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Reported in place of `+inf` for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: f64,
    /// Set when the MSE is zero (or the value would exceed the cap).
    pub saturated: bool,
}

pub fn mse(pred: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64> {
    if pred.shape() != target.shape() {
        bail!(Contract, "shape mismatch {:?} vs {:?}", pred.shape(), target.shape());
    }
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / pred.numel() as f64)
}

/// `10 log10(max_val^2 / MSE)`, capped.
pub fn psnr(pred: &Tensor<f64>, target: &Tensor<f64>, max_val: f64) -> Result<Psnr> {
    let e = mse(pred, target)?;
    let db = 10.0 * (max_val * max_val / e).log10();
    Ok(if e == 0.0 || db >= PSNR_CAP_DB {
        Psnr {
            db: PSNR_CAP_DB,
            saturated: true,
        }
    } else {
        Psnr { db, saturated: false }
    })
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64]) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, k);
    let mu_b = filter_valid(b, h, w, k);
    let aa = filter_valid(&prod(&|x, _| x * x), h, w, k);
    let bb = filter_valid(&prod(&|_, y| y * y), h, w, k);
    let ab = filter_valid(&prod(&|x, y| x * y), h, w, k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / mu_a.len() as f64
}

/// Mean local SSIM over valid window positions, averaged over every
/// `(batch, channel)` plane; dynamic range 1.
pub fn ssim(pred: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64> {
    if pred.shape() != target.shape() {
        bail!(Contract, "shape mismatch {:?} vs {:?}", pred.shape(), target.shape());
    }
    let [n, c, h, w] = pred.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        bail!(Contract, "SSIM needs at least {0}x{0} images, got {h}x{w}", SSIM_WINDOW);
    }
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let plane = h * w;
    let mut total = 0.0;
    for p in 0..n * c {
        let r = p * plane..(p + 1) * plane;
        total += ssim_plane(&pred.data()[r.clone()], &target.data()[r], h, w, &k);
    }
    Ok(total / (n * c) as f64)
}

/// Drops `border` pixels from every side.
pub fn crop_border(t: &Tensor<f64>, border: usize) -> Result<Tensor<f64>> {
    let [n, c, h, w] = t.shape();
    if 2 * border >= h || 2 * border >= w {
        bail!(Contract, "cannot crop {border} px from {h}x{w}");
    }
    Ok(Tensor::from_fn([n, c, h - 2 * border, w - 2 * border], |b, k, y, x| {
        t.at(b, k, y + border, x + border)
    }))
}
