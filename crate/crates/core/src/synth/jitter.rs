//! Rigid per-frame motion: rotation about the image centre plus translation,
//! bilinear resampling, zero outside the source.

use burstkit_tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Motion {
    /// `(dx, dy)` in pixels of the warped image.
    pub translation: [f64; 2],
    pub rotation_deg: f64,
}

impl Motion {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            translation: [dx, dy],
            rotation_deg: 0.0,
        }
    }

    /// Uniform in `[-max_t, max_t]^2 x [-max_r, max_r]`.
    pub fn sample(max_t: f64, max_r: f64, rng: &mut impl Rng) -> Self {
        let mut u = |m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        let dx = u(max_t);
        let dy = u(max_t);
        let r = u(max_r);
        Self {
            translation: [dx, dy],
            rotation_deg: r,
        }
    }

    /// Largest displacement of any point within `radius` of the centre.
    pub fn reach(max_t: f64, max_r: f64, radius: f64) -> f64 {
        let t = max_t * std::f64::consts::SQRT_2;
        let r = 2.0 * radius * (max_r.to_radians() / 2.0).sin();
        t + r
    }
}

/// `out(p) = in(R(-theta) (p - c - t) + c)`: content moves by `t` and rotates
/// by `theta` about the centre `c`.
pub fn warp(img: &Tensor<f64>, motion: &Motion) -> Tensor<f64> {
    let [n, ch, h, w] = img.shape();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = motion.rotation_deg.to_radians().sin_cos();
    let [tx, ty] = motion.translation;
    let mut coords = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 - cx - tx, y as f64 - cy - ty);
            coords.push((cos * px + sin * py + cx, -sin * px + cos * py + cy));
        }
    }
    let src = img.data();
    let plane = h * w;
    let mut out = vec![0.0; src.len()];
    let read = |base: usize, yi: isize, xi: isize| -> f64 {
        if yi < 0 || xi < 0 || yi >= h as isize || xi >= w as isize {
            0.0
        } else {
            src[base + yi as usize * w + xi as usize]
        }
    };
    for p in 0..n * ch {
        let base = p * plane;
        for (i, &(sx, sy)) in coords.iter().enumerate() {
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (xi, yi) = (x0 as isize, y0 as isize);
            let top = read(base, yi, xi) * (1.0 - fx) + read(base, yi, xi + 1) * fx;
            let bottom = read(base, yi + 1, xi) * (1.0 - fx) + read(base, yi + 1, xi + 1) * fx;
            out[base + i] = top * (1.0 - fy) + bottom * fy;
        }
    }
    Tensor::new(img.shape(), out).expect("shape preserved")
}

/// Frame 0 is the untouched reference; frames `1..b` get random motion.
pub fn jitter_burst(
    linear: &Tensor<f64>,
    b: usize,
    max_t: f64,
    max_r: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<Tensor<f64>>, Vec<Motion>)> {
    if b == 0 {
        bail!(Contract, "burst size must be at least 1");
    }
    let mut frames = vec![linear.clone()];
    let mut motions = vec![Motion::identity()];
    for _ in 1..b {
        let m = Motion::sample(max_t, max_r, rng);
        frames.push(warp(linear, &m));
        motions.push(m);
    }
    Ok((frames, motions))
}

/// Central `h x w` window.
pub fn crop_center(img: &Tensor<f64>, h: usize, w: usize) -> Result<Tensor<f64>> {
    let [n, c, ih, iw] = img.shape();
    if h > ih || w > iw {
        bail!(Contract, "cannot crop {h}x{w} from {ih}x{iw}");
    }
    let (oy, ox) = ((ih - h) / 2, (iw - w) / 2);
    Ok(Tensor::from_fn([n, c, h, w], |b, k, y, x| img.at(b, k, y + oy, x + ox)))
}
