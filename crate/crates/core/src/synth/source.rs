//! Clean sRGB source content: PNG files or procedural scenes.

use std::path::{Path, PathBuf};

use burstkit_tensor::Tensor;
use rand::Rng;

use crate::error::{Error, Result};

/// A decoded sRGB image in `[0, 1]`, `(1, 3, H, W)`.
#[derive(Debug, Clone)]
pub struct SourceImage {
    pub path: Option<PathBuf>,
    pub image: Tensor<f64>,
}

impl SourceImage {
    pub fn dims(&self) -> (usize, usize) {
        let [_, _, h, w] = self.image.shape();
        (h, w)
    }
}

/// Loads an 8- or 16-bit PNG as sRGB; alpha is dropped, grey is replicated.
pub fn load_png(path: &Path) -> Result<SourceImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other),
    })?;
    let rgb = img.to_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let image = Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        f64::from(rgb.get_pixel(x as u32, y as u32)[c]) / 65535.0
    });
    Ok(SourceImage {
        path: Some(path.to_path_buf()),
        image,
    })
}

/// Loads every PNG, skipping (with a warning) those smaller than
/// `min_side x min_side`.
pub fn load_sources(paths: &[PathBuf], min_side: usize) -> Result<Vec<SourceImage>> {
    let mut out = Vec::new();
    for p in paths {
        let s = load_png(p)?;
        let (h, w) = s.dims();
        if h < min_side || w < min_side {
            log::warn!("skipping {}: {w}x{h} is smaller than the required {min_side}x{min_side}", p.display());
            continue;
        }
        out.push(s);
    }
    Ok(out)
}

/// Random `(1, 3, size, size)` crop.
pub fn random_crop(src: &SourceImage, size: usize, rng: &mut impl Rng) -> Tensor<f64> {
    let (h, w) = src.dims();
    let oy = rng.gen_range(0..=h - size);
    let ox = rng.gen_range(0..=w - size);
    Tensor::from_fn([1, 3, size, size], |_, c, y, x| src.image.at(0, c, y + oy, x + ox))
}

enum Shape {
    Disc { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Grating { cx: f64, cy: f64, r: f64, fx: f64, fy: f64 },
}

/// A textured synthetic scene: smooth colour gradient, overlapping discs and
/// rectangles with flat colours, and sinusoidal gratings, all in `[0, 1]`.
pub fn procedural_scene(size: usize, rng: &mut impl Rng) -> Tensor<f64> {
    let s = size as f64;
    let mut colour = || [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
    let c00 = colour();
    let c11 = colour();
    let n_shapes = 10 + size / 16;
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let kind = rng.gen_range(0..3);
        let cx = rng.gen_range(0.0..s);
        let cy = rng.gen_range(0.0..s);
        let r = rng.gen_range(0.04..0.25) * s;
        let shape = match kind {
            0 => Shape::Disc { cx, cy, r },
            1 => {
                let hw = rng.gen_range(0.3..1.0) * r;
                Shape::Rect {
                    x0: cx - r,
                    y0: cy - hw,
                    x1: cx + r,
                    y1: cy + hw,
                }
            }
            _ => {
                let period = rng.gen_range(3.0..12.0);
                let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let k = std::f64::consts::TAU / period;
                Shape::Grating {
                    cx,
                    cy,
                    r,
                    fx: k * theta.cos(),
                    fy: k * theta.sin(),
                }
            }
        };
        let fg = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        shapes.push((shape, fg));
    }
    Tensor::from_fn([1, 3, size, size], |_, c, y, x| {
        let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
        let t = (xf + yf) / (2.0 * s);
        let mut v = c00[c] * (1.0 - t) + c11[c] * t;
        for (shape, fg) in &shapes {
            match *shape {
                Shape::Disc { cx, cy, r } => {
                    if (xf - cx).powi(2) + (yf - cy).powi(2) <= r * r {
                        v = fg[c];
                    }
                }
                Shape::Rect { x0, y0, x1, y1 } => {
                    if xf >= x0 && xf < x1 && yf >= y0 && yf < y1 {
                        v = fg[c];
                    }
                }
                Shape::Grating { cx, cy, r, fx, fy } => {
                    if (xf - cx).powi(2) + (yf - cy).powi(2) <= r * r {
                        let wave = 0.5 + 0.5 * (fx * xf + fy * yf).sin();
                        v = fg[c] * wave + (1.0 - fg[c]) * (1.0 - wave);
                    }
                }
            }
        }
        v.clamp(0.0, 1.0)
    })
}
