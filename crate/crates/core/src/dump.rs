//! Intermediate feature maps as tensor files and grayscale previews.

use std::fs;
use std::path::{Path, PathBuf};

use burstkit_tensor::io::write_tensor;
use burstkit_tensor::{Tape, Tensor};
use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::align::{LABEL_IN, LABEL_OUT};
use crate::error::{bail, Error, Result};
use crate::model::GmtNet;
use crate::params::ParamStore;
use crate::synth::isp::linear_to_srgb;
use crate::upsampler::{label_ur, label_us, Upsampler};

/// Mean absolute activation over channels, min-max scaled to `0..=255`.
pub fn feature_preview(feats: &Tensor<f64>, batch: usize) -> Result<GrayImage> {
    let [n, c, h, w] = feats.shape();
    if batch >= n {
        bail!(Contract, "batch {batch} out of range for {n}");
    }
    let mut energy = vec![0.0; h * w];
    for k in 0..c {
        for y in 0..h {
            for x in 0..w {
                energy[y * w + x] += feats.at(batch, k, y, x).abs() / c as f64;
            }
        }
    }
    let lo = energy.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    Ok(GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = (energy[y as usize * w + x as usize] - lo) / span;
        Luma([(v * 255.0).round() as u8])
    }))
}

/// Linear RGB `(1, 3, H, W)` to an 8-bit sRGB image.
pub fn rgb_preview(img: &Tensor<f64>) -> Result<RgbImage> {
    let [n, c, h, w] = img.shape();
    if n != 1 || c != 3 {
        bail!(Contract, "expected (1, 3, H, W), got {:?}", img.shape());
    }
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |k| (linear_to_srgb(img.at(0, k, y as usize, x as usize).clamp(0.0, 1.0)) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    }))
}

pub(crate) fn save_png(img: &image::DynamicImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other),
    })
}

/// Writes `mbfa_in`/`mbfa_out` (all frames) and every `U_r`/`U_s` ladder
/// level as `.bkt` plus one PNG per frame or level. Returns the PNG paths.
pub fn dump_features(net: &GmtNet, params: &ParamStore<f64>, frames: &Tensor<f64>, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    net.forward(&p, tape.constant(frames.clone()))?;
    let mut stages: Vec<(String, String)> = vec![
        (LABEL_IN.to_owned(), "mbfa_in".to_owned()),
        (LABEL_OUT.to_owned(), "mbfa_out".to_owned()),
    ];
    if let Upsampler::Rtfu(r) = &net.upsampler {
        for &s in r.scales() {
            stages.push((label_ur(s), format!("ur_x{s}")));
        }
        for &s in r.scales() {
            stages.push((label_us(s), format!("us_x{s}")));
        }
    }
    let mut pngs = Vec::new();
    for (label, stem) in stages {
        let Some(var) = tape.find(&label) else {
            bail!(Contract, "stage {label} was not recorded");
        };
        let value = var.value();
        let bkt = out.join(format!("{stem}.bkt"));
        write_tensor(&bkt, &value).map_err(|e| Error::format(&bkt, e))?;
        let n = value.shape()[0];
        for b in 0..n {
            let name = if n > 1 { format!("{stem}_frame{b:02}.png") } else { format!("{stem}.png") };
            let path = out.join(name);
            save_png(&image::DynamicImage::ImageLuma8(feature_preview(&value, b)?), &path)?;
            pngs.push(path);
        }
    }
    Ok(pngs)
}
