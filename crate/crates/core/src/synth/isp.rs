//! Camera pipeline approximations: sRGB to linear camera RGB and back.
//!
//! Constants follow the commonly used unprocessing recipe: a smoothstep tone
//! curve, the sRGB transfer function, a colour matrix drawn as a random convex
//! mix of four camera XYZ-to-camera matrices, and white-balance gains.

use burstkit_tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

pub type Mat3 = [[f64; 3]; 3];

pub const XYZ_TO_CAM: [Mat3; 4] = [
    [[1.0234, -0.2969, -0.2266], [-0.5625, 1.6328, -0.0469], [-0.0703, 0.2188, 0.6406]],
    [[0.4913, -0.0541, -0.0202], [-0.613, 1.3513, 0.2906], [-0.1564, 0.2151, 0.7183]],
    [[0.838, -0.263, -0.0639], [-0.2887, 1.0725, 0.2496], [-0.0627, 0.1427, 0.5438]],
    [[0.6596, -0.2079, -0.0562], [-0.4782, 1.3016, 0.1933], [-0.097, 0.1581, 0.5181]],
];

pub const RGB_TO_XYZ: Mat3 = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IspConfig {
    /// Range of the red and blue white-balance gains; inverse gains lie in
    /// `[1 / hi, 1 / lo]`.
    pub wb_gain_range: (f64, f64),
    /// Draw a random colour matrix; otherwise the identity.
    pub random_ccm: bool,
}

impl Default for IspConfig {
    fn default() -> Self {
        Self {
            wb_gain_range: (1.9, 2.4),
            random_ccm: true,
        }
    }
}

/// Per-sample pipeline parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IspParams {
    /// Linear RGB to camera RGB, rows summing to one.
    pub rgb_to_cam: Mat3,
    pub red_gain: f64,
    pub blue_gain: f64,
}

impl IspParams {
    pub fn identity() -> Self {
        Self {
            rgb_to_cam: IDENTITY,
            red_gain: 1.0,
            blue_gain: 1.0,
        }
    }

    pub fn sample(cfg: &IspConfig, rng: &mut impl Rng) -> Self {
        let rgb_to_cam = if cfg.random_ccm {
            let weights: Vec<f64> = (0..XYZ_TO_CAM.len()).map(|_| rng.gen_range(1e-3..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let mut xyz_to_cam = [[0.0; 3]; 3];
            for (m, w) in XYZ_TO_CAM.iter().zip(&weights) {
                for r in 0..3 {
                    for c in 0..3 {
                        xyz_to_cam[r][c] += m[r][c] * w / total;
                    }
                }
            }
            let mut m = matmul3(&xyz_to_cam, &RGB_TO_XYZ);
            for row in &mut m {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
            m
        } else {
            IDENTITY
        };
        let (lo, hi) = cfg.wb_gain_range;
        let mut gain = || if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let red_gain = gain();
        let blue_gain = gain();
        Self {
            rgb_to_cam,
            red_gain,
            blue_gain,
        }
    }

    fn gains(&self) -> [f64; 3] {
        [self.red_gain, 1.0, self.blue_gain]
    }
}

pub fn matmul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = (0..3).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

pub fn invert3(m: &Mat3) -> Result<Mat3> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        bail!(Numeric, "singular colour matrix");
    }
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            inv[r][c] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
        }
    }
    Ok(inv)
}

pub fn smoothstep(x: f64) -> f64 {
    3.0 * x * x - 2.0 * x * x * x
}

pub fn inverse_smoothstep(y: f64) -> f64 {
    let y = y.clamp(0.0, 1.0);
    0.5 - ((1.0 - 2.0 * y).asin() / 3.0).sin()
}

/// sRGB-encoded to linear.
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Linear to sRGB-encoded.
pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.max(0.0);
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn map_pixels(img: &Tensor<f64>, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Tensor<f64>> {
    let [n, c, h, w] = img.shape();
    if c != 3 {
        bail!(Contract, "expected an RGB image, got shape {:?}", img.shape());
    }
    let plane = h * w;
    let src = img.data();
    let mut out = vec![0.0; src.len()];
    for b in 0..n {
        let base = b * 3 * plane;
        for i in 0..plane {
            let px = [src[base + i], src[base + plane + i], src[base + 2 * plane + i]];
            let o = f(px);
            for k in 0..3 {
                out[base + k * plane + i] = o[k];
            }
        }
    }
    Ok(Tensor::new(img.shape(), out)?)
}

/// sRGB in `[0, 1]` to clipped linear camera RGB.
pub fn inverse_isp(srgb: &Tensor<f64>, params: &IspParams) -> Result<Tensor<f64>> {
    if srgb.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        bail!(Contract, "sRGB input must lie in [0, 1]");
    }
    let m = params.rgb_to_cam;
    let gains = params.gains();
    map_pixels(srgb, |px| {
        let lin = px.map(|v| srgb_to_linear(inverse_smoothstep(v)));
        let mut out = [0.0; 3];
        for r in 0..3 {
            let cam: f64 = (0..3).map(|k| m[r][k] * lin[k]).sum();
            out[r] = (cam / gains[r]).clamp(0.0, 1.0);
        }
        out
    })
}

/// Linear camera RGB back to sRGB; the exact inverse of [`inverse_isp`]
/// wherever no clipping occurred.
pub fn forward_isp(linear: &Tensor<f64>, params: &IspParams) -> Result<Tensor<f64>> {
    let inv = invert3(&params.rgb_to_cam)?;
    let gains = params.gains();
    map_pixels(linear, |px| {
        let balanced = [px[0] * gains[0], px[1] * gains[1], px[2] * gains[2]];
        let mut out = [0.0; 3];
        for r in 0..3 {
            let rgb: f64 = (0..3).map(|k| inv[r][k] * balanced[k]).sum();
            out[r] = smoothstep(linear_to_srgb(rgb).clamp(0.0, 1.0));
        }
        out
    })
}
