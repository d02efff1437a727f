//! Heteroscedastic read + shot noise: `x + N(0, sigma_r^2 + sigma_s * x)`.

use burstkit_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// `(gain, log10 sigma_r, log10 sigma_s)`.
pub const GAIN_PRESETS: [(u8, f64, f64); 4] = [
    (1, -2.2, -2.6),
    (2, -1.8, -2.2),
    (4, -1.4, -1.8),
    (8, -1.1, -1.5),
];

/// Training range of `log10 sigma_r`.
pub const LOG_SIGMA_R_RANGE: (f64, f64) = (-3.0, -1.5);
/// Training range of `log10 sigma_s`.
pub const LOG_SIGMA_S_RANGE: (f64, f64) = (-4.0, -2.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Read-noise standard deviation.
    pub sigma_r: f64,
    /// Shot-noise scale; variance grows as `sigma_s * x`.
    pub sigma_s: f64,
    #[serde(default)]
    pub gain_label: Option<u8>,
}

impl NoiseParams {
    pub fn new(sigma_r: f64, sigma_s: f64) -> Result<Self> {
        if !(sigma_r > 0.0 && sigma_s > 0.0 && sigma_r.is_finite() && sigma_s.is_finite()) {
            bail!(Config, "noise parameters must be positive, got sigma_r={sigma_r}, sigma_s={sigma_s}");
        }
        Ok(Self {
            sigma_r,
            sigma_s,
            gain_label: None,
        })
    }

    pub fn from_log10(log_r: f64, log_s: f64) -> Self {
        Self {
            sigma_r: 10f64.powf(log_r),
            sigma_s: 10f64.powf(log_s),
            gain_label: None,
        }
    }

    /// Fixed parameters for gain 1, 2, 4 or 8.
    pub fn gain(gain: u8) -> Result<Self> {
        match GAIN_PRESETS.iter().find(|p| p.0 == gain) {
            Some(&(g, r, s)) => Ok(Self {
                gain_label: Some(g),
                ..Self::from_log10(r, s)
            }),
            None => bail!(Config, "unknown gain preset {gain}; expected 1, 2, 4 or 8"),
        }
    }

    /// Log-uniform draw over the training range.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let r = rng.gen_range(LOG_SIGMA_R_RANGE.0..LOG_SIGMA_R_RANGE.1);
        let s = rng.gen_range(LOG_SIGMA_S_RANGE.0..LOG_SIGMA_S_RANGE.1);
        Self::from_log10(r, s)
    }

    pub fn sample_seeded(seed: u64) -> Self {
        Self::sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn log10(&self) -> (f64, f64) {
        (self.sigma_r.log10(), self.sigma_s.log10())
    }

    /// Noise variance at clean intensity `x`.
    pub fn variance(&self, x: f64) -> f64 {
        self.sigma_r * self.sigma_r + self.sigma_s * x.max(0.0)
    }
}

/// Which noise parameters a dataset uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Fresh log-uniform parameters per burst.
    TrainRange,
    Gain1,
    Gain2,
    Gain4,
    Gain8,
}

impl NoiseMode {
    pub fn params(self, rng: &mut impl Rng) -> NoiseParams {
        let preset = |g| NoiseParams::gain(g).expect("built-in preset");
        match self {
            NoiseMode::TrainRange => NoiseParams::sample(rng),
            NoiseMode::Gain1 => preset(1),
            NoiseMode::Gain2 => preset(2),
            NoiseMode::Gain4 => preset(4),
            NoiseMode::Gain8 => preset(8),
        }
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train-range" => NoiseMode::TrainRange,
            "gain1" => NoiseMode::Gain1,
            "gain2" => NoiseMode::Gain2,
            "gain4" => NoiseMode::Gain4,
            "gain8" => NoiseMode::Gain8,
            other => bail!(Config, "unknown noise mode {other:?}"),
        })
    }
}

/// Adds signed noise; values are not clipped afterwards.
pub fn add_noise(raw: &Tensor<f64>, params: &NoiseParams, rng: &mut impl Rng) -> Tensor<f64> {
    let mut out = raw.clone();
    for v in out.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += params.variance(*v).sqrt() * z;
    }
    out
}

pub fn add_noise_seeded(raw: &Tensor<f64>, params: &NoiseParams, seed: u64) -> Tensor<f64> {
    add_noise(raw, params, &mut ChaCha8Rng::seed_from_u64(seed))
}
