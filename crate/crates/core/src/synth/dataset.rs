//! Burst sample generation and the on-disk dataset layout.
//!
//! ```text
//! DIR/manifest.json
//! DIR/sample_00000/{frames.bkt, gt.bkt, meta.json}
//! ```
//!
//! Each sample is a pure function of the config, the master seed and its
//! index, so samples can be generated in any order or in parallel.

use std::fs;
use std::path::{Path, PathBuf};

use burstkit_tensor::io::{read_tensor, write_tensor};
use burstkit_tensor::{par, resize, ResizeMode, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::isp::{inverse_isp, IspConfig, IspParams};
use super::jitter::{crop_center, warp, Motion};
use super::mosaic::mosaic_pack;
use super::noise::{add_noise, NoiseMode, NoiseParams};
use super::source::{load_sources, procedural_scene, random_crop, SourceImage};
use crate::error::{bail, Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const FRAMES: &str = "frames.bkt";
pub const GROUND_TRUTH: &str = "gt.bkt";
pub const META: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub burst_size: usize,
    /// Ground truth is `2 * scale` times the packed resolution.
    pub scale: usize,
    /// Packed frame side `h` (frames are `h x h`).
    pub patch: usize,
    pub noise: NoiseMode,
    /// Translation bound in mosaic pixels (ground-truth pixels / scale).
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    pub isp: IspConfig,
    /// PNG sources; procedural scenes when empty.
    pub sources: Vec<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            burst_size: 14,
            scale: 4,
            patch: 48,
            noise: NoiseMode::TrainRange,
            max_translation: 4.0,
            max_rotation_deg: 1.0,
            isp: IspConfig::default(),
            sources: Vec::new(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burst_size == 0 {
            bail!(Config, "burst size must be at least 1");
        }
        if !matches!(self.scale, 1 | 2 | 4 | 8) {
            bail!(Config, "unsupported scale {}; expected 1, 2, 4 or 8", self.scale);
        }
        if self.patch == 0 {
            bail!(Config, "patch size must be positive");
        }
        if !(self.max_translation >= 0.0 && self.max_rotation_deg >= 0.0) {
            bail!(Config, "jitter bounds must be non-negative");
        }
        let (lo, hi) = self.isp.wb_gain_range;
        if !(lo > 0.0 && hi >= lo) {
            bail!(Config, "white-balance gain range must be positive and ordered");
        }
        Ok(())
    }

    /// Ground-truth side `2 * scale * patch`.
    pub fn gt_side(&self) -> usize {
        2 * self.scale * self.patch
    }

    /// Border added around the crop so no retained pixel samples outside.
    pub fn margin(&self) -> usize {
        let radius = self.gt_side() as f64 / std::f64::consts::SQRT_2;
        let t = self.max_translation * self.scale as f64;
        Motion::reach(t, self.max_rotation_deg, radius).ceil() as usize + 2
    }

    /// Side of the canvas that is warped before cropping.
    pub fn canvas_side(&self) -> usize {
        self.gt_side() + 2 * self.margin()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub index: usize,
    pub rng_seed: u64,
    /// Per frame, in ground-truth pixels; frame 0 is the identity.
    pub motions: Vec<Motion>,
    pub noise: NoiseParams,
    pub isp: IspParams,
    /// Source PNG, or `None` for a procedural scene.
    pub source: Option<PathBuf>,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct BurstSample {
    /// Noisy packed RGGB, `(B, 4, h, w)`.
    pub frames: Tensor<f64>,
    /// Clean linear camera RGB at frame-0 geometry, `(1, 3, 2 s h, 2 s w)`.
    pub ground_truth: Tensor<f64>,
    pub meta: SampleMeta,
}

/// Per-sample seed from the master seed (splitmix64 finalizer).
pub fn sample_seed(master: u64, index: usize) -> u64 {
    let mut z = master ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Holds the validated config and any decoded PNG sources.
pub struct Generator {
    pub config: DatasetConfig,
    sources: Vec<SourceImage>,
    hash: String,
}

impl Generator {
    pub fn new(config: DatasetConfig) -> Result<Self> {
        config.validate()?;
        let sources = load_sources(&config.sources, config.canvas_side())?;
        if !config.sources.is_empty() && sources.is_empty() {
            bail!(
                Config,
                "no source image is at least {0}x{0}; lower --patch or supply larger images",
                config.canvas_side()
            );
        }
        let hash = config.hash();
        Ok(Self { config, sources, hash })
    }

    pub fn sample(&self, master_seed: u64, index: usize) -> Result<BurstSample> {
        let cfg = &self.config;
        let rng_seed = sample_seed(master_seed, index);
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let canvas_side = cfg.canvas_side();
        let (srgb, source) = if self.sources.is_empty() {
            (procedural_scene(canvas_side, &mut rng), None)
        } else {
            use rand::Rng;
            let src = &self.sources[rng.gen_range(0..self.sources.len())];
            (random_crop(src, canvas_side, &mut rng), src.path.clone())
        };
        let isp = IspParams::sample(&cfg.isp, &mut rng);
        let noise = cfg.noise.params(&mut rng);
        let linear = inverse_isp(&srgb, &isp)?;
        let max_t = cfg.max_translation * cfg.scale as f64;
        let mut motions = vec![Motion::identity()];
        for _ in 1..cfg.burst_size {
            motions.push(Motion::sample(max_t, cfg.max_rotation_deg, &mut rng));
        }
        let (gt_side, lr_side) = (cfg.gt_side(), 2 * cfg.patch);
        let mut frames = Vec::with_capacity(cfg.burst_size);
        let mut ground_truth = None;
        for (k, m) in motions.iter().enumerate() {
            let warped = if k == 0 { linear.clone() } else { warp(&linear, m) };
            let hr = crop_center(&warped, gt_side, gt_side)?;
            let lr = if cfg.scale == 1 {
                hr.clone()
            } else {
                resize(&hr, lr_side, lr_side, ResizeMode::Bilinear)?
            };
            frames.push(add_noise(&mosaic_pack(&lr)?, &noise, &mut rng));
            if k == 0 {
                ground_truth = Some(hr);
            }
        }
        Ok(BurstSample {
            frames: Tensor::cat_batch(&frames)?,
            ground_truth: ground_truth.expect("burst has a reference"),
            meta: SampleMeta {
                index,
                rng_seed,
                motions,
                noise,
                isp,
                source,
                config_hash: self.hash.clone(),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub count: usize,
    pub seed: u64,
    pub config_hash: String,
}

pub fn sample_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("sample_{index:05}"))
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

/// Frames and ground truth are stored as `f32`.
pub fn write_sample(dir: &Path, sample: &BurstSample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_tensor(dir.join(FRAMES), &sample.frames.cast::<f32>())?;
    write_tensor(dir.join(GROUND_TRUTH), &sample.ground_truth.cast::<f32>())?;
    write_json(&dir.join(META), &sample.meta)
}

pub fn read_sample(dir: &Path) -> Result<BurstSample> {
    let frames = read_tensor::<f64>(dir.join(FRAMES)).map_err(|e| Error::format(dir.join(FRAMES), e))?;
    let ground_truth =
        read_tensor::<f64>(dir.join(GROUND_TRUTH)).map_err(|e| Error::format(dir.join(GROUND_TRUTH), e))?;
    let meta = read_json(&dir.join(META))?;
    Ok(BurstSample {
        frames,
        ground_truth,
        meta,
    })
}

/// Generates `count` samples into `out`, in parallel over indices.
pub fn write_dataset(config: &DatasetConfig, count: usize, seed: u64, out: &Path) -> Result<DatasetManifest> {
    let generator = Generator::new(config.clone())?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let results = par::map_indices(count, |i| {
        let sample = generator.sample(seed, i)?;
        write_sample(&sample_dir(out, i), &sample)
    });
    results.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        config: config.clone(),
        count,
        seed,
        config_hash: generator.hash.clone(),
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    log::info!("wrote {count} samples to {}", out.display());
    Ok(manifest)
}

/// A generated dataset on disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest: DatasetManifest = read_json(&root.join(MANIFEST))?;
        if manifest.config.hash() != manifest.config_hash {
            return Err(Error::format(root.join(MANIFEST), "config hash does not match its config"));
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.count
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.count == 0
    }

    pub fn get(&self, index: usize) -> Result<BurstSample> {
        if index >= self.len() {
            bail!(Contract, "sample {index} out of range for {} samples", self.len());
        }
        read_sample(&sample_dir(&self.root, index))
    }
}
