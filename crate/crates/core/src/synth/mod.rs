//! Synthetic RAW bursts from clean sRGB content.
//!
//! Per burst: inverse camera pipeline, per-frame rigid jitter, bilinear
//! downsampling, RGGB mosaic packing, then heteroscedastic noise.

pub mod dataset;
pub mod isp;
pub mod jitter;
pub mod mosaic;
pub mod noise;
pub mod source;

pub use dataset::{write_dataset, BurstSample, Dataset, DatasetConfig, DatasetManifest, Generator, SampleMeta};
pub use isp::{forward_isp, inverse_isp, IspConfig, IspParams};
pub use jitter::{crop_center, jitter_burst, warp, Motion};
pub use mosaic::{mosaic_pack, mosaic_unpack, packed_to_rgb};
pub use noise::{add_noise, add_noise_seeded, NoiseMode, NoiseParams};
