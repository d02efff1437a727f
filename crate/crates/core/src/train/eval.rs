//! Held-out evaluation against ground truth, with a bilinear anchor.

use burstkit_tensor::{par, resize, ResizeMode, Tensor};
use serde::{Deserialize, Serialize};

use super::metrics::{crop_border, psnr, ssim};
use crate::error::{bail, Result};
use crate::model::GmtNet;
use crate::params::ParamStore;
use crate::synth::{packed_to_rgb, BurstSample, Dataset};

/// Pixels dropped from each side before scoring.
pub const DEFAULT_BORDER: usize = 8;

/// What produces the image being scored.
#[derive(Clone, Copy)]
pub enum Predictor<'a> {
    Model { net: &'a GmtNet, params: &'a ParamStore<f64> },
    /// Bilinear upsampling of the reference frame.
    Bilinear,
    /// The ground truth itself; a harness sanity check.
    GroundTruth,
}

impl Predictor<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Model { .. } => "model",
            Predictor::Bilinear => "bilinear",
            Predictor::GroundTruth => "ground-truth",
        }
    }

    pub fn predict(&self, sample: &BurstSample) -> Result<Tensor<f64>> {
        let [_, _, gh, gw] = sample.ground_truth.shape();
        let out = match self {
            Predictor::Model { net, params } => net.predict(params, &sample.frames)?,
            Predictor::Bilinear => bilinear_baseline(&sample.frames, gh, gw)?,
            Predictor::GroundTruth => sample.ground_truth.clone(),
        };
        if out.shape() != sample.ground_truth.shape() {
            bail!(
                Contract,
                "prediction {:?} does not match ground truth {:?}",
                out.shape(),
                sample.ground_truth.shape()
            );
        }
        Ok(out)
    }
}

/// Reference frame as RGB (greens averaged), bilinearly resized to `h x w`.
pub fn bilinear_baseline(frames: &Tensor<f64>, h: usize, w: usize) -> Result<Tensor<f64>> {
    let reference = packed_to_rgb(&frames.batch_slice(0, 1)?)?;
    Ok(resize(&reference, h, w, ResizeMode::Bilinear)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub index: usize,
    pub psnr_db: f64,
    pub saturated: bool,
    pub ssim: f64,
    pub baseline_psnr_db: f64,
    pub baseline_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub predictor: String,
    /// Mean over samples; saturated samples count as the cap.
    pub psnr_db: f64,
    /// Every sample was saturated.
    pub saturated: bool,
    pub ssim: f64,
    pub baseline_psnr_db: f64,
    pub baseline_ssim: f64,
    pub border_crop: usize,
    pub samples: Vec<SampleMetrics>,
    pub config_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
    /// Optimizer steps behind the model, when there is one.
    pub train_steps: Option<u64>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores one sample: `(psnr, ssim)` for the predictor and the bilinear anchor.
pub fn score_sample(predictor: &Predictor, sample: &BurstSample, border: usize) -> Result<SampleMetrics> {
    let gt = crop_border(&sample.ground_truth, border)?;
    let pred = crop_border(&predictor.predict(sample)?, border)?;
    let base = crop_border(&Predictor::Bilinear.predict(sample)?, border)?;
    let p = psnr(&pred, &gt, 1.0)?;
    let b = psnr(&base, &gt, 1.0)?;
    Ok(SampleMetrics {
        index: sample.meta.index,
        psnr_db: p.db,
        saturated: p.saturated,
        ssim: ssim(&pred, &gt)?,
        baseline_psnr_db: b.db,
        baseline_ssim: ssim(&base, &gt)?,
    })
}

/// Aggregates per-sample scores into a report.
pub fn summarize(predictor: &str, samples: Vec<SampleMetrics>, border: usize) -> MetricReport {
    let n = samples.len().max(1) as f64;
    let mean = |f: fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / n;
    MetricReport {
        predictor: predictor.to_owned(),
        psnr_db: mean(|s| s.psnr_db),
        saturated: !samples.is_empty() && samples.iter().all(|s| s.saturated),
        ssim: mean(|s| s.ssim),
        baseline_psnr_db: mean(|s| s.baseline_psnr_db),
        baseline_ssim: mean(|s| s.baseline_ssim),
        border_crop: border,
        samples,
        config_hash: String::new(),
        dataset_hash: String::new(),
        seed: 0,
        train_steps: None,
    }
}

pub fn evaluate_samples(predictor: &Predictor, samples: &[BurstSample], border: usize) -> Result<MetricReport> {
    let scores = par::map_indices(samples.len(), |i| score_sample(predictor, &samples[i], border));
    Ok(summarize(predictor.name(), scores.into_iter().collect::<Result<_>>()?, border))
}

/// Scores every sample of a dataset directory.
pub fn evaluate(predictor: &Predictor, dataset: &Dataset, border: usize) -> Result<MetricReport> {
    if let Predictor::Model { net, .. } = predictor {
        if net.config.scale != dataset.manifest.config.scale {
            bail!(
                Contract,
                "checkpoint scale x{} does not match dataset scale x{}",
                net.config.scale,
                dataset.manifest.config.scale
            );
        }
    }
    let scores = par::map_indices(dataset.len(), |i| {
        let sample = dataset.get(i)?;
        score_sample(predictor, &sample, border)
    });
    let mut report = summarize(predictor.name(), scores.into_iter().collect::<Result<_>>()?, border);
    report.dataset_hash = dataset.manifest.config_hash.clone();
    report.seed = dataset.manifest.seed;
    Ok(report)
}
