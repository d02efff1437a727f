//! Small-scale experiments: train-and-score runs and alignment residuals.

use burstkit_tensor::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use super::eval::{evaluate_samples, MetricReport, Predictor};
use super::trainer::{TrainConfig, Trainer};
use crate::error::{bail, Result};
use crate::model::GmtNet;
use crate::params::ParamStore;
use crate::synth::BurstSample;

/// Trains on `train` and scores on `held_out`; returns the trainer, the loss
/// curve and the report.
pub fn train_and_score(
    config: TrainConfig,
    train: &[BurstSample],
    held_out: &[BurstSample],
    border: usize,
) -> Result<(Trainer, Vec<f64>, MetricReport)> {
    let mut trainer = Trainer::new(config)?;
    let mut losses = Vec::new();
    trainer.fit(train, |log| losses.push(log.loss))?;
    let mut report = evaluate_samples(
        &Predictor::Model {
            net: &trainer.net,
            params: &trainer.params,
        },
        held_out,
        border,
    )?;
    report.config_hash = trainer.config.hash();
    report.seed = trainer.config.seed;
    report.train_steps = Some(trainer.step_count());
    Ok((trainer, losses, report))
}

/// `mean_{b >= 1} |f_b - f_0| / mean |f_0|` over a `(B, C, H, W)` stack.
pub fn relative_residual(feats: &Tensor<f64>) -> Result<f64> {
    let [b, c, h, w] = feats.shape();
    if b < 2 {
        bail!(Contract, "need at least 2 frames, got {b}");
    }
    let n = c * h * w;
    let data = feats.data();
    let reference = &data[..n];
    let scale = reference.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    if scale == 0.0 {
        bail!(Numeric, "reference features are identically zero");
    }
    let mut diff = 0.0;
    for k in 1..b {
        diff += data[k * n..(k + 1) * n].iter().zip(reference).map(|(a, r)| (a - r).abs()).sum::<f64>();
    }
    Ok(diff / ((b - 1) * n) as f64 / scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResidual {
    /// Shallow features before alignment.
    pub pre: f64,
    /// Aligned, enriched features.
    pub post: f64,
}

impl AlignmentResidual {
    pub fn ratio(&self) -> f64 {
        self.post / self.pre
    }
}

/// Frame-to-reference feature residuals before and after the alignment stage.
pub fn alignment_residual(net: &GmtNet, params: &ParamStore<f64>, sample: &BurstSample) -> Result<AlignmentResidual> {
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let out = net.mbfa.forward(&p, tape.constant(sample.frames.clone()))?;
    Ok(AlignmentResidual {
        pre: relative_residual(&out.input.value())?,
        post: relative_residual(&out.output.value())?,
    })
}
