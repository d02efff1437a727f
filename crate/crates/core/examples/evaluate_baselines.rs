//! Scores the non-learned predictors on a freshly generated set.

use burstkit::synth::{DatasetConfig, Generator};
use burstkit::train::eval::DEFAULT_BORDER;
use burstkit::train::{evaluate_samples, Predictor};

fn main() -> burstkit::Result<()> {
    let g = Generator::new(DatasetConfig {
        patch: 32,
        ..DatasetConfig::default()
    })?;
    let samples = (0..8).map(|i| g.sample(3, i)).collect::<burstkit::Result<Vec<_>>>()?;
    for predictor in [Predictor::Bilinear, Predictor::GroundTruth] {
        let r = evaluate_samples(&predictor, &samples, DEFAULT_BORDER)?;
        println!(
            "{:<13} PSNR {:6.2} dB{}  SSIM {:.4}",
            r.predictor,
            r.psnr_db,
            if r.saturated { " (capped)" } else { "" },
            r.ssim
        );
    }
    Ok(())
}
