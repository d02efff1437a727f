//! Trains a small network on a handful of bursts and reports PSNR against
//! bilinear upsampling of the reference frame.
//!
//! `cargo run --release --example overfit_burst -- [steps] [lr]`

use burstkit::synth::{DatasetConfig, Generator, NoiseMode};
use burstkit::train::{evaluate_samples, Predictor, TrainConfig, Trainer};
use burstkit::ModelConfig;

fn main() -> burstkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let lr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let data = DatasetConfig {
        burst_size: 4,
        scale: 2,
        patch: 16,
        noise: NoiseMode::TrainRange,
        ..DatasetConfig::default()
    };
    let g = Generator::new(data)?;
    let samples = (0..4).map(|i| g.sample(1, i)).collect::<burstkit::Result<Vec<_>>>()?;

    let config = TrainConfig {
        model: ModelConfig {
            channels: 16,
            levels: 2,
            heads: 2,
            offset_groups: 2,
            scale: 2,
            ..ModelConfig::default()
        },
        steps,
        lr,
        min_lr: lr / 100.0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config)?;
    let mut window = 0.0;
    trainer.fit(&samples, |log| {
        window += log.loss;
        if (log.step + 1) % 50 == 0 {
            println!("step {:>5}  L1 {:.5}  lr {:.1e}", log.step + 1, window / 50.0, log.lr);
            window = 0.0;
        }
    })?;
    let model = Predictor::Model {
        net: &trainer.net,
        params: &trainer.params,
    };
    let report = evaluate_samples(&model, &samples, 4)?;
    println!(
        "train PSNR {:.2} dB, bilinear {:.2} dB; SSIM {:.4} vs {:.4}",
        report.psnr_db, report.baseline_psnr_db, report.ssim, report.baseline_ssim
    );
    Ok(())
}
