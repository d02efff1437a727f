//! Trains each architectural variant on the same data and compares held-out
//! PSNR. Defaults are sized for a quick look; pass larger values to separate
//! the variants reliably.
//!
//! `cargo run --release --example ablation_study -- [steps] [train_bursts] [variants]`

use burstkit::synth::{DatasetConfig, Generator, NoiseMode};
use burstkit::train::study::train_and_score;
use burstkit::train::TrainConfig;
use burstkit::{Ablation, ModelConfig};

fn main() -> burstkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let n_train: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(16);
    let variants = args
        .next()
        .unwrap_or_else(|| "full,no-mkga,no-afe,mean-fusion,no-alignment,pixel-shuffle".into());

    let g = Generator::new(DatasetConfig {
        burst_size: 4,
        patch: 16,
        noise: NoiseMode::TrainRange,
        ..DatasetConfig::default()
    })?;
    let train = (0..n_train).map(|i| g.sample(100, i)).collect::<burstkit::Result<Vec<_>>>()?;
    let held = (0..8).map(|i| g.sample(200, i)).collect::<burstkit::Result<Vec<_>>>()?;

    for name in variants.split(',') {
        let config = TrainConfig {
            model: ModelConfig {
                channels: 16,
                levels: 3,
                heads: 4,
                offset_groups: 4,
                scale: 4,
                ablation: Ablation::preset(name)?,
                init_seed: 0,
            },
            steps,
            lr: 1e-3,
            min_lr: 1e-5,
            ..TrainConfig::default()
        };
        let (_, losses, report) = train_and_score(config, &train, &held, 8)?;
        let tail = &losses[losses.len().saturating_sub(20)..];
        println!(
            "{name:<14} held-out PSNR {:.2} dB (bilinear {:.2}), final L1 {:.4}",
            report.psnr_db,
            report.baseline_psnr_db,
            tail.iter().sum::<f64>() / tail.len() as f64
        );
    }
    Ok(())
}
