//! Trains briefly, saves a checkpoint, reloads it and runs inference on a burst.
//!
//! `cargo run --release --example infer_checkpoint -- [checkpoint_dir]`

use std::path::PathBuf;

use burstkit::synth::{DatasetConfig, Generator};
use burstkit::train::{load_model, TrainConfig, Trainer};
use burstkit::ModelConfig;

fn main() -> burstkit::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("burstkit-checkpoint"));
    let g = Generator::new(DatasetConfig {
        burst_size: 3,
        scale: 2,
        patch: 12,
        ..DatasetConfig::default()
    })?;
    let samples = (0..2).map(|i| g.sample(0, i)).collect::<burstkit::Result<Vec<_>>>()?;

    let mut trainer = Trainer::new(TrainConfig {
        model: ModelConfig {
            channels: 8,
            levels: 2,
            heads: 2,
            offset_groups: 2,
            scale: 2,
            ..ModelConfig::default()
        },
        steps: 10,
        ..TrainConfig::default()
    })?;
    trainer.fit(&samples, |_| {})?;
    trainer.save(&dir, None)?;

    let (net, params, manifest) = load_model(&dir)?;
    let restored = net.predict(&params, &samples[0].frames)?;
    println!(
        "checkpoint at step {} in {}: {:?} -> {:?}",
        manifest.step,
        dir.display(),
        samples[0].frames.shape(),
        restored.shape()
    );
    Ok(())
}
