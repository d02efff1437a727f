//! Writes a small synthetic burst dataset and prints what ended up on disk.
//!
//! `cargo run --release --example generate_dataset -- [out_dir] [count]`

use std::path::PathBuf;

use burstkit::synth::{write_dataset, Dataset, DatasetConfig, NoiseMode};

fn main() -> burstkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("burstkit-demo-data"));
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);

    let config = DatasetConfig {
        burst_size: 8,
        patch: 32,
        noise: NoiseMode::TrainRange,
        ..DatasetConfig::default()
    };
    let manifest = write_dataset(&config, count, 42, &out)?;
    println!("wrote {} samples to {} (config {})", manifest.count, out.display(), manifest.config_hash);

    let data = Dataset::open(&out)?;
    for i in 0..data.len() {
        let s = data.get(i)?;
        let (lr, ls) = s.meta.noise.log10();
        println!(
            "sample {i}: frames {:?} -> ground truth {:?}, log10 sigma_r {lr:.2} sigma_s {ls:.2}",
            s.frames.shape(),
            s.ground_truth.shape()
        );
    }
    Ok(())
}
