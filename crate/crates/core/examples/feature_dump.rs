//! Dumps alignment and upsampling features of a freshly initialized network
//! as PNG previews plus raw tensors.
//!
//! `cargo run --release --example feature_dump -- [out_dir]`

use std::path::PathBuf;

use burstkit::dump::dump_features;
use burstkit::synth::{DatasetConfig, Generator};
use burstkit::train::study::alignment_residual;
use burstkit::{GmtNet, ModelConfig};

fn main() -> burstkit::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("burstkit-features"));
    let g = Generator::new(DatasetConfig {
        burst_size: 4,
        patch: 16,
        ..DatasetConfig::default()
    })?;
    let sample = g.sample(9, 0)?;
    let (net, params) = GmtNet::new(ModelConfig {
        channels: 8,
        levels: 2,
        heads: 2,
        offset_groups: 2,
        ..ModelConfig::default()
    })?;
    let r = alignment_residual(&net, &params, &sample)?;
    println!("feature residual before alignment {:.4}, after {:.4}", r.pre, r.post);
    for path in dump_features(&net, &params, &sample.frames, &out)? {
        println!("{}", path.display());
    }
    Ok(())
}
