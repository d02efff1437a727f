//! L1 training with Adam and cosine annealing, PSNR/SSIM evaluation, and
//! helpers for ablation and alignment studies.

pub mod eval;
pub mod metrics;
pub mod optim;
pub mod study;
pub mod trainer;

pub use eval::{bilinear_baseline, evaluate, evaluate_samples, MetricReport, Predictor, SampleMetrics};
pub use metrics::{psnr, ssim, Psnr};
pub use optim::{adam_step, cosine_lr, AdamConfig, OptimState};
pub use trainer::{load_model, train, CheckpointManifest, StepLog, TrainConfig, Trainer};
