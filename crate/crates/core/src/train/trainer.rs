//! The training loop, checkpoints and loss curves.
//!
//! ```text
//! OUT/manifest.json        config, completed steps, config hash
//! OUT/params/<name>.bkt
//! OUT/optim/{m,v}/<name>.bkt
//! OUT/loss.csv             step,loss,lr
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use burstkit_tensor::{Scalar, Tape, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::{adam_step, clip_grad_norm, AdamConfig, OptimState};
use crate::error::{bail, Error, Result};
use crate::model::{GmtNet, ModelConfig};
use crate::params::ParamStore;
use crate::synth::dataset::{hex, read_json, sample_seed, write_json, Dataset};
use crate::synth::BurstSample;

pub const CHECKPOINT_MANIFEST: &str = "manifest.json";
pub const LOSS_CSV: &str = "loss.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub steps: u64,
    pub lr: f64,
    pub min_lr: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Drives the per-epoch sample order.
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Arithmetic for forward and backward; master weights and Adam state
    /// stay in `f64`.
    pub precision: Precision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            steps: 1000,
            lr: 1e-4,
            min_lr: 1e-6,
            clip_norm: Some(1.0),
            seed: 0,
            checkpoint_every: 250,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0 && self.min_lr >= 0.0 && self.min_lr <= self.lr) {
            bail!(Config, "need 0 <= min_lr <= lr and lr > 0, got lr={} min_lr={}", self.lr, self.min_lr);
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                bail!(Config, "clip norm must be positive, got {c}");
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            base_lr: self.lr,
            min_lr: self.min_lr,
            total_steps: self.steps,
            ..AdamConfig::default()
        }
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: TrainConfig,
    /// Completed optimizer steps.
    pub step: u64,
    pub config_hash: String,
    pub dataset_hash: Option<String>,
    pub param_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

/// Dataset index used at `step`: a fresh permutation every epoch.
pub fn sample_order(seed: u64, step: u64, count: usize) -> usize {
    let epoch = step / count as u64;
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(seed, epoch as usize)));
    order[(step % count as u64) as usize]
}

fn is_numeric(e: &Error) -> bool {
    matches!(e, Error::Numeric(_) | Error::Tensor(TensorError::NonFinite { .. }))
}

pub struct Trainer {
    pub config: TrainConfig,
    pub net: GmtNet,
    pub params: ParamStore<f64>,
    pub optim: OptimState,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (net, params) = GmtNet::new(config.model.clone())?;
        let optim = OptimState::new(&params, config.adam());
        Ok(Self {
            config,
            net,
            params,
            optim,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.optim.step
    }

    /// L1 loss of the current parameters on one burst, without updating.
    pub fn loss(&self, sample: &BurstSample) -> Result<f64> {
        match self.config.precision {
            Precision::F32 => self.loss_in::<f32>(sample),
            Precision::F64 => self.loss_in::<f64>(sample),
        }
    }

    fn loss_in<T: Scalar>(&self, sample: &BurstSample) -> Result<f64> {
        let tape = Tape::<T>::new();
        let p = self.params.cast::<T>().bind(&tape, false);
        let out = self.net.forward(&p, tape.constant(sample.frames.cast()))?;
        let loss = out.image.l1_loss(tape.constant(sample.ground_truth.cast()))?;
        Ok(loss.value().item()?.f64())
    }

    fn gradients<T: Scalar>(&self, sample: &BurstSample) -> Result<(f64, Vec<Tensor<f64>>)> {
        let tape = Tape::<T>::new();
        let p = self.params.cast::<T>().bind(&tape, true);
        let out = self.net.forward(&p, tape.constant(sample.frames.cast()))?;
        let loss = out.image.l1_loss(tape.constant(sample.ground_truth.cast()))?;
        let value = loss.value().item()?.f64();
        if !value.is_finite() {
            bail!(Numeric, "non-finite loss at step {}", self.optim.step);
        }
        let g = tape.backward(loss)?;
        Ok((value, p.grads(&g).iter().map(|t| t.cast()).collect()))
    }

    /// Forward, L1 loss, backward, clip, Adam.
    pub fn step(&mut self, sample: &BurstSample) -> Result<StepLog> {
        let (loss, mut grads) = match self.config.precision {
            Precision::F32 => self.gradients::<f32>(sample)?,
            Precision::F64 => self.gradients::<f64>(sample)?,
        };
        let grad_norm = match self.config.clip_norm {
            Some(c) => clip_grad_norm(&mut grads, c),
            None => super::optim::global_norm(&grads),
        };
        let step = self.optim.step;
        let lr = adam_step(&mut self.params, &grads, &mut self.optim)?;
        Ok(StepLog {
            step,
            loss,
            lr,
            grad_norm,
        })
    }

    /// Trains on in-memory bursts until `self.config.steps` updates are done.
    pub fn fit(&mut self, samples: &[BurstSample], mut on_step: impl FnMut(&StepLog)) -> Result<()> {
        if samples.is_empty() {
            bail!(Contract, "no training samples");
        }
        while self.optim.step < self.config.steps {
            let i = sample_order(self.config.seed, self.optim.step, samples.len());
            let log = self.step(&samples[i])?;
            on_step(&log);
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path, dataset_hash: Option<&str>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.params.save(&dir.join("params"))?;
        self.optim.save(&dir.join("optim"))?;
        let manifest = CheckpointManifest {
            config: self.config.clone(),
            step: self.optim.step,
            config_hash: self.config.hash(),
            dataset_hash: dataset_hash.map(str::to_owned),
            param_count: self.params.numel(),
        };
        write_json(&dir.join(CHECKPOINT_MANIFEST), &manifest)
    }

    pub fn load(dir: &Path) -> Result<(Self, CheckpointManifest)> {
        let manifest = read_manifest(dir)?;
        let mut trainer = Self::new(manifest.config.clone())?;
        trainer.params.load(&dir.join("params"))?;
        trainer.optim.load(&dir.join("optim"), manifest.step)?;
        Ok((trainer, manifest))
    }
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let manifest: CheckpointManifest = read_json(&path)?;
    if manifest.config.hash() != manifest.config_hash {
        return Err(Error::format(&path, "config hash does not match its config"));
    }
    Ok(manifest)
}

/// Network and parameters only, for evaluation and inference.
pub fn load_model(dir: &Path) -> Result<(GmtNet, ParamStore<f64>, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let (net, mut params) = GmtNet::new(manifest.config.model.clone())?;
    params.load(&dir.join("params"))?;
    Ok((net, params, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub steps: u64,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
}

fn csv_rows_before(path: &Path, step: u64) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s < step))
        .map(str::to_owned)
        .collect())
}

/// Trains from a dataset directory into `out`, resuming from its checkpoint
/// when `resume` is set and one exists. On a numeric failure the last good
/// parameters are checkpointed before the error is returned.
pub fn train(config: &TrainConfig, dataset: &Dataset, out: &Path, resume: bool) -> Result<TrainSummary> {
    let ds_cfg = &dataset.manifest.config;
    if ds_cfg.scale != config.model.scale {
        bail!(
            Contract,
            "model scale x{} does not match dataset scale x{}",
            config.model.scale,
            ds_cfg.scale
        );
    }
    if dataset.is_empty() {
        bail!(Contract, "dataset {} is empty", dataset.root.display());
    }
    let mut trainer = if resume && out.join(CHECKPOINT_MANIFEST).exists() {
        let (t, m) = Trainer::load(out)?;
        if m.config != *config {
            bail!(Contract, "checkpoint in {} was trained with a different config", out.display());
        }
        log::info!("resuming from step {}", m.step);
        t
    } else {
        Trainer::new(config.clone())?
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv_path = out.join(LOSS_CSV);
    let mut rows = csv_rows_before(&csv_path, trainer.step_count())?;
    if !resume {
        rows.clear();
    }
    let mut csv = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut header = String::from("step,loss,lr\n");
    for r in rows {
        header.push_str(&r);
        header.push('\n');
    }
    csv.write_all(header.as_bytes()).map_err(|e| Error::io(&csv_path, e))?;

    let dataset_hash = Some(dataset.manifest.config_hash.as_str());
    let mut first_loss = None;
    let mut last_loss = None;
    while trainer.step_count() < config.steps {
        let idx = sample_order(config.seed, trainer.step_count(), dataset.len());
        let sample = dataset.get(idx)?;
        let log = match trainer.step(&sample) {
            Ok(log) => log,
            Err(e) if is_numeric(&e) => {
                trainer.save(out, dataset_hash)?;
                log::error!("aborting at step {}: {e}; last good checkpoint saved", trainer.step_count());
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        writeln!(csv, "{},{},{}", log.step, log.loss, log.lr).map_err(|e| Error::io(&csv_path, e))?;
        first_loss.get_or_insert(log.loss);
        last_loss = Some(log.loss);
        if log.step % 50 == 0 {
            log::info!("step {} loss {:.5} lr {:.2e} |g| {:.3}", log.step, log.loss, log.lr, log.grad_norm);
        }
        let done = trainer.step_count();
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.steps {
            trainer.save(out, dataset_hash)?;
        }
    }
    trainer.save(out, dataset_hash)?;
    Ok(TrainSummary {
        checkpoint: out.to_path_buf(),
        steps: trainer.step_count(),
        first_loss,
        last_loss,
    })
}
