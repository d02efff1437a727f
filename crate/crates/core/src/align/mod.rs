//! Multi-scale burst feature alignment.

pub mod afe;
pub mod agda;
pub mod attention;
pub mod mkga;

use burstkit_tensor::{ConvSpec, Scalar, Var};

pub use afe::{Afe, TransformerBlock};
pub use agda::Agda;
pub use attention::{attend, TransposedAttention};
pub use mkga::{Mkga, Msgc};

use crate::error::{bail, Result};
use crate::model::ModelConfig;
use crate::nn::{Conv, WeightInit};
use crate::params::{Bound, ParamBuilder};

pub const LABEL_IN: &str = "mbfa.in";
pub const LABEL_OUT: &str = "mbfa.out";

/// Shallow RAW lift, strided pyramid, per-level MKGA, deformable alignment to
/// frame 0, and enrichment. Weights are shared across frames.
#[derive(Debug, Clone)]
pub struct Mbfa {
    pub shallow: Conv,
    pub down: Vec<Conv>,
    pub mkga: Option<Vec<Mkga>>,
    pub agda: Option<Agda>,
    pub afe: Option<Afe>,
    levels: usize,
}

#[derive(Clone, Copy)]
pub struct MbfaOutput<'t, T> {
    /// Shallow features before any alignment, `(B, C, H, W)`.
    pub input: Var<'t, T>,
    /// Aligned, enriched features, `(B, C, H, W)`.
    pub output: Var<'t, T>,
}

impl Mbfa {
    pub fn new(pb: &mut ParamBuilder, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.channels;
        let ab = &cfg.ablation;
        let shallow = Conv::new(pb, "mbfa.shallow", 4, c, ConvSpec::same(3), WeightInit::Default)?;
        let mut down = Vec::new();
        for l in 1..cfg.levels {
            down.push(Conv::new(
                pb,
                &format!("mbfa.down{l}"),
                c,
                c,
                ConvSpec::same(3).with_stride(2),
                WeightInit::Default,
            )?);
        }
        let mkga = if ab.mkga {
            Some(
                (0..cfg.levels)
                    .map(|l| Mkga::new(pb, &format!("mbfa.mkga{l}"), c, cfg.heads))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let agda = if ab.alignment {
            Some(Agda::new(pb, "mbfa.agda", c, cfg.levels, cfg.offset_groups)?)
        } else {
            None
        };
        let afe = if ab.afe {
            Some(Afe::new(pb, "mbfa.afe", c, cfg.heads)?)
        } else {
            None
        };
        Ok(Self {
            shallow,
            down,
            mkga,
            agda,
            afe,
            levels: cfg.levels,
        })
    }

    /// Per-level MKGA-processed pyramid for a `(B, C, H, W)` feature stack.
    pub fn pyramid<'t, T: Scalar>(&self, p: &Bound<'t, T>, feats: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let mut levels = vec![feats];
        for d in &self.down {
            let prev = *levels.last().expect("non-empty");
            levels.push(d.forward(p, prev)?);
        }
        if let Some(mkga) = &self.mkga {
            levels = levels
                .into_iter()
                .zip(mkga)
                .map(|(f, m)| m.forward(p, f))
                .collect::<Result<_>>()?;
        }
        Ok(levels)
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, burst: Var<'t, T>) -> Result<MbfaOutput<'t, T>> {
        let [b, ch, h, w] = burst.shape();
        if b < 2 {
            bail!(Contract, "burst processing needs at least 2 frames, got {b}");
        }
        if ch != 4 {
            bail!(Contract, "expected packed RGGB frames (4 channels), got {ch}");
        }
        let stride = 1 << (self.levels - 1);
        if h % stride != 0 || w % stride != 0 {
            bail!(Contract, "{h}x{w} frames are not divisible by {stride} for {} levels", self.levels);
        }
        let input = self.shallow.forward(p, burst)?.label(LABEL_IN);
        let levels = self.pyramid(p, input)?;
        let reference_idx = vec![0; b];
        let aligned = match &self.agda {
            Some(agda) => {
                let refs = levels
                    .iter()
                    .map(|l| l.gather_batch(&reference_idx))
                    .collect::<Result<Vec<_>, _>>()?;
                agda.forward(p, &levels, &refs)?
            }
            None => levels[0],
        };
        let output = match &self.afe {
            Some(afe) => afe.forward(p, aligned, levels[0].slice_batch(0, 1)?)?,
            None => aligned,
        };
        Ok(MbfaOutput {
            input,
            output: output.label(LABEL_OUT),
        })
    }
}
