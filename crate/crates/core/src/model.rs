//! The full burst network and its configuration.

use burstkit_tensor::{Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::align::{Mbfa, MbfaOutput};
use crate::error::{bail, Result};
use crate::fusion::{Fusion, Tafm};
use crate::params::{Bound, ParamBuilder, ParamStore};
use crate::upsampler::{ladder_for_scale, PixelShuffleHead, Rtfu, Upsampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionKind {
    Tafm,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpsamplerKind {
    Rtfu,
    PixelShuffle,
}

/// Module toggles; every ablation is expressible here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub mkga: bool,
    pub alignment: bool,
    pub afe: bool,
    pub fusion: FusionKind,
    pub upsampler: UpsamplerKind,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::full()
    }
}

impl Ablation {
    pub fn full() -> Self {
        Self {
            mkga: true,
            alignment: true,
            afe: true,
            fusion: FusionKind::Tafm,
            upsampler: UpsamplerKind::Rtfu,
        }
    }

    pub fn no_mkga() -> Self {
        Self {
            mkga: false,
            ..Self::full()
        }
    }

    pub fn no_afe() -> Self {
        Self {
            afe: false,
            ..Self::full()
        }
    }

    pub fn mean_fusion() -> Self {
        Self {
            fusion: FusionKind::Mean,
            ..Self::full()
        }
    }

    /// Mean fusion with neither deformable alignment nor enrichment.
    pub fn no_alignment() -> Self {
        Self {
            alignment: false,
            afe: false,
            ..Self::mean_fusion()
        }
    }

    pub fn pixel_shuffle_head() -> Self {
        Self {
            upsampler: UpsamplerKind::PixelShuffle,
            ..Self::full()
        }
    }

    /// Looks up a named preset: `full`, `no-mkga`, `no-afe`, `mean-fusion`,
    /// `no-alignment`, `pixel-shuffle`.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "full" => Self::full(),
            "no-mkga" => Self::no_mkga(),
            "no-afe" => Self::no_afe(),
            "mean-fusion" => Self::mean_fusion(),
            "no-alignment" => Self::no_alignment(),
            "pixel-shuffle" => Self::pixel_shuffle_head(),
            other => bail!(
                Config,
                "unknown ablation {other:?}; expected full, no-mkga, no-afe, mean-fusion, no-alignment or pixel-shuffle"
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Feature width `C`.
    pub channels: usize,
    /// Pyramid levels `L`.
    pub levels: usize,
    pub heads: usize,
    pub offset_groups: usize,
    /// Task scale relative to the RAW mosaic.
    pub scale: usize,
    pub ablation: Ablation,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            levels: 3,
            heads: 4,
            offset_groups: 4,
            scale: 4,
            ablation: Ablation::full(),
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.levels == 0 {
            bail!(Config, "channels and levels must be positive");
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            bail!(Config, "{} heads do not divide {} channels", self.heads, self.channels);
        }
        if self.offset_groups == 0 || self.channels % self.offset_groups != 0 {
            bail!(
                Config,
                "{} offset groups do not divide {} channels",
                self.offset_groups,
                self.channels
            );
        }
        ladder_for_scale(self.scale)?;
        Ok(())
    }

    /// Output pixels per packed input pixel along each axis.
    pub fn feature_upscale(&self) -> usize {
        2 * self.scale
    }
}

/// Alignment, fusion and upsampling with shared per-frame weights.
#[derive(Debug, Clone)]
pub struct GmtNet {
    pub config: ModelConfig,
    pub mbfa: Mbfa,
    pub fusion: Fusion,
    pub upsampler: Upsampler,
}

pub struct Forward<'t, T> {
    pub mbfa: MbfaOutput<'t, T>,
    pub merged: Var<'t, T>,
    /// Linear RGB, `(1, 3, 2 s h, 2 s w)`.
    pub image: Var<'t, T>,
}

impl GmtNet {
    /// Builds the network and its freshly initialized parameters.
    pub fn new(config: ModelConfig) -> Result<(Self, ParamStore<f64>)> {
        config.validate()?;
        let mut pb = ParamBuilder::new(config.init_seed);
        let c = config.channels;
        let mbfa = Mbfa::new(&mut pb, &config)?;
        let fusion = match config.ablation.fusion {
            FusionKind::Tafm => Fusion::Tafm(Tafm::new(&mut pb, "tafm", c, config.heads)?),
            FusionKind::Mean => Fusion::Mean,
        };
        let upsampler = match config.ablation.upsampler {
            UpsamplerKind::Rtfu => Upsampler::Rtfu(Rtfu::new(&mut pb, "rtfu", c, &ladder_for_scale(config.scale)?)?),
            UpsamplerKind::PixelShuffle => {
                Upsampler::PixelShuffle(PixelShuffleHead::new(&mut pb, "ps_head", c, config.feature_upscale())?)
            }
        };
        Ok((
            Self {
                config,
                mbfa,
                fusion,
                upsampler,
            },
            pb.finish(),
        ))
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, burst: Var<'t, T>) -> Result<Forward<'t, T>> {
        let mbfa = self.mbfa.forward(p, burst)?;
        let merged = self.fusion.forward(p, mbfa.output)?;
        let image = self.upsampler.forward(p, merged)?.label("image");
        Ok(Forward { mbfa, merged, image })
    }

    /// Inference without gradients.
    pub fn predict<T: Scalar>(&self, params: &ParamStore<T>, burst: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        Ok(self.forward(&p, tape.constant(burst.clone()))?.image.value())
    }
}
