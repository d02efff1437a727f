//! Pyramid deformable alignment with bottom-up offset sharing.

use burstkit_tensor::{concat_channels, ConvSpec, ResizeMode, Scalar, Var};

use crate::error::{bail, Result};
use crate::nn::{Conv, WeightInit};
use crate::params::{Bound, ParamBuilder};

pub const DEFORM_KERNEL: usize = 3;
const TAPS: usize = DEFORM_KERNEL * DEFORM_KERNEL;

#[derive(Debug, Clone)]
struct Level {
    /// Linear and zero-initialized: alignment starts at identity.
    offset: Conv,
    deform: Conv,
    /// Merges the upsampled coarser alignment; absent at the coarsest level.
    fuse: Option<Conv>,
}

#[derive(Debug, Clone)]
pub struct Agda {
    levels: Vec<Level>,
    groups: usize,
    channels: usize,
}

impl Agda {
    pub fn new(pb: &mut ParamBuilder, name: &str, c: usize, levels: usize, groups: usize) -> Result<Self> {
        if levels == 0 {
            bail!(Config, "alignment needs at least one pyramid level");
        }
        if groups == 0 || c % groups != 0 {
            bail!(Config, "{groups} offset groups do not divide {c} channels");
        }
        let off_ch = 2 * TAPS * groups;
        let pred_ch = off_ch + TAPS * groups;
        let mut out = Vec::with_capacity(levels);
        for l in 0..levels {
            let coarsest = l + 1 == levels;
            let cin = if coarsest { 2 * c } else { 2 * c + off_ch };
            out.push(Level {
                offset: Conv::new(
                    pb,
                    &format!("{name}.l{l}.offset"),
                    cin,
                    pred_ch,
                    ConvSpec::same(DEFORM_KERNEL),
                    WeightInit::Zeros,
                )?,
                deform: Conv::new(
                    pb,
                    &format!("{name}.l{l}.deform"),
                    c,
                    c,
                    ConvSpec::same(DEFORM_KERNEL),
                    WeightInit::Default,
                )?,
                fuse: if coarsest {
                    None
                } else {
                    Some(Conv::new(
                        pb,
                        &format!("{name}.l{l}.fuse"),
                        2 * c,
                        c,
                        ConvSpec::pointwise(),
                        WeightInit::Default,
                    )?)
                },
            });
        }
        Ok(Self {
            levels: out,
            groups,
            channels: c,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    /// Tape labels: `agda.l{l}.offsets`, `agda.l{l}.mask`, and for finer
    /// levels `agda.l{l}.shared` (the upsampled, rescaled coarser offsets).
    pub fn label(level: usize, what: &str) -> String {
        format!("agda.l{level}.{what}")
    }

    /// Aligns every frame of `current` to `reference`, level by level from
    /// coarse to fine. Both slices hold one `(B, C, h_l, w_l)` tensor per level.
    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        current: &[Var<'t, T>],
        reference: &[Var<'t, T>],
    ) -> Result<Var<'t, T>> {
        let n = self.levels.len();
        if current.len() != n || reference.len() != n {
            bail!(
                Contract,
                "alignment built for {n} levels, got {} current and {} reference",
                current.len(),
                reference.len()
            );
        }
        let off_ch = 2 * TAPS * self.groups;
        let mut coarser: Option<(Var<'t, T>, Var<'t, T>)> = None;
        for l in (0..n).rev() {
            let level = &self.levels[l];
            let (cur, refr) = (current[l], reference[l]);
            if cur.shape() != refr.shape() || cur.shape()[1] != self.channels {
                bail!(
                    Contract,
                    "level {l}: current {:?} vs reference {:?}",
                    cur.shape(),
                    refr.shape()
                );
            }
            let [_, _, h, w] = cur.shape();
            let pred_in = match coarser {
                None => concat_channels(&[cur, refr])?,
                Some((off, _)) => {
                    let shared = off
                        .resize(h, w, ResizeMode::Bilinear)?
                        .scale(2.0)?
                        .label(Self::label(l, "shared"));
                    concat_channels(&[cur, refr, shared])?
                }
            };
            let pred = level.offset.forward(p, pred_in)?;
            let offsets = pred.slice_channels(0, off_ch)?.label(Self::label(l, "offsets"));
            let mask = pred
                .slice_channels(off_ch, TAPS * self.groups)?
                .sigmoid()?
                .label(Self::label(l, "mask"));
            let mut aligned = cur.deform_conv2d(
                offsets,
                mask,
                p.get(level.deform.weight),
                level.deform.bias.map(|b| p.get(b)),
                level.deform.spec,
            )?;
            if let (Some(fuse), Some((_, prev))) = (&level.fuse, coarser) {
                let up = prev.resize(h, w, ResizeMode::Bilinear)?;
                aligned = fuse.forward(p, concat_channels(&[aligned, up])?)?;
            }
            coarser = Some((offsets, aligned));
        }
        Ok(coarser.expect("at least one level").1)
    }
}
