//! Resolution-transfer feature upsampling and the pixel-shuffle baseline head.

use burstkit_tensor::{concat_channels, ConvSpec, ResizeMode, Scalar, Var};

use crate::error::{bail, Result};
use crate::nn::{Conv, WeightInit};
use crate::params::{Bound, ParamBuilder};

pub fn label_ur(i: usize) -> String {
    format!("rtfu.ur{i}")
}

pub fn label_us(o: usize) -> String {
    format!("rtfu.us{o}")
}

/// Ladder `{1, 2, ..., 2 * scale}`: packed RGGB halves the mosaic resolution,
/// so features need `2 * scale` to reach the task scale.
pub fn ladder_for_scale(scale: usize) -> Result<Vec<usize>> {
    if !matches!(scale, 1 | 2 | 4 | 8) {
        bail!(Config, "unsupported scale factor {scale}; expected 1, 2, 4 or 8");
    }
    let mut s = vec![1];
    while *s.last().expect("non-empty") < 2 * scale {
        s.push(s.last().expect("non-empty") * 2);
    }
    Ok(s)
}

fn check_ladder(scales: &[usize]) -> Result<()> {
    let ok = !scales.is_empty() && scales.iter().enumerate().all(|(k, &s)| s == 1 << k);
    if !ok {
        bail!(Config, "scale set {scales:?} must be 1, 2, 4, ... consecutive powers of two");
    }
    Ok(())
}

/// Three-stage upsampler: pixel-shuffle ladder, all-to-all resolution
/// transfer, progressive bicubic reconstruction with branch summation.
#[derive(Debug, Clone)]
pub struct Rtfu {
    scales: Vec<usize>,
    /// `1x1` conv to `4C` before each x2 shuffle.
    pub stage1: Vec<Conv>,
    /// Per source scale, a chain of stride-2 `3x3` convs; step `k` yields the
    /// source at `1 / 2^(k+1)` of its resolution.
    pub down: Vec<Vec<Conv>>,
    /// Per output scale, a `1x1` conv restoring `C` channels after the concat.
    pub fuse: Vec<Conv>,
    /// `3x3` conv to linear RGB, bias-free.
    pub head: Conv,
    channels: usize,
}

impl Rtfu {
    pub fn new(pb: &mut ParamBuilder, name: &str, c: usize, scales: &[usize]) -> Result<Self> {
        check_ladder(scales)?;
        let n = scales.len();
        let mut stage1 = Vec::new();
        for k in 1..n {
            stage1.push(Conv::new(
                pb,
                &format!("{name}.stage1.{k}"),
                c,
                4 * c,
                ConvSpec::pointwise(),
                WeightInit::Default,
            )?);
        }
        let mut down = Vec::new();
        for (j, _) in scales.iter().enumerate() {
            let mut chain = Vec::new();
            for k in 0..j {
                chain.push(Conv::new(
                    pb,
                    &format!("{name}.down{}.{k}", scales[j]),
                    c,
                    c,
                    ConvSpec::same(3).with_stride(2),
                    WeightInit::Default,
                )?);
            }
            down.push(chain);
        }
        let mut fuse = Vec::new();
        for &o in scales {
            fuse.push(Conv::new(
                pb,
                &format!("{name}.fuse{o}"),
                n * c,
                c,
                ConvSpec::pointwise().without_bias(),
                WeightInit::Default,
            )?);
        }
        let head = Conv::new(
            pb,
            &format!("{name}.head"),
            c,
            3,
            ConvSpec::same(3).without_bias(),
            WeightInit::Default,
        )?;
        Ok(Self {
            scales: scales.to_vec(),
            stage1,
            down,
            fuse,
            head,
            channels: c,
        })
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    pub fn top(&self) -> usize {
        *self.scales.last().expect("non-empty ladder")
    }

    /// `U_r^1 = F_m`, `U_r^{2i} = shuffle(W1(U_r^i), 2)`.
    pub fn stage1<'t, T: Scalar>(&self, p: &Bound<'t, T>, merged: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        if merged.shape()[0] != 1 || merged.shape()[1] != self.channels {
            bail!(Contract, "merged features must be (1, {}, H, W), got {:?}", self.channels, merged.shape());
        }
        let mut ladder = vec![merged.label(label_ur(1))];
        for (conv, &s) in self.stage1.iter().zip(&self.scales[1..]) {
            let prev = *ladder.last().expect("non-empty");
            ladder.push(conv.forward(p, prev)?.pixel_shuffle(2)?.label(label_ur(s)));
        }
        Ok(ladder)
    }

    /// `f_{i -> o}(U_r^i)` for every output scale `o`, ascending.
    pub fn transfers<'t, T: Scalar>(&self, p: &Bound<'t, T>, j: usize, u: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let i = self.scales[j];
        let [_, _, h, w] = u.shape();
        let mut downs = Vec::with_capacity(j);
        let mut cur = u;
        for conv in &self.down[j] {
            cur = conv.forward(p, cur)?;
            downs.push(cur);
        }
        let mut out = Vec::with_capacity(self.scales.len());
        for (k, &o) in self.scales.iter().enumerate() {
            out.push(if o == i {
                u
            } else if o > i {
                u.resize(h * o / i, w * o / i, ResizeMode::Bilinear)?
            } else {
                downs[j - k - 1]
            });
        }
        Ok(out)
    }

    /// `U_s^o = W1(concat_i f_{i -> o}(U_r^i))`.
    pub fn rtm<'t, T: Scalar>(&self, p: &Bound<'t, T>, ladder: &[Var<'t, T>]) -> Result<Vec<Var<'t, T>>> {
        if ladder.len() != self.scales.len() {
            bail!(
                Contract,
                "ladder has {} entries, expected {} ({:?})",
                ladder.len(),
                self.scales.len(),
                self.scales
            );
        }
        let mut per_source = Vec::with_capacity(ladder.len());
        for (j, &u) in ladder.iter().enumerate() {
            per_source.push(self.transfers(p, j, u)?);
        }
        let mut out = Vec::with_capacity(self.scales.len());
        for (k, &o) in self.scales.iter().enumerate() {
            let parts: Vec<Var<'t, T>> = per_source.iter().map(|t| t[k]).collect();
            out.push(self.fuse[k].forward(p, concat_channels(&parts)?)?.label(label_us(o)));
        }
        Ok(out)
    }

    /// Progressive x2 bicubic of every branch to the top scale, summed in
    /// ascending order; the RGB head is not applied.
    pub fn stage3_features<'t, T: Scalar>(&self, ladder: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        if ladder.len() != self.scales.len() {
            bail!(Contract, "ladder has {} entries, expected {}", ladder.len(), self.scales.len());
        }
        let mut acc: Option<Var<'t, T>> = None;
        for (&u, &o) in ladder.iter().zip(&self.scales) {
            let mut x = u;
            let mut s = o;
            while s < self.top() {
                x = x.resize_by(2, 1, ResizeMode::Bicubic)?;
                s *= 2;
            }
            acc = Some(match acc {
                Some(a) => a.add(x)?,
                None => x,
            });
        }
        Ok(acc.expect("non-empty ladder"))
    }

    pub fn stage3<'t, T: Scalar>(&self, p: &Bound<'t, T>, ladder: &[Var<'t, T>], target: usize) -> Result<Var<'t, T>> {
        if target != self.top() {
            bail!(Config, "reconstruction target x{target} must equal the ladder top x{}", self.top());
        }
        self.head.forward(p, self.stage3_features(ladder)?)
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, merged: Var<'t, T>) -> Result<Var<'t, T>> {
        let ur = self.stage1(p, merged)?;
        let us = self.rtm(p, &ur)?;
        self.stage3(p, &us, self.top())
    }
}

/// Single `3x3` conv to `3 r^2` channels then one pixel shuffle by `r`.
#[derive(Debug, Clone)]
pub struct PixelShuffleHead {
    pub conv: Conv,
    pub factor: usize,
}

impl PixelShuffleHead {
    pub fn new(pb: &mut ParamBuilder, name: &str, c: usize, factor: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(
                pb,
                &format!("{name}.conv"),
                c,
                3 * factor * factor,
                ConvSpec::same(3).without_bias(),
                WeightInit::Default,
            )?,
            factor,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, merged: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.conv.forward(p, merged)?.pixel_shuffle(self.factor)?)
    }
}

#[derive(Debug, Clone)]
pub enum Upsampler {
    Rtfu(Rtfu),
    PixelShuffle(PixelShuffleHead),
}

impl Upsampler {
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, merged: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Upsampler::Rtfu(r) => r.forward(p, merged),
            Upsampler::PixelShuffle(h) => h.forward(p, merged),
        }
    }
}
