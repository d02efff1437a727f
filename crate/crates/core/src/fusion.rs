//! Merging an aligned burst into a single feature map.

use burstkit_tensor::{concat_channels, ConvSpec, Scalar, Var};

use crate::align::attend;
use crate::error::{bail, Result};
use crate::nn::{Conv, LayerNorm, WeightInit};
use crate::params::{Bound, Init, ParamBuilder, ParamId};

pub const LABEL_P1: &str = "tafm.p1";
pub const LABEL_P2: &str = "tafm.p2";
pub const LABEL_P2_WEIGHTS: &str = "tafm.p2.weights";
pub const LABEL_MERGED: &str = "tafm.out";

/// Reference-query cross-frame transposed attention, averaged over frames.
///
/// The reference's own term is part of the average, which keeps the stream
/// invariant to duplicating frames.
#[derive(Debug, Clone)]
pub struct CrossFrameAttention {
    pub norm: LayerNorm,
    pub q: Conv,
    pub q_dw: Conv,
    pub kv: Conv,
    pub kv_dw: Conv,
    pub project: Conv,
    pub temperature: ParamId,
    heads: usize,
    channels: usize,
}

impl CrossFrameAttention {
    pub fn new(pb: &mut ParamBuilder, name: &str, c: usize, heads: usize) -> Result<Self> {
        if heads == 0 || c % heads != 0 {
            bail!(Config, "{heads} heads do not divide {c} channels");
        }
        let pw = ConvSpec::pointwise().without_bias();
        Ok(Self {
            norm: LayerNorm::new(pb, &format!("{name}.norm"), c)?,
            q: Conv::new(pb, &format!("{name}.q"), c, c, pw, WeightInit::Default)?,
            q_dw: Conv::depthwise(pb, &format!("{name}.q_dw"), c, 3, false)?,
            kv: Conv::new(pb, &format!("{name}.kv"), c, 2 * c, pw, WeightInit::Default)?,
            kv_dw: Conv::depthwise(pb, &format!("{name}.kv_dw"), 2 * c, 3, false)?,
            project: Conv::new(pb, &format!("{name}.project"), c, c, pw, WeightInit::Default)?,
            temperature: pb.param(
                format!("{name}.temperature"),
                [1, heads, 1, 1],
                Init::Const(1.0 / ((c / heads) as f64).sqrt()),
            )?,
            heads,
            channels: c,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, aligned: Var<'t, T>) -> Result<Var<'t, T>> {
        let c = self.channels;
        let y = self.norm.forward(p, aligned)?;
        let q = self.q_dw.forward(p, self.q.forward(p, y.slice_batch(0, 1)?)?)?;
        let kv = self.kv_dw.forward(p, self.kv.forward(p, y)?)?;
        let k = kv.slice_channels(0, c)?;
        let v = kv.slice_channels(c, c)?;
        let per_frame = attend(q, k, v, p.get(self.temperature), self.heads, Some("tafm.p1.attn"))?;
        self.project.forward(p, per_frame.mean_batch()?)
    }
}

/// Global-descriptor reweighting: softmax over `g_ref . g_b / sqrt(C)` of the
/// spatially pooled frames, applied to `W1(frame_b)`.
#[derive(Debug, Clone)]
pub struct GlobalCorrelation {
    pub project: Conv,
}

impl GlobalCorrelation {
    pub fn new(pb: &mut ParamBuilder, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            project: Conv::new(pb, &format!("{name}.project"), c, c, ConvSpec::pointwise(), WeightInit::Default)?,
        })
    }

    /// Softmax weights of every frame as seen from the reference, `(B, 1, 1, 1)`.
    pub fn weights<'t, T: Scalar>(&self, aligned: Var<'t, T>) -> Result<Var<'t, T>> {
        let [b, c, _, _] = aligned.shape();
        let g = aligned.mean_hw()?.reshape([1, 1, b, c])?;
        let g_ref = aligned.slice_batch(0, 1)?.mean_hw()?.reshape([1, 1, 1, c])?;
        let logits = g_ref.matmul(g, false, true)?.scale(1.0 / (c as f64).sqrt())?;
        Ok(logits.softmax_last()?.reshape([b, 1, 1, 1])?.label(LABEL_P2_WEIGHTS))
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, aligned: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = aligned.shape()[0];
        let w = self.weights(aligned)?;
        let projected = self.project.forward(p, aligned)?;
        Ok(projected.mul(w)?.mean_batch()?.scale(b as f64)?)
    }
}

/// Two correlation streams merged by a 3x3 projection: `W3([p1, p2])`.
#[derive(Debug, Clone)]
pub struct Tafm {
    pub p1: CrossFrameAttention,
    pub p2: GlobalCorrelation,
    pub merge: Conv,
}

impl Tafm {
    pub fn new(pb: &mut ParamBuilder, name: &str, c: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            p1: CrossFrameAttention::new(pb, &format!("{name}.p1"), c, heads)?,
            p2: GlobalCorrelation::new(pb, &format!("{name}.p2"), c)?,
            merge: Conv::new(pb, &format!("{name}.merge"), 2 * c, c, ConvSpec::same(3), WeightInit::Default)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, aligned: Var<'t, T>) -> Result<Var<'t, T>> {
        check_burst(aligned)?;
        let p1 = self.p1.forward(p, aligned)?.label(LABEL_P1);
        let p2 = self.p2.forward(p, aligned)?.label(LABEL_P2);
        Ok(self.merge.forward(p, concat_channels(&[p1, p2])?)?.label(LABEL_MERGED))
    }
}

fn check_burst<T: Scalar>(aligned: Var<'_, T>) -> Result<()> {
    if aligned.shape()[0] < 2 {
        bail!(Contract, "fusion needs at least 2 frames, got {:?}", aligned.shape());
    }
    Ok(())
}

/// Plain frame averaging, the fusion ablation baseline.
pub fn mean_fusion<'t, T: Scalar>(aligned: Var<'t, T>) -> Result<Var<'t, T>> {
    check_burst(aligned)?;
    Ok(aligned.mean_batch()?.label(LABEL_MERGED))
}

#[derive(Debug, Clone)]
pub enum Fusion {
    Tafm(Tafm),
    Mean,
}

impl Fusion {
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, aligned: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Fusion::Tafm(t) => t.forward(p, aligned),
            Fusion::Mean => mean_fusion(aligned),
        }
    }
}
