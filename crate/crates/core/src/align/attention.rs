//! Channel-wise (transposed) attention: the attention map is `c x c` per head,
//! so memory is independent of the spatial size.

use burstkit_tensor::{ConvSpec, Scalar, Var};

use crate::error::{bail, Result};
use crate::nn::{Conv, LayerNorm, WeightInit};
use crate::params::{Bound, Init, ParamBuilder, ParamId};

/// `softmax_rows(t * q_hat k_hat^T) v` per head, with `q_hat`, `k_hat` L2
/// normalized along the spatial axis.
///
/// `q` may have batch 1 while `k`/`v` carry the full batch; it is broadcast.
pub fn attend<'t, T: Scalar>(
    q: Var<'t, T>,
    k: Var<'t, T>,
    v: Var<'t, T>,
    temperature: Var<'t, T>,
    heads: usize,
    label: Option<&str>,
) -> Result<Var<'t, T>> {
    let [n, c, h, w] = k.shape();
    if c % heads != 0 {
        bail!(Config, "{heads} heads do not divide {c} channels");
    }
    let q = if q.shape()[0] != n {
        q.gather_batch(&vec![0; n])?
    } else {
        q
    };
    let per = c / heads;
    let split = |x: Var<'t, T>| x.reshape([n, heads, per, h * w]);
    let qh = split(q)?.l2_normalize_last(1e-12)?;
    let kh = split(k)?.l2_normalize_last(1e-12)?;
    let logits = qh.matmul(kh, false, true)?.mul(temperature)?;
    let mut attn = logits.softmax_last()?;
    if let Some(l) = label {
        attn = attn.label(l);
    }
    Ok(attn.matmul(split(v)?, false, false)?.reshape([n, c, h, w])?)
}

/// `LN(x) + W1(TA(Q, K, V))` with Q, K, V from a 1x1 then depth-wise 3x3
/// projection of `LN(x)`.
#[derive(Debug, Clone)]
pub struct TransposedAttention {
    name: String,
    norm: LayerNorm,
    qkv: Conv,
    qkv_dw: Conv,
    project: Conv,
    temperature: ParamId,
    heads: usize,
    channels: usize,
}

impl TransposedAttention {
    pub fn new(pb: &mut ParamBuilder, name: &str, c: usize, heads: usize) -> Result<Self> {
        if heads == 0 || c % heads != 0 {
            bail!(Config, "{heads} heads do not divide {c} channels");
        }
        let pw = ConvSpec::pointwise().without_bias();
        Ok(Self {
            name: name.to_string(),
            norm: LayerNorm::new(pb, &format!("{name}.norm"), c)?,
            qkv: Conv::new(pb, &format!("{name}.qkv"), c, 3 * c, pw, WeightInit::Default)?,
            qkv_dw: Conv::depthwise(pb, &format!("{name}.qkv_dw"), 3 * c, 3, false)?,
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

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Tape label carried by the attention maps of this block.
    pub fn attention_label(&self) -> String {
        format!("{}.attn", self.name)
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        if x.shape()[1] != self.channels {
            bail!(
                Contract,
                "{} expects {} channels, got {:?}",
                self.name,
                self.channels,
                x.shape()
            );
        }
        let c = self.channels;
        let y = self.norm.forward(p, x)?;
        let qkv = self.qkv_dw.forward(p, self.qkv.forward(p, y)?)?;
        let q = qkv.slice_channels(0, c)?;
        let k = qkv.slice_channels(c, c)?;
        let v = qkv.slice_channels(2 * c, c)?;
        let label = self.attention_label();
        let attended = attend(q, k, v, p.get(self.temperature), self.heads, Some(&label))?;
        Ok(y.add(self.project.forward(p, attended)?)?)
    }
}
