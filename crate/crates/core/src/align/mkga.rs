use burstkit_tensor::{ConvSpec, Scalar, Var};

use crate::align::attention::TransposedAttention;
use crate::error::{bail, Result};
use crate::nn::{Conv, WeightInit};
use crate::params::{Bound, ParamBuilder};

pub const MSGC_KERNELS: [usize; 3] = [1, 3, 5];

/// One gated depth-wise branch: `W1(GELU(dw_a(Y)) * dw_b(Y))`.
#[derive(Debug, Clone)]
pub struct GatedBranch {
    pub gate: Conv,
    pub value: Conv,
    pub project: Conv,
}

/// Multi-scale gated convolution: the sum of gated branches with 1x1, 3x3 and
/// 5x5 depth-wise kernels. Every conv is bias-free.
#[derive(Debug, Clone)]
pub struct Msgc {
    pub branches: Vec<GatedBranch>,
    channels: usize,
}

impl Msgc {
    pub fn new(pb: &mut ParamBuilder, name: &str, c: usize) -> Result<Self> {
        let mut branches = Vec::new();
        for k in MSGC_KERNELS {
            branches.push(GatedBranch {
                gate: Conv::depthwise(pb, &format!("{name}.k{k}.gate"), c, k, false)?,
                value: Conv::depthwise(pb, &format!("{name}.k{k}.value"), c, k, false)?,
                project: Conv::new(
                    pb,
                    &format!("{name}.k{k}.project"),
                    c,
                    c,
                    ConvSpec::pointwise().without_bias(),
                    WeightInit::Default,
                )?,
            });
        }
        Ok(Self { branches, channels: c })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        if y.shape()[1] != self.channels {
            bail!(Contract, "msgc expects {} channels, got {:?}", self.channels, y.shape());
        }
        let mut acc: Option<Var<'t, T>> = None;
        for br in &self.branches {
            let gated = br.gate.forward(p, y)?.gelu()?.mul(br.value.forward(p, y)?)?;
            let out = br.project.forward(p, gated)?;
            acc = Some(match acc {
                Some(a) => a.add(out)?,
                None => out,
            });
        }
        Ok(acc.expect("three branches"))
    }
}

/// Multi-kernel gated attention: MSGC followed by transposed attention.
#[derive(Debug, Clone)]
pub struct Mkga {
    pub msgc: Msgc,
    pub attention: TransposedAttention,
}

impl Mkga {
    pub fn new(pb: &mut ParamBuilder, name: &str, c: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            msgc: Msgc::new(pb, &format!("{name}.msgc"), c)?,
            attention: TransposedAttention::new(pb, &format!("{name}.ta"), c, heads)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        self.attention.forward(p, self.msgc.forward(p, y)?)
    }
}
