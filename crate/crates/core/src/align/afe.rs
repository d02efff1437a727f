use burstkit_tensor::{ConvSpec, Scalar, Var};

use crate::align::attention::TransposedAttention;
use crate::error::{bail, Result};
use crate::nn::{Conv, GatedFeedForward, LayerNorm, WeightInit};
use crate::params::{Bound, ParamBuilder};

/// Transposed attention followed by a gated feed-forward with a residual.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub attention: TransposedAttention,
    pub norm: LayerNorm,
    pub ffn: GatedFeedForward,
}

impl TransformerBlock {
    pub fn new(pb: &mut ParamBuilder, name: &str, c: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            attention: TransposedAttention::new(pb, &format!("{name}.ta"), c, heads)?,
            norm: LayerNorm::new(pb, &format!("{name}.norm"), c)?,
            ffn: GatedFeedForward::new(pb, &format!("{name}.ffn"), c, 2 * c)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let t = self.attention.forward(p, x)?;
        Ok(t.add(self.ffn.forward(p, self.norm.forward(p, t)?)?)?)
    }
}

/// Aligned feature enrichment: back-projects the residue to the reference,
/// `e_b = a_b + W3(a_b - ref)`, then one transformer block per frame.
#[derive(Debug, Clone)]
pub struct Afe {
    pub back_projection: Conv,
    pub block: TransformerBlock,
}

impl Afe {
    pub fn new(pb: &mut ParamBuilder, name: &str, c: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            back_projection: Conv::new(
                pb,
                &format!("{name}.w3"),
                c,
                c,
                ConvSpec::same(3),
                WeightInit::Zeros,
            )?,
            block: TransformerBlock::new(pb, &format!("{name}.block"), c, heads)?,
        })
    }

    /// Edge-boosted features before the transformer block.
    pub fn boost<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        aligned: Var<'t, T>,
        reference: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let [_, c, h, w] = aligned.shape();
        let [rn, rc, rh, rw] = reference.shape();
        if rn != 1 || (rc, rh, rw) != (c, h, w) {
            bail!(
                Contract,
                "reference {:?} does not match aligned {:?}",
                reference.shape(),
                aligned.shape()
            );
        }
        let residue = aligned.sub(reference)?.label("afe.residue");
        Ok(aligned.add(self.back_projection.forward(p, residue)?)?)
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        aligned: Var<'t, T>,
        reference: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        self.block.forward(p, self.boost(p, aligned, reference)?)
    }
}
