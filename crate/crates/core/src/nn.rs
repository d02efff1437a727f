//! Parameterized building blocks shared by every stage.

use burstkit_tensor::{ConvSpec, Scalar, Var};

use crate::error::Result;
use crate::params::{Bound, Init, ParamBuilder, ParamId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    /// Uniform in `±1/sqrt(fan_in)`.
    Default,
    Zeros,
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
    pub cin: usize,
    pub cout: usize,
}

impl Conv {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        spec: ConvSpec,
        init: WeightInit,
    ) -> Result<Self> {
        let k = spec.kernel;
        let fan_in = cin / spec.groups * k * k;
        let w_init = match init {
            WeightInit::Default => Init::FanIn(fan_in),
            WeightInit::Zeros => Init::Zeros,
        };
        let weight = pb.param(format!("{name}.weight"), [cout, cin / spec.groups, k, k], w_init)?;
        let bias = if spec.bias {
            Some(pb.param(format!("{name}.bias"), [1, cout, 1, 1], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            spec,
            cin,
            cout,
        })
    }

    /// Depth-wise `k x k` convolution over `c` channels.
    pub fn depthwise(pb: &mut ParamBuilder, name: &str, c: usize, k: usize, bias: bool) -> Result<Self> {
        let mut spec = ConvSpec::same(k).with_groups(c);
        if !bias {
            spec = spec.without_bias();
        }
        Self::new(pb, name, c, c, spec, WeightInit::Default)
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.conv2d(p.get(self.weight), self.bias.map(|b| p.get(b)), self.spec)?)
    }
}

/// Channel layer norm with learned affine, `eps = 1e-6`.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LN_EPS: f64 = 1e-6;

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: pb.param(format!("{name}.gamma"), [1, c, 1, 1], Init::Ones)?,
            beta: pb.param(format!("{name}.beta"), [1, c, 1, 1], Init::Zeros)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.layer_norm(p.get(self.gamma), p.get(self.beta), LN_EPS)?)
    }
}

/// Gated feed-forward: 1x1 expand, depth-wise 3x3, GELU gate, 1x1 project.
#[derive(Debug, Clone)]
pub struct GatedFeedForward {
    expand: Conv,
    dw: Conv,
    project: Conv,
    hidden: usize,
}

impl GatedFeedForward {
    pub fn new(pb: &mut ParamBuilder, name: &str, c: usize, hidden: usize) -> Result<Self> {
        let pw = ConvSpec::pointwise().without_bias();
        Ok(Self {
            expand: Conv::new(pb, &format!("{name}.expand"), c, 2 * hidden, pw, WeightInit::Default)?,
            dw: Conv::depthwise(pb, &format!("{name}.dw"), 2 * hidden, 3, false)?,
            project: Conv::new(pb, &format!("{name}.project"), hidden, c, pw, WeightInit::Default)?,
            hidden,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.dw.forward(p, self.expand.forward(p, x)?)?;
        let gate = h.slice_channels(0, self.hidden)?.gelu()?;
        let value = h.slice_channels(self.hidden, self.hidden)?;
        self.project.forward(p, gate.mul(value)?)
    }
}
