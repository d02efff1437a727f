//! Central finite-difference checking of tape gradients.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Finite-difference step.
    pub step: f64,
    /// Coordinates probed per input; larger inputs are subsampled.
    pub max_coords: usize,
    /// Seed for the coordinate subsample.
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` per input,
    /// over the probed coordinates.
    pub rel_err: Vec<f64>,
    pub probed: Vec<usize>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.iter().copied().fold(0.0, f64::max)
    }
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pick_coords(len: usize, max: usize, seed: u64) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut state = seed;
    let mut picked: Vec<usize> = Vec::with_capacity(max);
    while picked.len() < max {
        let i = (splitmix(&mut state) % len as u64) as usize;
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    picked.sort_unstable();
    picked
}

/// Compares tape gradients of the scalar `f(inputs)` with central differences.
pub fn check_gradients<F>(f: F, inputs: &[Tensor<f64>], cfg: GradCheck) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.get_or_zeros(*v)).collect();

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<f64>> = values.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars)?.value().item()
    };

    let mut rel_err = Vec::with_capacity(inputs.len());
    let mut probed = Vec::with_capacity(inputs.len());
    for (idx, input) in inputs.iter().enumerate() {
        let coords = pick_coords(input.numel(), cfg.max_coords, cfg.seed ^ (idx as u64 + 1));
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for &c in &coords {
            let mut values = inputs.to_vec();
            let base = input.data()[c];
            values[idx].data_mut()[c] = base + cfg.step;
            let plus = eval(&values)?;
            values[idx].data_mut()[c] = base - cfg.step;
            let minus = eval(&values)?;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[idx].data()[c];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        let scale = na.sqrt().max(nn.sqrt());
        rel_err.push(if scale < 1e-12 { diff.sqrt() } else { diff.sqrt() / scale });
        probed.push(coords.len());
    }
    Ok(GradReport { rel_err, probed })
}
