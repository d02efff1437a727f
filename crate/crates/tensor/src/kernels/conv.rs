//! Grouped 2-D cross-correlation via im2col + GEMM, with a direct path for
//! depth-wise filters.

use crate::error::{bail, Result};
use crate::par;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Square-kernel convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// `k x k`, stride 1, "same" zero padding, with bias.
    pub fn same(kernel: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            padding: kernel / 2,
            dilation: 1,
            groups: 1,
            bias: true,
        }
    }

    pub fn pointwise() -> Self {
        Self::same(1)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    /// Output extent along one axis of length `len`.
    pub fn output_len(&self, len: usize) -> Result<usize> {
        if self.stride == 0 || self.kernel == 0 || self.dilation == 0 {
            bail!(Spec, "kernel, stride and dilation must be positive: {self:?}");
        }
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = len + 2 * self.padding;
        if padded < span {
            bail!(Spec, "non-positive output extent for input {len} with {self:?}");
        }
        Ok((padded - span) / self.stride + 1)
    }

    fn tap_offset(&self, k: usize) -> isize {
        (k * self.dilation) as isize - self.padding as isize
    }
}

pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub ho: usize,
    pub wo: usize,
    pub cin_g: usize,
    pub cout_g: usize,
    pub spec: ConvSpec,
}

impl ConvGeom {
    pub fn new<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, spec: ConvSpec) -> Result<Self> {
        let [n, cin, h, w] = x.shape();
        let [cout, wc, kh, kw] = weight.shape();
        if spec.groups == 0 || cin % spec.groups != 0 || cout % spec.groups != 0 {
            bail!(
                Dimension,
                "channels in={cin} out={cout} not divisible by groups={}",
                spec.groups
            );
        }
        if kh != spec.kernel || kw != spec.kernel {
            bail!(
                Dimension,
                "weight kernel {kh}x{kw} does not match spec kernel {}",
                spec.kernel
            );
        }
        if wc != cin / spec.groups {
            bail!(
                Dimension,
                "weight expects {} input channels per group, input has {}",
                wc,
                cin / spec.groups
            );
        }
        let ho = spec.output_len(h)?;
        let wo = spec.output_len(w)?;
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            ho,
            wo,
            cin_g: cin / spec.groups,
            cout_g: cout / spec.groups,
            spec,
        })
    }

    fn depthwise(&self) -> bool {
        self.cin_g == 1 && self.cout_g == 1
    }

    /// 1x1, stride 1, no padding: the input plane already is the column matrix.
    fn pointwise(&self) -> bool {
        self.spec.kernel == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    /// Few output channels: shifted-row accumulation beats im2col + gemm.
    fn narrow(&self) -> bool {
        self.cout_g <= 4 && self.spec.kernel > 1
    }

    fn k2(&self) -> usize {
        self.spec.kernel * self.spec.kernel
    }

    /// Output rows per im2col chunk, bounding the column buffer to ~1M entries.
    fn rows_per_chunk(&self) -> usize {
        let per_row = (self.cin_g * self.k2() * self.wo).max(1);
        (1 << 20) / per_row
    }
}

/// Range of output columns `x` with `0 <= x * stride + off < len`.
#[inline]
pub(crate) fn valid_range(out_len: usize, stride: usize, off: isize, len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi_num = len as isize - 1 - off;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num / s + 1).min(out_len as isize);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// Fills `cols` (rows `cin_g*k*k`, columns `rows * wo`) for output rows `y0..y0+rows`.
fn im2col<T: Scalar>(g: &ConvGeom, plane: &[T], y0: usize, rows: usize, cols: &mut [T]) {
    let s = g.spec;
    let ncols = rows * g.wo;
    let hw = g.h * g.w;
    for ci in 0..g.cin_g {
        let src = &plane[ci * hw..(ci + 1) * hw];
        for ky in 0..s.kernel {
            let oy = s.tap_offset(ky);
            for kx in 0..s.kernel {
                let ox = s.tap_offset(kx);
                let r = (ci * s.kernel + ky) * s.kernel + kx;
                let dst = &mut cols[r * ncols..(r + 1) * ncols];
                let (xlo, xhi) = valid_range(g.wo, s.stride, ox, g.w);
                for yy in 0..rows {
                    let row = &mut dst[yy * g.wo..(yy + 1) * g.wo];
                    let iy = ((y0 + yy) * s.stride) as isize + oy;
                    if iy < 0 || iy >= g.h as isize || xlo >= xhi {
                        row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    row[..xlo].iter_mut().for_each(|v| *v = T::zero());
                    row[xhi..].iter_mut().for_each(|v| *v = T::zero());
                    if s.stride == 1 {
                        let start = (xlo as isize + ox) as usize;
                        row[xlo..xhi].copy_from_slice(&srow[start..start + (xhi - xlo)]);
                    } else {
                        for x in xlo..xhi {
                            row[x] = srow[((x * s.stride) as isize + ox) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into `plane` (inverse of [`im2col`]).
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], y0: usize, rows: usize, plane: &mut [T]) {
    let s = g.spec;
    let ncols = rows * g.wo;
    let hw = g.h * g.w;
    for ci in 0..g.cin_g {
        let dst = &mut plane[ci * hw..(ci + 1) * hw];
        for ky in 0..s.kernel {
            let oy = s.tap_offset(ky);
            for kx in 0..s.kernel {
                let ox = s.tap_offset(kx);
                let r = (ci * s.kernel + ky) * s.kernel + kx;
                let src = &cols[r * ncols..(r + 1) * ncols];
                let (xlo, xhi) = valid_range(g.wo, s.stride, ox, g.w);
                if xlo >= xhi {
                    continue;
                }
                for yy in 0..rows {
                    let iy = ((y0 + yy) * s.stride) as isize + oy;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let row = &src[yy * g.wo..(yy + 1) * g.wo];
                    for x in xlo..xhi {
                        drow[((x * s.stride) as isize + ox) as usize] += row[x];
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x, weight, spec)?;
    if let Some(b) = bias {
        if b.numel() != g.cout {
            bail!(Dimension, "bias has {} entries, expected {}", b.numel(), g.cout);
        }
    }
    let p = g.ho * g.wo;
    let mut out = vec![T::zero(); g.n * g.cout * p];
    let xd = x.data();
    let wd = weight.data();
    let k = g.cin_g * g.k2();
    par::for_each_chunk(&mut out, g.cout_g * p, |task, block| {
        let (n, grp) = (task / spec.groups, task % spec.groups);
        let plane_start = (n * g.cin + grp * g.cin_g) * g.h * g.w;
        let plane = &xd[plane_start..plane_start + g.cin_g * g.h * g.w];
        if g.depthwise() {
            depthwise_plane_forward(&g, plane, &wd[grp * g.k2()..(grp + 1) * g.k2()], block);
        } else if g.narrow() {
            let hw = g.h * g.w;
            for co in 0..g.cout_g {
                let wrow = &wd[(grp * g.cout_g + co) * k..(grp * g.cout_g + co + 1) * k];
                for ci in 0..g.cin_g {
                    depthwise_plane_forward(
                        &g,
                        &plane[ci * hw..(ci + 1) * hw],
                        &wrow[ci * g.k2()..(ci + 1) * g.k2()],
                        &mut block[co * p..(co + 1) * p],
                    );
                }
            }
        } else if g.pointwise() {
            let wg = &wd[grp * g.cout_g * k..(grp + 1) * g.cout_g * k];
            T::gemm(g.cout_g, k, p, T::one(), wg, k as isize, 1, plane, p as isize, 1, T::zero(), block, p as isize, 1);
        } else {
            let wg = &wd[grp * g.cout_g * k..(grp + 1) * g.cout_g * k];
            let step = g.rows_per_chunk().max(1);
            let mut cols = vec![T::zero(); k * step.min(g.ho) * g.wo];
            let mut y0 = 0;
            while y0 < g.ho {
                let rows = step.min(g.ho - y0);
                let ncols = rows * g.wo;
                im2col(&g, plane, y0, rows, &mut cols[..k * ncols]);
                T::gemm(
                    g.cout_g,
                    k,
                    ncols,
                    T::one(),
                    wg,
                    k as isize,
                    1,
                    &cols[..k * ncols],
                    ncols as isize,
                    1,
                    T::zero(),
                    &mut block[y0 * g.wo..],
                    p as isize,
                    1,
                );
                y0 += rows;
            }
        }
        if let Some(b) = bias {
            let bd = b.data();
            for co in 0..g.cout_g {
                let bv = bd[grp * g.cout_g + co];
                block[co * p..(co + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Tensor::new([g.n, g.cout, g.ho, g.wo], out)
}

/// Accumulates the correlation of one input plane with one `k x k` kernel.
fn depthwise_plane_forward<T: Scalar>(g: &ConvGeom, plane: &[T], w: &[T], out: &mut [T]) {
    let s = g.spec;
    for ky in 0..s.kernel {
        let oy = s.tap_offset(ky);
        for kx in 0..s.kernel {
            let ox = s.tap_offset(kx);
            let wv = w[ky * s.kernel + kx];
            let (xlo, xhi) = valid_range(g.wo, s.stride, ox, g.w);
            if xlo >= xhi {
                continue;
            }
            for y in 0..g.ho {
                let iy = (y * s.stride) as isize + oy;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                let srow = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                let orow = &mut out[y * g.wo..(y + 1) * g.wo];
                if s.stride == 1 {
                    let start = (xlo as isize + ox) as usize;
                    for (o, &v) in orow[xlo..xhi].iter_mut().zip(&srow[start..]) {
                        *o += wv * v;
                    }
                } else {
                    for x in xlo..xhi {
                        orow[x] += wv * srow[((x * s.stride) as isize + ox) as usize];
                    }
                }
            }
        }
    }
}

/// Gradients of a convolution with respect to its input, weight and bias.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: ConvSpec,
    gout: &Tensor<T>,
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::new(x, weight, spec)?;
    if gout.shape() != [g.n, g.cout, g.ho, g.wo] {
        bail!(Dimension, "conv grad shape {:?}", gout.shape());
    }
    let p = g.ho * g.wo;
    let k = g.cin_g * g.k2();
    let hw = g.h * g.w;
    let xd = x.data();
    let wd = weight.data();
    let gd = gout.data();
    let tasks = g.n * spec.groups;

    // Input gradients land in place, one chunk per (n, group) task; weight
    // partials are reduced afterwards in task order for determinism.
    let run = |task: usize, gx: &mut [T]| -> Vec<T> {
        let (n, grp) = (task / spec.groups, task % spec.groups);
        let plane_start = (n * g.cin + grp * g.cin_g) * hw;
        let plane = &xd[plane_start..plane_start + g.cin_g * hw];
        let gblock_start = (n * g.cout + grp * g.cout_g) * p;
        let gblock = &gd[gblock_start..gblock_start + g.cout_g * p];
        let mut gw = if need_weight {
            vec![T::zero(); g.cout_g * k]
        } else {
            Vec::new()
        };
        if g.depthwise() {
            depthwise_plane_backward(
                &g,
                plane,
                &wd[grp * g.k2()..(grp + 1) * g.k2()],
                gblock,
                need_input.then_some(gx),
                need_weight.then_some(gw.as_mut_slice()),
            );
            return gw;
        }
        let wg = &wd[grp * g.cout_g * k..(grp + 1) * g.cout_g * k];
        if g.narrow() {
            for co in 0..g.cout_g {
                let wrow = &wg[co * k..(co + 1) * k];
                for ci in 0..g.cin_g {
                    let kk = g.k2();
                    depthwise_plane_backward(
                        &g,
                        &plane[ci * hw..(ci + 1) * hw],
                        &wrow[ci * kk..(ci + 1) * kk],
                        &gblock[co * p..(co + 1) * p],
                        need_input.then(|| &mut gx[ci * hw..(ci + 1) * hw]),
                        need_weight.then(|| &mut gw[co * k + ci * kk..co * k + (ci + 1) * kk]),
                    );
                }
            }
            return gw;
        }
        if g.pointwise() {
            if need_weight {
                T::gemm(g.cout_g, p, k, T::one(), gblock, p as isize, 1, plane, 1, p as isize, T::zero(), &mut gw, k as isize, 1);
            }
            if need_input {
                T::gemm(k, g.cout_g, p, T::one(), wg, 1, k as isize, gblock, p as isize, 1, T::zero(), gx, p as isize, 1);
            }
            return gw;
        }
        let step = g.rows_per_chunk().max(1);
        let mut cols = vec![T::zero(); k * step.min(g.ho) * g.wo];
        let mut y0 = 0;
        while y0 < g.ho {
            let rows = step.min(g.ho - y0);
            let ncols = rows * g.wo;
            let gchunk = &gblock[y0 * g.wo..];
            if need_weight {
                im2col(&g, plane, y0, rows, &mut cols[..k * ncols]);
                // gw += gout_chunk (cout_g x ncols) * cols^T (ncols x k)
                T::gemm(
                    g.cout_g,
                    ncols,
                    k,
                    T::one(),
                    gchunk,
                    p as isize,
                    1,
                    &cols[..k * ncols],
                    1,
                    ncols as isize,
                    T::one(),
                    &mut gw,
                    k as isize,
                    1,
                );
            }
            if need_input {
                // cols = W^T (k x cout_g) * gout_chunk (cout_g x ncols)
                T::gemm(
                    k,
                    g.cout_g,
                    ncols,
                    T::one(),
                    wg,
                    1,
                    k as isize,
                    gchunk,
                    p as isize,
                    1,
                    T::zero(),
                    &mut cols[..k * ncols],
                    ncols as isize,
                    1,
                );
                col2im(&g, &cols[..k * ncols], y0, rows, gx);
            }
            y0 += rows;
        }
        gw
    };
    let (input, parts) = if need_input {
        let mut gx = vec![T::zero(); x.numel()];
        let slots: Vec<std::sync::Mutex<Vec<T>>> = (0..tasks).map(|_| Default::default()).collect();
        par::for_each_chunk(&mut gx, g.cin_g * hw, |task, chunk| {
            *slots[task].lock().expect("unpoisoned") = run(task, chunk);
        });
        let parts = slots.into_iter().map(|m| m.into_inner().expect("unpoisoned")).collect();
        (Some(Tensor::new(x.shape(), gx)?), parts)
    } else {
        (None, par::map_indices(tasks, |task| run(task, &mut [])))
    };

    let weight_grad = if need_weight {
        let per_group = g.cout_g * k;
        let mut gw = vec![T::zero(); weight.numel()];
        for (task, part) in parts.iter().enumerate() {
            let grp = task % spec.groups;
            for (dst, &v) in gw[grp * per_group..(grp + 1) * per_group]
                .iter_mut()
                .zip(part)
            {
                *dst += v;
            }
        }
        Some(Tensor::new(weight.shape(), gw)?)
    } else {
        None
    };

    let bias = if need_bias {
        let mut gb = vec![T::zero(); g.cout];
        for n in 0..g.n {
            for (co, acc) in gb.iter_mut().enumerate() {
                let start = (n * g.cout + co) * p;
                *acc += gd[start..start + p].iter().copied().sum::<T>();
            }
        }
        Some(Tensor::new([1, g.cout, 1, 1], gb)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input,
        weight: weight_grad,
        bias,
    })
}

fn depthwise_plane_backward<T: Scalar>(
    g: &ConvGeom,
    plane: &[T],
    w: &[T],
    gout: &[T],
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
) {
    let s = g.spec;
    for ky in 0..s.kernel {
        let oy = s.tap_offset(ky);
        for kx in 0..s.kernel {
            let ox = s.tap_offset(kx);
            let tap = ky * s.kernel + kx;
            let wv = w[tap];
            let (xlo, xhi) = valid_range(g.wo, s.stride, ox, g.w);
            if xlo >= xhi {
                continue;
            }
            let mut acc = T::zero();
            for y in 0..g.ho {
                let iy = (y * s.stride) as isize + oy;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                let row_base = iy as usize * g.w;
                let grow = &gout[y * g.wo..(y + 1) * g.wo];
                if s.stride == 1 {
                    let start = row_base + (xlo as isize + ox) as usize;
                    let len = xhi - xlo;
                    let gseg = &grow[xlo..xhi];
                    acc += gseg
                        .iter()
                        .zip(&plane[start..start + len])
                        .fold(T::zero(), |a, (&gv, &pv)| a + gv * pv);
                    if let Some(gx) = gx.as_deref_mut() {
                        for (d, &gv) in gx[start..start + len].iter_mut().zip(gseg) {
                            *d += gv * wv;
                        }
                    }
                    continue;
                }
                for x in xlo..xhi {
                    let ix = row_base + ((x * s.stride) as isize + ox) as usize;
                    acc += grow[x] * plane[ix];
                    if let Some(gx) = gx.as_deref_mut() {
                        gx[ix] += grow[x] * wv;
                    }
                }
            }
            if let Some(gw) = gw.as_deref_mut() {
                gw[tap] += acc;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_len_formula() {
        let s = ConvSpec::same(3);
        assert_eq!(s.output_len(8).unwrap(), 8);
        assert_eq!(s.with_stride(2).output_len(8).unwrap(), 4);
        assert_eq!(ConvSpec::same(3).with_padding(0).output_len(3).unwrap(), 1);
        assert!(ConvSpec::same(5).with_padding(0).output_len(3).is_err());
    }

    #[test]
    fn valid_range_matches_brute_force() {
        for out_len in 1..7 {
            for stride in 1..4 {
                for off in -4isize..4 {
                    for len in 1..8 {
                        let brute: Vec<usize> = (0..out_len)
                            .filter(|&x| {
                                let i = (x * stride) as isize + off;
                                i >= 0 && i < len as isize
                            })
                            .collect();
                        let (lo, hi) = valid_range(out_len, stride, off, len);
                        let got: Vec<usize> = (lo..hi).collect();
                        assert_eq!(got, brute, "{out_len} {stride} {off} {len}");
                    }
                }
            }
        }
    }
}
