//! Modulated deformable convolution.
//!
//! Offsets carry `2 * k * k * G` channels ordered `(group, tap, [dx, dy])`;
//! modulation carries `k * k * G` channels ordered `(group, tap)`. Samples
//! are bilinear, and corners outside the input read zero.

use crate::error::{bail, Result};
use crate::kernels::conv::ConvSpec;
use crate::par;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct DeformGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    cout: usize,
    ho: usize,
    wo: usize,
    groups: usize,
    spec: ConvSpec,
}

impl DeformGeom {
    fn new<T: Scalar>(
        x: &Tensor<T>,
        offsets: &Tensor<T>,
        modulation: &Tensor<T>,
        weight: &Tensor<T>,
        spec: ConvSpec,
    ) -> Result<Self> {
        let [n, c, h, w] = x.shape();
        let [cout, wc, kh, kw] = weight.shape();
        if spec.groups != 1 {
            bail!(Spec, "deformable conv weights are not grouped");
        }
        if wc != c || kh != spec.kernel || kw != spec.kernel {
            bail!(
                Dimension,
                "weight {:?} incompatible with {c} input channels and kernel {}",
                weight.shape(),
                spec.kernel
            );
        }
        let k2 = spec.kernel * spec.kernel;
        let ho = spec.output_len(h)?;
        let wo = spec.output_len(w)?;
        let [on, oc, oh, ow] = offsets.shape();
        if oc == 0 || oc % (2 * k2) != 0 {
            bail!(
                Spec,
                "offset tensor has {oc} channels, expected a multiple of {}",
                2 * k2
            );
        }
        let groups = oc / (2 * k2);
        if c % groups != 0 {
            bail!(Spec, "{groups} offset groups do not divide {c} channels");
        }
        if (on, oh, ow) != (n, ho, wo) {
            bail!(
                Dimension,
                "offsets {:?} do not match output {:?}",
                offsets.shape(),
                [n, oc, ho, wo]
            );
        }
        if modulation.shape() != [n, groups * k2, ho, wo] {
            bail!(
                Spec,
                "modulation {:?} expected {:?}",
                modulation.shape(),
                [n, groups * k2, ho, wo]
            );
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            cout,
            ho,
            wo,
            groups,
            spec,
        })
    }

    fn k2(&self) -> usize {
        self.spec.kernel * self.spec.kernel
    }

    fn base(&self, oy: usize, ox: usize, tap: usize) -> (f64, f64) {
        let s = self.spec;
        let ky = tap / s.kernel;
        let kx = tap % s.kernel;
        let by = (oy * s.stride + ky * s.dilation) as f64 - s.padding as f64;
        let bx = (ox * s.stride + kx * s.dilation) as f64 - s.padding as f64;
        (by, bx)
    }
}

/// Bilinear corner indices and weights; `None` corners lie outside the plane.
#[derive(Clone, Copy)]
struct Corners {
    idx: [Option<usize>; 4],
    ly: f64,
    lx: f64,
}

#[inline]
fn corners(h: usize, w: usize, y: f64, x: f64) -> Option<Corners> {
    if y <= -1.0 || y >= h as f64 || x <= -1.0 || x >= w as f64 {
        return None;
    }
    let y0 = y.floor();
    let x0 = x.floor();
    let (ly, lx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let at = |yy: isize, xx: isize| {
        (yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize)
            .then(|| yy as usize * w + xx as usize)
    };
    Some(Corners {
        idx: [at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1)],
        ly,
        lx,
    })
}

impl Corners {
    #[inline]
    fn weights(&self) -> [f64; 4] {
        let (ly, lx) = (self.ly, self.lx);
        [
            (1.0 - ly) * (1.0 - lx),
            (1.0 - ly) * lx,
            ly * (1.0 - lx),
            ly * lx,
        ]
    }

    #[inline]
    fn values<T: Scalar>(&self, plane: &[T]) -> [f64; 4] {
        let mut v = [0.0; 4];
        for (dst, idx) in v.iter_mut().zip(self.idx) {
            if let Some(i) = idx {
                *dst = plane[i].f64();
            }
        }
        v
    }

    #[inline]
    fn sample<T: Scalar>(&self, plane: &[T]) -> f64 {
        let v = self.values(plane);
        let w = self.weights();
        w[0] * v[0] + w[1] * v[1] + w[2] * v[2] + w[3] * v[3]
    }
}

/// Modulated, displaced im2col for batch item `n`: rows `c * k2 + tap`.
fn deform_cols<T: Scalar>(
    g: &DeformGeom,
    x: &[T],
    off: &[T],
    mask: &[T],
    n: usize,
    modulate: bool,
) -> Vec<T> {
    let k2 = g.k2();
    let p = g.ho * g.wo;
    let hw = g.h * g.w;
    let cpg = g.c / g.groups;
    let mut cols = vec![T::zero(); g.c * k2 * p];
    for grp in 0..g.groups {
        for tap in 0..k2 {
            let ox_ch = ((n * g.groups + grp) * k2 + tap) * 2;
            let offx = &off[ox_ch * p..(ox_ch + 1) * p];
            let offy = &off[(ox_ch + 1) * p..(ox_ch + 2) * p];
            let m_ch = (n * g.groups + grp) * k2 + tap;
            let m = &mask[m_ch * p..(m_ch + 1) * p];
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let pos = oy * g.wo + ox;
                    let (by, bx) = g.base(oy, ox, tap);
                    let Some(cr) = corners(g.h, g.w, by + offy[pos].f64(), bx + offx[pos].f64())
                    else {
                        continue;
                    };
                    let scale = if modulate { m[pos].f64() } else { 1.0 };
                    for ci in grp * cpg..(grp + 1) * cpg {
                        let plane = &x[(n * g.c + ci) * hw..(n * g.c + ci + 1) * hw];
                        cols[(ci * k2 + tap) * p + pos] = T::c(scale * cr.sample(plane));
                    }
                }
            }
        }
    }
    cols
}

pub fn deform_conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
    modulation: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = DeformGeom::new(x, offsets, modulation, weight, spec)?;
    let p = g.ho * g.wo;
    let kdim = g.c * g.k2();
    let mut out = vec![T::zero(); g.n * g.cout * p];
    par::for_each_chunk(&mut out, g.cout * p, |n, block| {
        let cols = deform_cols(&g, x.data(), offsets.data(), modulation.data(), n, true);
        T::gemm(
            g.cout,
            kdim,
            p,
            T::one(),
            weight.data(),
            kdim as isize,
            1,
            &cols,
            p as isize,
            1,
            T::zero(),
            block,
            p as isize,
            1,
        );
        if let Some(b) = bias {
            for (co, &bv) in b.data().iter().enumerate() {
                block[co * p..(co + 1) * p]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    });
    Tensor::new([g.n, g.cout, g.ho, g.wo], out)
}

pub struct DeformGrads<T> {
    pub input: Tensor<T>,
    pub offsets: Tensor<T>,
    pub modulation: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn deform_conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
    modulation: &Tensor<T>,
    weight: &Tensor<T>,
    spec: ConvSpec,
    gout: &Tensor<T>,
) -> Result<DeformGrads<T>> {
    let g = DeformGeom::new(x, offsets, modulation, weight, spec)?;
    if gout.shape() != [g.n, g.cout, g.ho, g.wo] {
        bail!(Dimension, "deform conv grad shape {:?}", gout.shape());
    }
    let k2 = g.k2();
    let p = g.ho * g.wo;
    let hw = g.h * g.w;
    let kdim = g.c * k2;
    let cpg = g.c / g.groups;
    let xd = x.data();
    let od = offsets.data();
    let md = modulation.data();
    let gd = gout.data();

    struct Part<T> {
        gx: Vec<T>,
        goff: Vec<T>,
        gmask: Vec<T>,
        gw: Vec<T>,
    }

    let parts: Vec<Part<T>> = par::map_indices(g.n, |n| {
        let gblock = &gd[n * g.cout * p..(n + 1) * g.cout * p];
        let cols = deform_cols(&g, xd, od, md, n, true);
        let mut gw = vec![T::zero(); g.cout * kdim];
        T::gemm(
            g.cout,
            p,
            kdim,
            T::one(),
            gblock,
            p as isize,
            1,
            &cols,
            1,
            p as isize,
            T::zero(),
            &mut gw,
            kdim as isize,
            1,
        );
        let mut gcols = cols;
        T::gemm(
            kdim,
            g.cout,
            p,
            T::one(),
            weight.data(),
            1,
            kdim as isize,
            gblock,
            p as isize,
            1,
            T::zero(),
            &mut gcols,
            p as isize,
            1,
        );
        let mut gx = vec![0.0f64; g.c * hw];
        let mut goff = vec![T::zero(); g.groups * k2 * 2 * p];
        let mut gmask = vec![T::zero(); g.groups * k2 * p];
        for grp in 0..g.groups {
            for tap in 0..k2 {
                let ch = (grp * k2 + tap) * 2;
                let goch = ((n * g.groups + grp) * k2 + tap) * 2;
                let mch = (n * g.groups + grp) * k2 + tap;
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let pos = oy * g.wo + ox;
                        let (by, bx) = g.base(oy, ox, tap);
                        let dx = od[goch * p + pos].f64();
                        let dy = od[(goch + 1) * p + pos].f64();
                        let Some(cr) = corners(g.h, g.w, by + dy, bx + dx) else {
                            continue;
                        };
                        let m = md[mch * p + pos].f64();
                        let wts = cr.weights();
                        let (ly, lx) = (cr.ly, cr.lx);
                        let (mut acc_m, mut acc_y, mut acc_x) = (0.0, 0.0, 0.0);
                        for ci in grp * cpg..(grp + 1) * cpg {
                            let gv = gcols[(ci * k2 + tap) * p + pos].f64();
                            if gv == 0.0 {
                                continue;
                            }
                            let plane = &xd[(n * g.c + ci) * hw..(n * g.c + ci + 1) * hw];
                            let v = cr.values(plane);
                            let sampled = wts[0] * v[0] + wts[1] * v[1] + wts[2] * v[2] + wts[3] * v[3];
                            acc_m += gv * sampled;
                            acc_y += gv * ((1.0 - lx) * (v[2] - v[0]) + lx * (v[3] - v[1]));
                            acc_x += gv * ((1.0 - ly) * (v[1] - v[0]) + ly * (v[3] - v[2]));
                            let gplane = &mut gx[ci * hw..(ci + 1) * hw];
                            for (idx, wt) in cr.idx.iter().zip(wts) {
                                if let Some(i) = idx {
                                    gplane[*i] += gv * m * wt;
                                }
                            }
                        }
                        gmask[(grp * k2 + tap) * p + pos] = T::c(acc_m);
                        goff[ch * p + pos] = T::c(acc_x * m);
                        goff[(ch + 1) * p + pos] = T::c(acc_y * m);
                    }
                }
            }
        }
        Part {
            gx: gx.into_iter().map(T::c).collect(),
            goff,
            gmask,
            gw,
        }
    });

    let mut gx = Vec::with_capacity(x.numel());
    let mut goff = Vec::with_capacity(offsets.numel());
    let mut gmask = Vec::with_capacity(modulation.numel());
    let mut gw = vec![T::zero(); weight.numel()];
    for part in parts {
        gx.extend(part.gx);
        goff.extend(part.goff);
        gmask.extend(part.gmask);
        for (a, b) in gw.iter_mut().zip(part.gw) {
            *a += b;
        }
    }
    let mut gb = vec![T::zero(); g.cout];
    for n in 0..g.n {
        for (co, acc) in gb.iter_mut().enumerate() {
            let s = (n * g.cout + co) * p;
            *acc += gd[s..s + p].iter().copied().sum::<T>();
        }
    }
    Ok(DeformGrads {
        input: Tensor::new(x.shape(), gx)?,
        offsets: Tensor::new(offsets.shape(), goff)?,
        modulation: Tensor::new(modulation.shape(), gmask)?,
        weight: Tensor::new(weight.shape(), gw)?,
        bias: Tensor::new([1, g.cout, 1, 1], gb)?,
    })
}
