//! Differentiable operations on tape variables.

use crate::error::{bail, Result, TensorError};
use crate::kernels::conv::{self, ConvSpec};
use crate::kernels::deform;
use crate::kernels::resize::{self, ResizeMode};
use crate::kernels::shuffle;
use crate::scalar::Scalar;
use crate::tape::{BackwardFn, Tape, Var};
use crate::tensor::{numel, Shape, Tensor};

type Grads<T> = Result<Vec<Option<Tensor<T>>>>;

fn record<'t, T, F>(
    tape: &'t Tape<T>,
    op: &'static str,
    value: Tensor<T>,
    parents: &[Var<'t, T>],
    backward: F,
) -> Result<Var<'t, T>>
where
    T: Scalar,
    F: FnOnce(&Tensor<T>) -> Grads<T> + 'static,
{
    if !value.is_finite() {
        return Err(TensorError::NonFinite { op });
    }
    let requires_grad = parents.iter().any(|p| p.requires_grad());
    let backward: Option<BackwardFn<T>> = requires_grad.then(|| Box::new(backward) as BackwardFn<T>);
    Ok(tape.push(
        value,
        parents.iter().map(|p| p.id()).collect(),
        requires_grad,
        backward,
        op,
    ))
}

fn same_tape<T: Scalar>(a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    if !std::ptr::eq(a.tape(), b.tape()) {
        bail!(Tape, "operands recorded on different tapes");
    }
    Ok(())
}

/// Checks that every dim of `small` equals the matching dim of `big` or is 1.
fn check_broadcast(big: Shape, small: Shape) -> Result<()> {
    for (b, s) in big.iter().zip(small.iter()) {
        if *s != *b && *s != 1 {
            bail!(Dimension, "cannot broadcast {:?} to {:?}", small, big);
        }
    }
    Ok(())
}

/// `f(a[i], b[broadcast(i)])` over every element of `a`.
fn broadcast_zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let sa = a.shape();
    let sb = b.shape();
    if sa == sb {
        return a.zip_map(b, f).expect("shapes checked");
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = Vec::with_capacity(a.numel());
    let pick = |i: usize, d: usize| if sb[d] == 1 { 0 } else { i };
    for n in 0..sa[0] {
        for c in 0..sa[1] {
            for y in 0..sa[2] {
                let arow = ((n * sa[1] + c) * sa[2] + y) * sa[3];
                let brow = ((pick(n, 0) * sb[1] + pick(c, 1)) * sb[2] + pick(y, 2)) * sb[3];
                if sb[3] == 1 {
                    let bv = bd[brow];
                    out.extend(ad[arow..arow + sa[3]].iter().map(|&av| f(av, bv)));
                } else {
                    out.extend(
                        ad[arow..arow + sa[3]]
                            .iter()
                            .zip(&bd[brow..brow + sa[3]])
                            .map(|(&av, &bv)| f(av, bv)),
                    );
                }
            }
        }
    }
    Tensor::new(sa, out).expect("shape preserved")
}

/// Sums `g` down to `shape` over the broadcast dimensions.
fn reduce_to<T: Scalar>(g: &Tensor<T>, shape: Shape) -> Tensor<T> {
    let sg = g.shape();
    if sg == shape {
        return g.clone();
    }
    let gd = g.data();
    let mut out = vec![T::zero(); numel(&shape)];
    let pick = |i: usize, d: usize| if shape[d] == 1 { 0 } else { i };
    for n in 0..sg[0] {
        for c in 0..sg[1] {
            for y in 0..sg[2] {
                let grow = ((n * sg[1] + c) * sg[2] + y) * sg[3];
                let orow = ((pick(n, 0) * shape[1] + pick(c, 1)) * shape[2] + pick(y, 2)) * shape[3];
                if shape[3] == 1 {
                    out[orow] += gd[grow..grow + sg[3]].iter().copied().sum::<T>();
                } else {
                    for x in 0..sg[3] {
                        out[orow + x] += gd[grow + x];
                    }
                }
            }
        }
    }
    Tensor::new(shape, out).expect("reduced shape")
}

fn gelu_value(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Batched matrix product over the (N, C) dims; matrices occupy (H, W).
fn bmm<T: Scalar>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool) -> Result<Tensor<T>> {
    let [an, ac, ah, aw] = a.shape();
    let [bn, bc, bh, bw] = b.shape();
    if (an, ac) != (bn, bc) {
        bail!(Dimension, "matmul batch {:?} vs {:?}", a.shape(), b.shape());
    }
    let (m, k) = if ta { (aw, ah) } else { (ah, aw) };
    let (k2, n) = if tb { (bw, bh) } else { (bh, bw) };
    if k != k2 {
        bail!(
            Dimension,
            "matmul inner dims {k} vs {k2} ({:?}{} x {:?}{})",
            a.shape(),
            if ta { "^T" } else { "" },
            b.shape(),
            if tb { "^T" } else { "" }
        );
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let mut out = vec![T::zero(); an * ac * m * n];
    let (asz, bsz, osz) = (ah * aw, bh * bw, m * n);
    for i in 0..an * ac {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &a.data()[i * asz..(i + 1) * asz],
            rsa,
            csa,
            &b.data()[i * bsz..(i + 1) * bsz],
            rsb,
            csb,
            T::zero(),
            &mut out[i * osz..(i + 1) * osz],
            n as isize,
            1,
        );
    }
    Tensor::new([an, ac, m, n], out)
}

impl<'t, T: Scalar> Var<'t, T> {
    fn unary(
        self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + 'static,
    ) -> Result<Self> {
        let x = self.value();
        let out = x.map(|v| T::c(f(v.f64())));
        record(self.tape(), op, out, &[self], move |g| {
            let gx = x.zip_map(g, |xv, gv| gv * T::c(df(xv.f64())))?;
            Ok(vec![Some(gx)])
        })
    }

    /// `self + other`, with `other` broadcast over its size-1 dims.
    pub fn add(self, other: Var<'t, T>) -> Result<Self> {
        same_tape(&self, &other)?;
        let (a, b) = (self.value(), other.value());
        check_broadcast(a.shape(), b.shape())?;
        let out = broadcast_zip(&a, &b, |x, y| x + y);
        let bshape = b.shape();
        record(self.tape(), "add", out, &[self, other], move |g| {
            Ok(vec![Some(g.clone()), Some(reduce_to(g, bshape))])
        })
    }

    /// `self - other`, with `other` broadcast over its size-1 dims.
    pub fn sub(self, other: Var<'t, T>) -> Result<Self> {
        same_tape(&self, &other)?;
        let (a, b) = (self.value(), other.value());
        check_broadcast(a.shape(), b.shape())?;
        let out = broadcast_zip(&a, &b, |x, y| x - y);
        let bshape = b.shape();
        record(self.tape(), "sub", out, &[self, other], move |g| {
            Ok(vec![Some(g.clone()), Some(reduce_to(&g.map(|v| -v), bshape))])
        })
    }

    /// Elementwise product, with `other` broadcast over its size-1 dims.
    pub fn mul(self, other: Var<'t, T>) -> Result<Self> {
        same_tape(&self, &other)?;
        let (a, b) = (self.value(), other.value());
        check_broadcast(a.shape(), b.shape())?;
        let out = broadcast_zip(&a, &b, |x, y| x * y);
        record(self.tape(), "mul", out, &[self, other], move |g| {
            let ga = broadcast_zip(g, &b, |gv, bv| gv * bv);
            let gb = reduce_to(&g.zip_map(&a, |gv, av| gv * av)?, b.shape());
            Ok(vec![Some(ga), Some(gb)])
        })
    }

    pub fn scale(self, s: f64) -> Result<Self> {
        let st = T::c(s);
        let out = self.value().scaled(st);
        record(self.tape(), "scale", out, &[self], move |g| {
            Ok(vec![Some(g.scaled(st))])
        })
    }

    pub fn add_scalar(self, s: f64) -> Result<Self> {
        let st = T::c(s);
        let out = self.value().map(|v| v + st);
        record(self.tape(), "add_scalar", out, &[self], |g| Ok(vec![Some(g.clone())]))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(self) -> Result<Self> {
        self.unary("gelu", gelu_value, gelu_grad)
    }

    pub fn sigmoid(self) -> Result<Self> {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        self.unary("sigmoid", sig, move |v| {
            let s = sig(v);
            s * (1.0 - s)
        })
    }

    pub fn sum(self) -> Result<Self> {
        let shape = self.shape();
        let out = Tensor::scalar(self.value().sum());
        record(self.tape(), "sum", out, &[self], move |g| {
            Ok(vec![Some(Tensor::full(shape, g.data()[0]))])
        })
    }

    pub fn mean(self) -> Result<Self> {
        let count = self.value().numel() as f64;
        self.sum()?.scale(1.0 / count)
    }

    /// Per-(n, c) spatial mean, shape `(N, C, 1, 1)`.
    pub fn mean_hw(self) -> Result<Self> {
        let x = self.value();
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let inv = T::c(1.0 / hw as f64);
        let out: Vec<T> = x
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new([n, c, 1, 1], out)?;
        record(self.tape(), "mean_hw", out, &[self], move |g| {
            let gd = g.data();
            Ok(vec![Some(Tensor::from_fn([n, c, h, w], |b, ch, _, _| {
                gd[b * c + ch] * inv
            }))])
        })
    }

    /// Mean over the batch axis, shape `(1, C, H, W)`.
    pub fn mean_batch(self) -> Result<Self> {
        let x = self.value();
        let [n, c, h, w] = x.shape();
        let per = c * h * w;
        let inv = T::c(1.0 / n as f64);
        let mut out = vec![T::zero(); per];
        for item in x.data().chunks(per) {
            for (o, &v) in out.iter_mut().zip(item) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let out = Tensor::new([1, c, h, w], out)?;
        record(self.tape(), "mean_batch", out, &[self], move |g| {
            let gs = g.scaled(inv);
            let parts = vec![gs; n];
            Ok(vec![Some(Tensor::cat_batch(&parts)?)])
        })
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        let from = self.shape();
        let out = self.value().reshape(shape)?;
        record(self.tape(), "reshape", out, &[self], move |g| {
            Ok(vec![Some(g.reshape(from)?)])
        })
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(self, start: usize, len: usize) -> Result<Self> {
        let x = self.value();
        let shape = x.shape();
        let out = x.channel_slice(start, len)?;
        record(self.tape(), "slice_channels", out, &[self], move |g| {
            let [n, c, h, w] = shape;
            let plane = h * w;
            let mut gx = vec![T::zero(); numel(&shape)];
            for b in 0..n {
                let dst = (b * c + start) * plane;
                let src = b * len * plane;
                gx[dst..dst + len * plane].copy_from_slice(&g.data()[src..src + len * plane]);
            }
            Ok(vec![Some(Tensor::new(shape, gx)?)])
        })
    }

    /// Batch items `start..start + len`.
    pub fn slice_batch(self, start: usize, len: usize) -> Result<Self> {
        let x = self.value();
        let shape = x.shape();
        let out = x.batch_slice(start, len)?;
        record(self.tape(), "slice_batch", out, &[self], move |g| {
            let per = shape[1] * shape[2] * shape[3];
            let mut gx = vec![T::zero(); numel(&shape)];
            gx[start * per..(start + len) * per].copy_from_slice(g.data());
            Ok(vec![Some(Tensor::new(shape, gx)?)])
        })
    }

    /// Stacks batch items `indices[i]` of `self` (repeats allowed).
    pub fn gather_batch(self, indices: &[usize]) -> Result<Self> {
        let x = self.value();
        let shape = x.shape();
        let per = shape[1] * shape[2] * shape[3];
        let mut out = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= shape[0] {
                bail!(Dimension, "gather index {i} out of batch {}", shape[0]);
            }
            out.extend_from_slice(&x.data()[i * per..(i + 1) * per]);
        }
        let out = Tensor::new([indices.len(), shape[1], shape[2], shape[3]], out)?;
        let indices = indices.to_vec();
        record(self.tape(), "gather_batch", out, &[self], move |g| {
            let mut gx = vec![T::zero(); numel(&shape)];
            for (slot, &i) in indices.iter().enumerate() {
                for (d, &v) in gx[i * per..(i + 1) * per]
                    .iter_mut()
                    .zip(&g.data()[slot * per..(slot + 1) * per])
                {
                    *d += v;
                }
            }
            Ok(vec![Some(Tensor::new(shape, gx)?)])
        })
    }

    /// `op(self) x op(other)` over matrices stored in the (H, W) dims.
    pub fn matmul(self, other: Var<'t, T>, trans_self: bool, trans_other: bool) -> Result<Self> {
        same_tape(&self, &other)?;
        let (a, b) = (self.value(), other.value());
        let out = bmm(&a, trans_self, &b, trans_other)?;
        record(self.tape(), "matmul", out, &[self, other], move |g| {
            let ga = if trans_self {
                bmm(&b, trans_other, g, true)?
            } else {
                bmm(g, false, &b, !trans_other)?
            };
            let gb = if trans_other {
                bmm(g, true, &a, trans_self)?
            } else {
                bmm(&a, !trans_self, g, false)?
            };
            Ok(vec![Some(ga), Some(gb)])
        })
    }

    /// Softmax along the last (W) axis with max subtraction.
    pub fn softmax_last(self) -> Result<Self> {
        let x = self.value();
        let w = x.shape()[3];
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(w) {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let y = Tensor::new(x.shape(), out)?;
        let saved = y.clone();
        record(self.tape(), "softmax", y, &[self], move |g| {
            let mut gx = g.data().to_vec();
            for (grow, yrow) in gx.chunks_mut(w).zip(saved.data().chunks(w)) {
                let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                for (gv, &yv) in grow.iter_mut().zip(yrow) {
                    *gv = yv * (*gv - dot);
                }
            }
            Ok(vec![Some(Tensor::new(saved.shape(), gx)?)])
        })
    }

    /// Scales each row along the last axis to unit L2 norm (norm floored at `eps`).
    pub fn l2_normalize_last(self, eps: f64) -> Result<Self> {
        let x = self.value();
        let w = x.shape()[3];
        let eps = T::c(eps);
        let norms: Vec<T> = x
            .data()
            .chunks(w)
            .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps))
            .collect();
        let mut out = x.data().to_vec();
        for (row, &nrm) in out.chunks_mut(w).zip(&norms) {
            row.iter_mut().for_each(|v| *v /= nrm);
        }
        let y = Tensor::new(x.shape(), out)?;
        let saved = y.clone();
        record(self.tape(), "l2_normalize", y, &[self], move |g| {
            let mut gx = g.data().to_vec();
            for ((grow, yrow), &nrm) in gx.chunks_mut(w).zip(saved.data().chunks(w)).zip(&norms) {
                if nrm <= eps {
                    grow.iter_mut().for_each(|v| *v /= eps);
                    continue;
                }
                let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                for (gv, &yv) in grow.iter_mut().zip(yrow) {
                    *gv = (*gv - yv * dot) / nrm;
                }
            }
            Ok(vec![Some(Tensor::new(saved.shape(), gx)?)])
        })
    }

    /// Layer normalization across channels at every spatial location,
    /// followed by the per-channel affine `gamma * x_hat + beta`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> Result<Self> {
        same_tape(&self, &gamma)?;
        same_tape(&self, &beta)?;
        let x = self.value();
        let [n, c, h, w] = x.shape();
        if c == 0 {
            bail!(Spec, "layer norm over zero channels");
        }
        let (gt, bt) = (gamma.value(), beta.value());
        if gt.shape() != [1, c, 1, 1] || bt.shape() != [1, c, 1, 1] {
            bail!(
                Dimension,
                "layer norm affine {:?}/{:?} for {c} channels",
                gt.shape(),
                bt.shape()
            );
        }
        let hw = h * w;
        let xd = x.data();
        let mut xhat = vec![T::zero(); x.numel()];
        let mut rstd = vec![T::zero(); n * hw];
        let inv_c = T::c(1.0 / c as f64);
        let eps = T::c(eps);
        for b in 0..n {
            let base = b * c * hw;
            let mut mean = vec![T::zero(); hw];
            for ch in 0..c {
                for (m, &v) in mean.iter_mut().zip(&xd[base + ch * hw..base + (ch + 1) * hw]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m *= inv_c);
            let mut var = vec![T::zero(); hw];
            for ch in 0..c {
                let plane = &xd[base + ch * hw..base + (ch + 1) * hw];
                for ((s, &v), &m) in var.iter_mut().zip(plane).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            let rs = &mut rstd[b * hw..(b + 1) * hw];
            for (r, s) in rs.iter_mut().zip(&var) {
                *r = T::one() / (*s * inv_c + eps).sqrt();
            }
            for ch in 0..c {
                let plane = &xd[base + ch * hw..base + (ch + 1) * hw];
                let dst = &mut xhat[base + ch * hw..base + (ch + 1) * hw];
                for (((d, &v), &m), &r) in dst.iter_mut().zip(plane).zip(&mean).zip(rs.iter()) {
                    *d = (v - m) * r;
                }
            }
        }
        let xhat = Tensor::new(x.shape(), xhat)?;
        let out = Tensor::from_fn(x.shape(), |b, ch, y, xx| {
            xhat.at(b, ch, y, xx) * gt.data()[ch] + bt.data()[ch]
        });
        record(self.tape(), "layer_norm", out, &[self, gamma, beta], move |g| {
            let gd = g.data();
            let xh = xhat.data();
            let mut ggamma = vec![T::zero(); c];
            let mut gbeta = vec![T::zero(); c];
            let mut gx = vec![T::zero(); xhat.numel()];
            for b in 0..n {
                let base = b * c * hw;
                let mut mean_g = vec![T::zero(); hw];
                let mut mean_gx = vec![T::zero(); hw];
                for ch in 0..c {
                    let gam = gt.data()[ch];
                    let (gp, xp) = (
                        &gd[base + ch * hw..base + (ch + 1) * hw],
                        &xh[base + ch * hw..base + (ch + 1) * hw],
                    );
                    for i in 0..hw {
                        let gh = gp[i] * gam;
                        mean_g[i] += gh;
                        mean_gx[i] += gh * xp[i];
                        ggamma[ch] += gp[i] * xp[i];
                        gbeta[ch] += gp[i];
                    }
                }
                for ch in 0..c {
                    let gam = gt.data()[ch];
                    for i in 0..hw {
                        let idx = base + ch * hw + i;
                        let gh = gd[idx] * gam;
                        gx[idx] = rstd[b * hw + i]
                            * (gh - mean_g[i] * inv_c - xh[idx] * mean_gx[i] * inv_c);
                    }
                }
            }
            Ok(vec![
                Some(Tensor::new(xhat.shape(), gx)?),
                Some(Tensor::new([1, c, 1, 1], ggamma)?),
                Some(Tensor::new([1, c, 1, 1], gbeta)?),
            ])
        })
    }

    /// 2-D cross-correlation with zero padding.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        spec: ConvSpec,
    ) -> Result<Self> {
        same_tape(&self, &weight)?;
        let x = self.value();
        let w = weight.value();
        let b = bias.map(|b| b.value());
        if spec.bias != bias.is_some() {
            bail!(Spec, "conv spec bias flag {} disagrees with bias operand", spec.bias);
        }
        let out = conv::conv2d_forward(&x, &w, b.as_ref(), spec)?;
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let (need_x, need_w, need_b) = (
            self.requires_grad(),
            weight.requires_grad(),
            bias.is_some_and(|b| b.requires_grad()),
        );
        let has_bias = bias.is_some();
        record(self.tape(), "conv2d", out, &parents, move |g| {
            let grads = conv::conv2d_backward(&x, &w, spec, g, need_x, need_w, need_b)?;
            let mut v = vec![grads.input, grads.weight];
            if has_bias {
                v.push(grads.bias);
            }
            Ok(v)
        })
    }

    /// Modulated deformable convolution (see [`crate::kernels::deform`]).
    pub fn deform_conv2d(
        self,
        offsets: Var<'t, T>,
        modulation: Var<'t, T>,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        spec: ConvSpec,
    ) -> Result<Self> {
        same_tape(&self, &offsets)?;
        same_tape(&self, &modulation)?;
        same_tape(&self, &weight)?;
        if spec.bias != bias.is_some() {
            bail!(Spec, "conv spec bias flag {} disagrees with bias operand", spec.bias);
        }
        let (x, off, m, w) = (
            self.value(),
            offsets.value(),
            modulation.value(),
            weight.value(),
        );
        let b = bias.map(|b| b.value());
        let out = deform::deform_conv2d_forward(&x, &off, &m, &w, b.as_ref(), spec)?;
        let mut parents = vec![self, offsets, modulation, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        record(self.tape(), "deform_conv2d", out, &parents, move |g| {
            let d = deform::deform_conv2d_backward(&x, &off, &m, &w, spec, g)?;
            let mut v = vec![Some(d.input), Some(d.offsets), Some(d.modulation), Some(d.weight)];
            if has_bias {
                v.push(Some(d.bias));
            }
            Ok(v)
        })
    }

    /// Resamples to `out_h x out_w`.
    pub fn resize(self, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Self> {
        let x = self.value();
        let [_, _, h, w] = x.shape();
        let out = resize::resize_forward(&x, out_h, out_w, mode)?;
        record(self.tape(), "resize", out, &[self], move |g| {
            Ok(vec![Some(resize::resize_backward(g, h, w, mode)?)])
        })
    }

    /// Resamples by the rational factor `num / den`; target dims must be integral.
    pub fn resize_by(self, num: usize, den: usize, mode: ResizeMode) -> Result<Self> {
        let [_, _, h, w] = self.shape();
        let (oh, ow) = scaled_dims(h, w, num, den)?;
        self.resize(oh, ow, mode)
    }

    pub fn pixel_shuffle(self, r: usize) -> Result<Self> {
        let out = shuffle::pixel_shuffle(&self.value(), r)?;
        record(self.tape(), "pixel_shuffle", out, &[self], move |g| {
            Ok(vec![Some(shuffle::pixel_unshuffle(g, r)?)])
        })
    }

    pub fn pixel_unshuffle(self, r: usize) -> Result<Self> {
        let out = shuffle::pixel_unshuffle(&self.value(), r)?;
        record(self.tape(), "pixel_unshuffle", out, &[self], move |g| {
            Ok(vec![Some(shuffle::pixel_shuffle(g, r)?)])
        })
    }

    /// Mean absolute error against `target` (subgradient 0 at ties).
    pub fn l1_loss(self, target: Var<'t, T>) -> Result<Self> {
        same_tape(&self, &target)?;
        let (p, t) = (self.value(), target.value());
        if p.shape() != t.shape() {
            bail!(Dimension, "l1 loss {:?} vs {:?}", p.shape(), t.shape());
        }
        let count = T::c(p.numel() as f64);
        let loss = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b).abs())
            .sum::<T>()
            / count;
        record(self.tape(), "l1_loss", Tensor::scalar(loss), &[self, target], move |g| {
            let s = g.data()[0] / count;
            let sign = p.zip_map(&t, |a, b| {
                if a > b {
                    s
                } else if a < b {
                    -s
                } else {
                    T::zero()
                }
            })?;
            let neg = sign.map(|v| -v);
            Ok(vec![Some(sign), Some(neg)])
        })
    }
}

/// Concatenates along the channel axis.
pub fn concat_channels<'t, T: Scalar>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let Some(first) = parts.first() else {
        bail!(Contract, "concat of zero tensors");
    };
    let [n, _, h, w] = first.shape();
    let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
    let mut chans = Vec::with_capacity(parts.len());
    for (p, v) in parts.iter().zip(&values) {
        same_tape(first, p)?;
        let [pn, pc, ph, pw] = v.shape();
        if (pn, ph, pw) != (n, h, w) {
            bail!(Dimension, "concat {:?} with {:?}", first.shape(), v.shape());
        }
        chans.push(pc);
    }
    let total: usize = chans.iter().sum();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for (v, &pc) in values.iter().zip(&chans) {
            out.extend_from_slice(&v.data()[b * pc * plane..(b + 1) * pc * plane]);
        }
    }
    let out = Tensor::new([n, total, h, w], out)?;
    record(first.tape(), "concat_channels", out, parts, move |g| {
        let mut grads: Vec<Vec<T>> = chans.iter().map(|&pc| Vec::with_capacity(n * pc * plane)).collect();
        let gd = g.data();
        let mut cursor = 0;
        for _ in 0..n {
            for (dst, &pc) in grads.iter_mut().zip(&chans) {
                dst.extend_from_slice(&gd[cursor..cursor + pc * plane]);
                cursor += pc * plane;
            }
        }
        grads
            .into_iter()
            .zip(&chans)
            .map(|(v, &pc)| Tensor::new([n, pc, h, w], v).map(Some))
            .collect()
    })
}

/// Concatenates along the batch axis.
pub fn concat_batch<'t, T: Scalar>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let Some(first) = parts.first() else {
        bail!(Contract, "concat of zero tensors");
    };
    for p in parts {
        same_tape(first, p)?;
    }
    let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
    let sizes: Vec<usize> = values.iter().map(|v| v.shape()[0]).collect();
    let out = Tensor::cat_batch(&values)?;
    record(first.tape(), "concat_batch", out, parts, move |g| {
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let part = g.batch_slice(start, len);
                start += len;
                part.map(Some)
            })
            .collect()
    })
}

/// Output dims of a rational rescale, rejecting non-integral targets.
pub fn scaled_dims(h: usize, w: usize, num: usize, den: usize) -> Result<(usize, usize)> {
    if num == 0 || den == 0 {
        bail!(Spec, "scale {num}/{den} must be positive");
    }
    if (h * num) % den != 0 || (w * num) % den != 0 {
        bail!(Spec, "scale {num}/{den} of {h}x{w} is not integral");
    }
    Ok((h * num / den, w * num / den))
}
