//! Batched numerical kernels shared by inference, interval-free training and
//! the autodiff tape. Batches are row-major with the sample axis first.
//!
//! Reductions over the batch (weight gradients) are split per output unit and
//! summed in sample order, so results are identical in both exec modes.

use crate::exec;
use crate::tensor::Scalar;

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        let oh = (self.in_h + 2 * self.padding[0] - self.kernel[0]) / self.stride[0] + 1;
        let ow = (self.in_w + 2 * self.padding[1] - self.kernel[1]) / self.stride[1] + 1;
        (oh, ow)
    }

    fn in_len(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    fn out_len(&self) -> usize {
        let (oh, ow) = self.out_hw();
        self.out_channels * oh * ow
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel[0] * self.kernel[1]
    }
}

pub fn dense<T: Scalar>(x: &[T], n: usize, inf: usize, w: &[T], b: &[T], out: usize) -> Vec<T> {
    debug_assert_eq!(x.len(), n * inf);
    let mut y = vec![T::zero(); n * out];
    exec::for_each_chunk(&mut y, out, inf * out, |i, yr| {
        let xr = &x[i * inf..(i + 1) * inf];
        for (o, yo) in yr.iter_mut().enumerate() {
            let wr = &w[o * inf..(o + 1) * inf];
            let mut s = b[o];
            for (wk, xk) in wr.iter().zip(xr) {
                s = s + *wk * *xk;
            }
            *yo = s;
        }
    });
    y
}

/// Returns `(dx, dw, db)`.
pub fn dense_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    n: usize,
    inf: usize,
    w: &[T],
    out: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); n * inf];
    exec::for_each_chunk(&mut dx, inf, inf * out, |i, dxr| {
        let dyr = &dy[i * out..(i + 1) * out];
        for (o, &g) in dyr.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            let wr = &w[o * inf..(o + 1) * inf];
            for (d, wk) in dxr.iter_mut().zip(wr) {
                *d = *d + g * *wk;
            }
        }
    });
    let mut dw = vec![T::zero(); out * inf];
    exec::for_each_chunk(&mut dw, inf, n * inf, |o, dwr| {
        for s in 0..n {
            let g = dy[s * out + o];
            if g == T::zero() {
                continue;
            }
            let xr = &x[s * inf..(s + 1) * inf];
            for (d, xk) in dwr.iter_mut().zip(xr) {
                *d = *d + g * *xk;
            }
        }
    });
    let db = (0..out).map(|o| (0..n).fold(T::zero(), |acc, s| acc + dy[s * out + o])).collect();
    (dx, dw, db)
}

pub fn conv2d<T: Scalar>(x: &[T], n: usize, g: &ConvGeom, w: &[T], b: &[T]) -> Vec<T> {
    let (oh, ow) = g.out_hw();
    let (il, ol) = (g.in_len(), g.out_len());
    let mut y = vec![T::zero(); n * ol];
    let [kh, kw] = g.kernel;
    let [sh, sw] = g.stride;
    let [ph, pw] = g.padding;
    exec::for_each_chunk(&mut y, ol, ol * g.patch(), |s, yr| {
        let xs = &x[s * il..(s + 1) * il];
        for o in 0..g.out_channels {
            let wo = &w[o * g.patch()..(o + 1) * g.patch()];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for c in 0..g.in_channels {
                        for ky in 0..kh {
                            let iy = (oy * sh + ky) as isize - ph as isize;
                            if iy < 0 || iy >= g.in_h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if ix < 0 || ix >= g.in_w as isize {
                                    continue;
                                }
                                let xv = xs[(c * g.in_h + iy as usize) * g.in_w + ix as usize];
                                acc = acc + wo[(c * kh + ky) * kw + kx] * xv;
                            }
                        }
                    }
                    yr[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
    });
    y
}

/// Returns `(dx, dw, db)`.
pub fn conv2d_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    n: usize,
    g: &ConvGeom,
    w: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (oh, ow) = g.out_hw();
    let (il, ol, pl) = (g.in_len(), g.out_len(), g.patch());
    let [kh, kw] = g.kernel;
    let [sh, sw] = g.stride;
    let [ph, pw] = g.padding;
    // Visits every (output position, kernel tap) pair that lands inside the input.
    let taps = |oy: usize, ox: usize, f: &mut dyn FnMut(usize, usize)| {
        for c in 0..g.in_channels {
            for ky in 0..kh {
                let iy = (oy * sh + ky) as isize - ph as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * sw + kx) as isize - pw as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    f((c * kh + ky) * kw + kx, (c * g.in_h + iy as usize) * g.in_w + ix as usize);
                }
            }
        }
    };
    let mut dx = vec![T::zero(); n * il];
    exec::for_each_chunk(&mut dx, il, ol * pl, |s, dxs| {
        let dys = &dy[s * ol..(s + 1) * ol];
        for o in 0..g.out_channels {
            let wo = &w[o * pl..(o + 1) * pl];
            for oy in 0..oh {
                for ox in 0..ow {
                    let gy = dys[(o * oh + oy) * ow + ox];
                    if gy == T::zero() {
                        continue;
                    }
                    taps(oy, ox, &mut |wi, xi| dxs[xi] = dxs[xi] + gy * wo[wi]);
                }
            }
        }
    });
    let mut dw = vec![T::zero(); g.out_channels * pl];
    exec::for_each_chunk(&mut dw, pl, n * oh * ow * pl, |o, dwo| {
        for s in 0..n {
            let xs = &x[s * il..(s + 1) * il];
            let dys = &dy[s * ol..(s + 1) * ol];
            for oy in 0..oh {
                for ox in 0..ow {
                    let gy = dys[(o * oh + oy) * ow + ox];
                    if gy == T::zero() {
                        continue;
                    }
                    taps(oy, ox, &mut |wi, xi| dwo[wi] = dwo[wi] + gy * xs[xi]);
                }
            }
        }
    });
    let db = (0..g.out_channels)
        .map(|o| {
            let mut acc = T::zero();
            for s in 0..n {
                let base = s * ol + o * oh * ow;
                for v in &dy[base..base + oh * ow] {
                    acc = acc + *v;
                }
            }
            acc
        })
        .collect();
    (dx, dw, db)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
}

impl PoolGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        ((self.in_h - self.kernel[0]) / self.stride[0] + 1, (self.in_w - self.kernel[1]) / self.stride[1] + 1)
    }
}

/// Returns the pooled batch and, per output element, the in-sample index of the max.
pub fn maxpool<T: Scalar>(x: &[T], n: usize, g: &PoolGeom) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = g.out_hw();
    let il = g.channels * g.in_h * g.in_w;
    let ol = g.channels * oh * ow;
    let per_sample: Vec<(Vec<T>, Vec<usize>)> = exec::map_indexed(n, ol * g.kernel[0] * g.kernel[1], |s| {
        let xs = &x[s * il..(s + 1) * il];
        let mut y = Vec::with_capacity(ol);
        let mut arg = Vec::with_capacity(ol);
        for c in 0..g.channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut bi = 0;
                    for ky in 0..g.kernel[0] {
                        for kx in 0..g.kernel[1] {
                            let i = (c * g.in_h + oy * g.stride[0] + ky) * g.in_w + ox * g.stride[1] + kx;
                            if xs[i] > best || (ky == 0 && kx == 0) {
                                best = xs[i];
                                bi = i;
                            }
                        }
                    }
                    y.push(best);
                    arg.push(bi);
                }
            }
        }
        (y, arg)
    });
    let mut y = Vec::with_capacity(n * ol);
    let mut arg = Vec::with_capacity(n * ol);
    for (ys, ars) in per_sample {
        y.extend(ys);
        arg.extend(ars);
    }
    (y, arg)
}

pub fn maxpool_backward<T: Scalar>(dy: &[T], argmax: &[usize], n: usize, in_len: usize) -> Vec<T> {
    let ol = if n == 0 { 0 } else { dy.len() / n };
    let mut dx = vec![T::zero(); n * in_len];
    exec::for_each_chunk(&mut dx, in_len, ol, |s, dxs| {
        for j in 0..ol {
            let k = s * ol + j;
            dxs[argmax[k]] = dxs[argmax[k]] + dy[k];
        }
    });
    dx
}

/// Inference-mode batch normalization over axis 0 of each sample.
/// `stats` holds gamma, beta, running mean, running variance.
pub fn batchnorm<T: Scalar>(x: &[T], n: usize, channels: usize, spatial: usize, stats: [&[T]; 4]) -> Vec<T> {
    let [gamma, beta, mean, var] = stats;
    let eps = T::from_f64(BN_EPS);
    let scale: Vec<T> = (0..channels).map(|c| gamma[c] / (var[c] + eps).sqrt()).collect();
    let sl = channels * spatial;
    let mut y = vec![T::zero(); n * sl];
    exec::for_each_chunk(&mut y, sl, sl, |s, ys| {
        for c in 0..channels {
            for k in 0..spatial {
                let i = c * spatial + k;
                ys[i] = (x[s * sl + i] - mean[c]) * scale[c] + beta[c];
            }
        }
    });
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    n: usize,
    channels: usize,
    spatial: usize,
    stats: [&[T]; 4],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [gamma, _, mean, var] = stats;
    let eps = T::from_f64(BN_EPS);
    let inv: Vec<T> = (0..channels).map(|c| T::one() / (var[c] + eps).sqrt()).collect();
    let sl = channels * spatial;
    let mut dx = vec![T::zero(); n * sl];
    exec::for_each_chunk(&mut dx, sl, sl, |s, dxs| {
        for c in 0..channels {
            for k in 0..spatial {
                let i = c * spatial + k;
                dxs[i] = dy[s * sl + i] * gamma[c] * inv[c];
            }
        }
    });
    let mut dg = vec![T::zero(); channels];
    let mut db = vec![T::zero(); channels];
    for c in 0..channels {
        for s in 0..n {
            for k in 0..spatial {
                let i = s * sl + c * spatial + k;
                dg[c] = dg[c] + dy[i] * (x[i] - mean[c]) * inv[c];
                db[c] = db[c] + dy[i];
            }
        }
    }
    (dx, dg, db)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    None,
}

impl Activation {
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => {
                if v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => T::one() / (T::one() + (-v).exp()),
            Activation::Tanh => v.tanh(),
            Activation::None => v,
        }
    }

    /// Derivative expressed through the activation's output. ReLU uses 0 at 0.
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
            Activation::None => T::one(),
        }
    }
}

pub fn activate<T: Scalar>(x: &mut [T], act: Activation) {
    if act != Activation::None {
        x.iter_mut().for_each(|v| *v = act.apply(*v));
    }
}

/// Row-major index permutation: output axis `j` is input axis `perm[j]`.
/// Returns, for each output element, its source offset in the input sample.
pub fn transpose_map(in_dims: &[usize], perm: &[usize]) -> Vec<usize> {
    let rank = in_dims.len();
    let mut in_strides = vec![1usize; rank];
    for a in (0..rank.saturating_sub(1)).rev() {
        in_strides[a] = in_strides[a + 1] * in_dims[a + 1];
    }
    let out_dims: Vec<usize> = perm.iter().map(|&p| in_dims[p]).collect();
    let total: usize = in_dims.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        map.push((0..rank).map(|j| idx[j] * in_strides[perm[j]]).sum());
        for a in (0..rank).rev() {
            idx[a] += 1;
            if idx[a] < out_dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    map
}

pub fn gather<T: Scalar>(x: &[T], n: usize, map: &[usize]) -> Vec<T> {
    let l = map.len();
    let mut y = vec![T::zero(); n * l];
    exec::for_each_chunk(&mut y, l, l, |s, ys| {
        for (j, &src) in map.iter().enumerate() {
            ys[j] = x[s * l + src];
        }
    });
    y
}

pub fn scatter<T: Scalar>(dy: &[T], n: usize, map: &[usize]) -> Vec<T> {
    let l = map.len();
    let mut dx = vec![T::zero(); n * l];
    exec::for_each_chunk(&mut dx, l, l, |s, dxs| {
        for (j, &src) in map.iter().enumerate() {
            dxs[src] = dy[s * l + j];
        }
    });
    dx
}
