//! Lowering of a graph to the affine-plus-activation layer lists that the
//! nnet-family writers emit. Batch norm and input permutations are folded
//! into neighbouring affine layers.

use crate::kernels::{Activation, ConvGeom, BN_EPS};
use crate::netgraph::{LayerId, LayerKind, NetworkGraph, Prepared, Step};

use super::ExportError;

/// Row-major `out x inf` affine map followed by an optional ReLU.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Affine {
    pub inf: usize,
    pub out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub relu: bool,
}

impl Affine {
    pub fn identity(n: usize) -> Self {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Self { inf: n, out: n, w, b: vec![0.0; n], relu: false }
    }

    /// `next . self` for a linear `self`.
    pub fn then(&self, next: &Affine) -> Affine {
        debug_assert!(!self.relu && next.inf == self.out);
        let mut w = vec![0.0; next.out * self.inf];
        let mut b = next.b.clone();
        for o in 0..next.out {
            for m in 0..self.out {
                let c = next.w[o * next.inf + m];
                if c != 0.0 {
                    b[o] += c * self.b[m];
                    for k in 0..self.inf {
                        w[o * self.inf + k] += c * self.w[m * self.inf + k];
                    }
                }
            }
        }
        Affine { inf: self.inf, out: next.out, w, b, relu: next.relu }
    }
}

/// Input-side transformation waiting to be absorbed by the next affine
/// layer: `x -> scale * x[src] + shift`, one entry per element.
#[derive(Debug, Clone)]
pub(crate) struct Pending {
    src: Vec<usize>,
    scale: Vec<f64>,
    shift: Vec<f64>,
}

impl Pending {
    pub fn identity(n: usize) -> Self {
        Self { src: (0..n).collect(), scale: vec![1.0; n], shift: vec![0.0; n] }
    }

    fn is_identity(&self) -> bool {
        self.src.iter().enumerate().all(|(i, &s)| i == s) && self.scale.iter().all(|&s| s == 1.0) && self.shift.iter().all(|&s| s == 0.0)
    }

    fn permute(&mut self, map: &[usize]) {
        self.src = map.iter().map(|&m| self.src[m]).collect();
        self.scale = map.iter().map(|&m| self.scale[m]).collect();
        self.shift = map.iter().map(|&m| self.shift[m]).collect();
    }

    fn normalize(&mut self, channels: usize, spatial: usize, stats: &[Vec<f64>; 4]) {
        for c in 0..channels {
            let s = stats[0][c] / (stats[3][c] + BN_EPS).sqrt();
            let t = stats[1][c] - stats[2][c] * s;
            for k in 0..spatial {
                let i = c * spatial + k;
                self.scale[i] *= s;
                self.shift[i] = self.shift[i] * s + t;
            }
        }
    }

    /// Folds into an affine layer consuming these elements.
    fn absorb_dense(self, inf: usize, out: usize, w: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut nw = vec![0.0; out * inf];
        let mut nb = b.to_vec();
        for o in 0..out {
            for j in 0..inf {
                let c = w[o * inf + j];
                nw[o * inf + self.src[j]] += c * self.scale[j];
                nb[o] += c * self.shift[j];
            }
        }
        (nw, nb)
    }
}

pub(crate) fn unsupported(id: LayerId, kind: &str, reason: &str) -> ExportError {
    ExportError::UnsupportedLayer { index: id, kind: kind.to_string(), reason: reason.to_string() }
}

fn relu_flag(id: LayerId, act: Activation, format: &str) -> Result<bool, ExportError> {
    match act {
        Activation::Relu => Ok(true),
        Activation::None => Ok(false),
        a => Err(unsupported(id, &format!("{a:?} activation"), &format!("{format} supports ReLU and linear layers only"))),
    }
}

fn kind_name(k: &LayerKind) -> String {
    format!("{:?}", k.tag())
}

/// Fully-connected chain for nnet. The last layer is linear; every other
/// layer is followed by ReLU.
pub(crate) fn dense_chain(graph: &NetworkGraph) -> Result<(usize, Vec<Affine>), ExportError> {
    let p = Prepared::<f64>::new(graph)?;
    let n_in: usize = graph.input_shape.iter().product();
    let mut pending = Pending::identity(n_in);
    let mut layers: Vec<Affine> = Vec::new();
    for (l, s) in graph.layers.iter().zip(p.steps()) {
        match s {
            Step::Dense { inf, out, w, b, act } => {
                let relu = relu_flag(l.id, *act, "nnet")?;
                let pend = std::mem::replace(&mut pending, Pending::identity(*out));
                let (w, b) = pend.absorb_dense(*inf, *out, w, b);
                let a = Affine { inf: *inf, out: *out, w, b, relu };
                match layers.last() {
                    Some(prev) if !prev.relu => {
                        let f = prev.then(&a);
                        *layers.last_mut().expect("non-empty") = f;
                    }
                    _ => layers.push(a),
                }
            }
            Step::Permute { map } => pending.permute(map),
            Step::Reshape => {}
            Step::Norm { channels, spatial, stats } => pending.normalize(*channels, *spatial, stats),
            _ => return Err(unsupported(l.id, &kind_name(&l.kind), "nnet supports fully-connected networks only")),
        }
    }
    if !pending.is_identity() {
        let last = graph.output_layer().map(|l| l.id).unwrap_or(LayerId::INPUT);
        return Err(unsupported(last, "trailing reshaping", "network must end with a fully-connected layer"));
    }
    if layers.last().is_some_and(|l| l.relu) {
        let n = layers.last().map(|l| l.out).unwrap_or(0);
        layers.push(Affine::identity(n));
    }
    Ok((n_in, layers))
}

/// Layer of the extended format.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum EnnLayer {
    Conv { geom: ConvGeom, w: Vec<f64>, b: Vec<f64>, relu: bool },
    Dense(Affine),
}

/// Conv/FC sequence for the extended format. Batch norm folds into the
/// following layer (a convolution only when it has no padding) or into a
/// preceding linear layer; input permutations fold into the next
/// fully-connected layer.
pub(crate) fn conv_chain(graph: &NetworkGraph) -> Result<(Vec<usize>, Vec<EnnLayer>), ExportError> {
    let p = Prepared::<f64>::new(graph)?;
    let mut cur = graph.input_shape.clone();
    let n_in: usize = cur.iter().product();
    let mut pending = Pending::identity(n_in);
    let mut layers: Vec<EnnLayer> = Vec::new();
    for (l, s) in graph.layers.iter().zip(p.steps()) {
        let (next, _) = crate::netgraph::kind_output_shape(l.id, &l.kind, &cur)?;
        match s {
            Step::Dense { inf, out, w, b, act } => {
                let relu = relu_flag(l.id, *act, "extended nnet")?;
                let pend = std::mem::replace(&mut pending, Pending::identity(*out));
                let (w, b) = pend.absorb_dense(*inf, *out, w, b);
                layers.push(EnnLayer::Dense(Affine { inf: *inf, out: *out, w, b, relu }));
            }
            Step::Conv { geom, w, b, act } => {
                let relu = relu_flag(l.id, *act, "extended nnet")?;
                let n = numel(&cur);
                let pend = std::mem::replace(&mut pending, Pending::identity(numel(&next)));
                let (w, b) = fold_into_conv(pend, geom, w, b, n).ok_or_else(|| {
                    unsupported(l.id, "Convolution", "a preceding permutation or padded normalization cannot be folded")
                })?;
                layers.push(EnnLayer::Conv { geom: *geom, w, b, relu });
            }
            Step::Norm { channels, spatial, stats } => match layers.last_mut() {
                Some(EnnLayer::Conv { relu: false, w, b, geom }) if pending.is_identity() => {
                    fold_norm_rows(w, b, geom.out_channels, stats);
                }
                Some(EnnLayer::Dense(a)) if !a.relu && pending.is_identity() => {
                    fold_norm_rows(&mut a.w, &mut a.b, a.out, stats);
                }
                _ => pending.normalize(*channels, *spatial, stats),
            },
            Step::Permute { map } => pending.permute(map),
            Step::Reshape => {}
            _ => return Err(unsupported(l.id, &kind_name(&l.kind), "extended nnet supports convolutional and fully-connected layers")),
        }
        cur = next;
    }
    if !pending.is_identity() {
        let last = graph.output_layer().map(|l| l.id).unwrap_or(LayerId::INPUT);
        return Err(unsupported(last, "trailing normalization", "cannot be folded"));
    }
    Ok((graph.input_shape.clone(), layers))
}

fn numel(d: &[usize]) -> usize {
    d.iter().product()
}

/// Per-output-row scale and shift.
fn fold_norm_rows(w: &mut [f64], b: &mut [f64], rows: usize, stats: &[Vec<f64>; 4]) {
    let per = w.len() / rows;
    for r in 0..rows {
        let s = stats[0][r] / (stats[3][r] + BN_EPS).sqrt();
        let t = stats[1][r] - stats[2][r] * s;
        w[r * per..(r + 1) * per].iter_mut().for_each(|v| *v *= s);
        b[r] = b[r] * s + t;
    }
}

fn fold_into_conv(p: Pending, g: &ConvGeom, w: &[f64], b: &[f64], n: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    if p.is_identity() {
        return Some((w.to_vec(), b.to_vec()));
    }
    if p.src.iter().enumerate().any(|(i, &s)| i != s) || g.padding != [0, 0] {
        return None;
    }
    // per-channel scale/shift only
    let spatial = n / g.in_channels;
    let mut cs = Vec::with_capacity(g.in_channels);
    for c in 0..g.in_channels {
        let (s, t) = (p.scale[c * spatial], p.shift[c * spatial]);
        if (0..spatial).any(|k| p.scale[c * spatial + k] != s || p.shift[c * spatial + k] != t) {
            return None;
        }
        cs.push((s, t));
    }
    let kk = g.kernel[0] * g.kernel[1];
    let per = g.in_channels * kk;
    let mut nw = w.to_vec();
    let mut nb = b.to_vec();
    for o in 0..g.out_channels {
        for (c, (s, t)) in cs.iter().enumerate() {
            for k in 0..kk {
                let i = o * per + c * kk + k;
                nb[o] += w[i] * t;
                nw[i] = w[i] * s;
            }
        }
    }
    Some((nw, nb))
}
