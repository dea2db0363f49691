//! Interval bound propagation in f64 over the stored weights.

use crate::kernels::{self, Activation, ConvGeom, PoolGeom};
use crate::netgraph::{NetError, NetworkGraph, Prepared, Step};

use super::property::{IntervalBox, LinearForm};

#[derive(Debug, Clone)]
enum IStep {
    Dense { inf: usize, out: usize, w: Vec<f64>, b: Vec<f64>, act: Activation },
    Conv { geom: ConvGeom, pos: Vec<f64>, neg: Vec<f64>, b: Vec<f64>, act: Activation },
    Pool { geom: PoolGeom },
    Norm { channels: usize, spatial: usize, stats: [Vec<f64>; 4] },
    Permute { map: Vec<usize> },
    Reshape,
    Residual { path: Vec<IStep>, shortcut: Option<Box<IStep>> },
}

fn lower(s: &Step<f64>) -> IStep {
    match s {
        Step::Dense { inf, out, w, b, act } => IStep::Dense { inf: *inf, out: *out, w: w.clone(), b: b.clone(), act: *act },
        Step::Conv { geom, w, b, act } => IStep::Conv {
            geom: *geom,
            pos: w.iter().map(|v| v.max(0.0)).collect(),
            neg: w.iter().map(|v| v.min(0.0)).collect(),
            b: b.clone(),
            act: *act,
        },
        Step::Pool { geom } => IStep::Pool { geom: *geom },
        Step::Norm { channels, spatial, stats } => IStep::Norm { channels: *channels, spatial: *spatial, stats: stats.clone() },
        Step::Permute { map } => IStep::Permute { map: map.clone() },
        Step::Reshape => IStep::Reshape,
        Step::Residual { path, shortcut } => IStep::Residual {
            path: path.iter().map(lower).collect(),
            shortcut: shortcut.as_ref().map(|s| Box::new(lower(s))),
        },
    }
}

fn activate(lo: &mut [f64], hi: &mut [f64], act: Activation) {
    // every supported activation is monotone non-decreasing
    kernels::activate(lo, act);
    kernels::activate(hi, act);
}

fn dense_bounds(lo: &[f64], hi: &[f64], inf: usize, out: usize, w: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut ylo = Vec::with_capacity(out);
    let mut yhi = Vec::with_capacity(out);
    for o in 0..out {
        let row = &w[o * inf..(o + 1) * inf];
        let (mut l, mut h) = (b[o], b[o]);
        for k in 0..inf {
            let wk = row[k];
            if wk >= 0.0 {
                l += wk * lo[k];
                h += wk * hi[k];
            } else {
                l += wk * hi[k];
                h += wk * lo[k];
            }
        }
        ylo.push(l);
        yhi.push(h);
    }
    (ylo, yhi)
}

fn run(step: &IStep, lo: Vec<f64>, hi: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    match step {
        IStep::Dense { inf, out, w, b, act } => {
            let (mut l, mut h) = dense_bounds(&lo, &hi, *inf, *out, w, b);
            activate(&mut l, &mut h, *act);
            (l, h)
        }
        IStep::Conv { geom, pos, neg, b, act } => {
            let zero = vec![0.0; b.len()];
            let mut l = kernels::conv2d(&lo, 1, geom, pos, b);
            let mut h = kernels::conv2d(&hi, 1, geom, pos, b);
            let ln = kernels::conv2d(&hi, 1, geom, neg, &zero);
            let hn = kernels::conv2d(&lo, 1, geom, neg, &zero);
            l.iter_mut().zip(ln).for_each(|(a, v)| *a += v);
            h.iter_mut().zip(hn).for_each(|(a, v)| *a += v);
            activate(&mut l, &mut h, *act);
            (l, h)
        }
        IStep::Pool { geom } => (kernels::maxpool(&lo, 1, geom).0, kernels::maxpool(&hi, 1, geom).0),
        IStep::Norm { channels, spatial, stats } => {
            let st = [&stats[0][..], &stats[1][..], &stats[2][..], &stats[3][..]];
            let a = kernels::batchnorm(&lo, 1, *channels, *spatial, st);
            let b = kernels::batchnorm(&hi, 1, *channels, *spatial, st);
            a.into_iter().zip(b).map(|(x, y)| (x.min(y), x.max(y))).unzip()
        }
        IStep::Permute { map } => (kernels::gather(&lo, 1, map), kernels::gather(&hi, 1, map)),
        IStep::Reshape => (lo, hi),
        IStep::Residual { path, shortcut } => {
            let (sl, sh) = match shortcut {
                None => (lo.clone(), hi.clone()),
                Some(s) => run(s, lo.clone(), hi.clone()),
            };
            let (mut l, mut h) = (lo, hi);
            for s in path {
                (l, h) = run(s, l, h);
            }
            l.iter_mut().zip(sl).for_each(|(a, v)| *a += v);
            h.iter_mut().zip(sh).for_each(|(a, v)| *a += v);
            (l, h)
        }
    }
}

/// Composes each linear dense layer with the dense layer after it, so that
/// chains of affine layers are bounded as one map (interval arithmetic
/// would otherwise lose the correlation between the intermediate units).
fn fuse_linear(steps: Vec<IStep>) -> Vec<IStep> {
    let mut out: Vec<IStep> = Vec::with_capacity(steps.len());
    for s in steps {
        match (out.last_mut(), s) {
            (Some(IStep::Dense { inf, out: mid, w, b, act: act1 @ Activation::None }), IStep::Dense { out: o2, w: w2, b: b2, act, .. }) => {
                let mut fw = vec![0.0; o2 * *inf];
                let mut fb = b2;
                for o in 0..o2 {
                    for m in 0..*mid {
                        let c = w2[o * *mid + m];
                        if c != 0.0 {
                            fb[o] += c * b[m];
                            for k in 0..*inf {
                                fw[o * *inf + k] += c * w[m * *inf + k];
                            }
                        }
                    }
                }
                *w = fw;
                *b = fb;
                *mid = o2;
                *act1 = act;
            }
            (_, s) => out.push(s),
        }
    }
    out
}

/// A graph lowered for repeated interval evaluation.
#[derive(Debug, Clone)]
pub struct IbpNetwork {
    steps: Vec<IStep>,
    input: Vec<usize>,
    output: Vec<usize>,
}

impl IbpNetwork {
    pub fn new(graph: &NetworkGraph) -> Result<Self, NetError> {
        let p = Prepared::<f64>::new(graph)?;
        let steps = fuse_linear(p.steps().iter().map(lower).collect());
        Ok(Self { steps, input: p.input_dims().to_vec(), output: p.output_dims().to_vec() })
    }

    pub fn output_dims(&self) -> &[usize] {
        &self.output
    }

    pub fn bounds(&self, input: &IntervalBox) -> IntervalBox {
        let (mut l, mut h) = (input.lo.clone(), input.hi.clone());
        for s in &self.steps {
            (l, h) = run(s, l, h);
        }
        IntervalBox { dims: self.output.clone(), lo: l, hi: h }
    }

    /// Bounds `[lo, hi]` of each form over the outputs reachable from
    /// `input`. A linear final layer is folded into the forms first, which
    /// is tighter than bounding the outputs and then the forms.
    pub fn form_bounds(&self, input: &IntervalBox, forms: &[LinearForm]) -> Vec<(f64, f64)> {
        let (mut l, mut h) = (input.lo.clone(), input.hi.clone());
        let last = self.steps.len() - 1;
        for s in &self.steps[..last] {
            (l, h) = run(s, l, h);
        }
        let folded;
        let (l, h, forms) = match &self.steps[last] {
            IStep::Dense { inf, out, w, b, act: Activation::None } => {
                folded = forms
                    .iter()
                    .map(|f| {
                        let mut a = vec![0.0; *inf];
                        let mut c = f.b;
                        for o in 0..*out {
                            if f.a[o] != 0.0 {
                                c += f.a[o] * b[o];
                                for k in 0..*inf {
                                    a[k] += f.a[o] * w[o * inf + k];
                                }
                            }
                        }
                        LinearForm { a, b: c }
                    })
                    .collect::<Vec<_>>();
                (l, h, &folded[..])
            }
            s => {
                let (l, h) = run(s, l, h);
                (l, h, forms)
            }
        };
        forms
            .iter()
            .map(|f| {
                let (mut lo, mut hi) = (f.b, f.b);
                for k in 0..f.a.len() {
                    let a = f.a[k];
                    if a >= 0.0 {
                        lo += a * l[k];
                        hi += a * h[k];
                    } else {
                        lo += a * h[k];
                        hi += a * l[k];
                    }
                }
                (lo, hi)
            })
            .collect()
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input
    }
}

/// Sound output box of `graph` over `input`.
pub fn ibp_bounds(graph: &NetworkGraph, input: &IntervalBox) -> Result<IntervalBox, NetError> {
    let net = IbpNetwork::new(graph)?;
    if input.dims != net.input {
        return Err(NetError::Shape {
            index: crate::netgraph::LayerId::INPUT,
            expected: format!("{:?}", net.input),
            actual: format!("{:?}", input.dims),
        });
    }
    Ok(net.bounds(input))
}
