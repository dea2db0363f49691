use super::{infer_shapes, Activation, Layer, LayerId, LayerKind, NetError, NetworkGraph, Params, Shortcut};
use crate::kernels::{self, ConvGeom, PoolGeom};
use crate::tensor::{numel, Array, Scalar, Tensor};

/// A graph with parameters cast to `T` and geometry resolved, ready to
/// evaluate batches.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    input: Vec<usize>,
    output: Vec<usize>,
    steps: Vec<Step<T>>,
}

#[derive(Debug, Clone)]
pub(crate) enum Step<T> {
    Dense { inf: usize, out: usize, w: Vec<T>, b: Vec<T>, act: Activation },
    Conv { geom: ConvGeom, w: Vec<T>, b: Vec<T>, act: Activation },
    Pool { geom: PoolGeom },
    Norm { channels: usize, spatial: usize, stats: [Vec<T>; 4] },
    Permute { map: Vec<usize> },
    Reshape,
    Residual { path: Vec<Step<T>>, shortcut: Option<Box<Step<T>>> },
}

fn cast<T: Scalar>(t: &Tensor) -> Vec<T> {
    t.data().iter().map(|&x| T::from_f32(x)).collect()
}

fn params_of(id: LayerId, p: &Option<Params>) -> Result<&Params, NetError> {
    p.as_ref().ok_or(NetError::MissingWeights(id))
}

pub(crate) fn prepare_step<T: Scalar>(l: &Layer, input: &[usize]) -> Result<(Step<T>, Vec<usize>), NetError> {
    let (out, _) = super::kind_output_shape(l.id, &l.kind, input)?;
    let step = match &l.kind {
        LayerKind::FullyConnected { in_features, out_features, activation } => {
            let p = params_of(l.id, &l.params)?;
            Step::Dense { inf: *in_features, out: *out_features, w: cast(&p.0[0]), b: cast(&p.0[1]), act: *activation }
        }
        LayerKind::Convolution(c) => {
            let p = params_of(l.id, &l.params)?;
            Step::Conv { geom: conv_geom(c, input), w: cast(&p.0[0]), b: cast(&p.0[1]), act: c.activation }
        }
        LayerKind::MaxPool { kernel, stride } => Step::Pool {
            geom: PoolGeom { channels: input[0], in_h: input[1], in_w: input[2], kernel: *kernel, stride: *stride },
        },
        LayerKind::BatchNorm { channels } => {
            let p = params_of(l.id, &l.params)?;
            Step::Norm {
                channels: *channels,
                spatial: numel(&input[1..]),
                stats: [cast(&p.0[0]), cast(&p.0[1]), cast(&p.0[2]), cast(&p.0[3])],
            }
        }
        LayerKind::Flatten => Step::Reshape,
        LayerKind::Transpose { perm } => Step::Permute { map: kernels::transpose_map(input, perm) },
        LayerKind::Residual(b) => {
            let mut cur = input.to_vec();
            let mut path = Vec::with_capacity(b.path.len());
            for inner in &b.path {
                let (s, o) = prepare_step(inner, &cur)?;
                path.push(s);
                cur = o;
            }
            let shortcut = match &b.shortcut {
                Shortcut::Identity => None,
                Shortcut::Projection { conv, params } => {
                    let p = params_of(l.id, params)?;
                    Some(Box::new(Step::Conv {
                        geom: conv_geom(conv, input),
                        w: cast(&p.0[0]),
                        b: cast(&p.0[1]),
                        act: conv.activation,
                    }))
                }
            };
            Step::Residual { path, shortcut }
        }
    };
    Ok((step, out))
}

pub(crate) fn conv_geom(c: &super::ConvSpec, input: &[usize]) -> ConvGeom {
    ConvGeom {
        in_channels: input[0],
        in_h: input[1],
        in_w: input[2],
        out_channels: c.out_channels,
        kernel: c.kernel,
        stride: c.stride,
        padding: c.padding,
    }
}

fn run_step<T: Scalar>(step: &Step<T>, x: Vec<T>, n: usize) -> Vec<T> {
    match step {
        Step::Dense { inf, out, w, b, act } => {
            let mut y = kernels::dense(&x, n, *inf, w, b, *out);
            kernels::activate(&mut y, *act);
            y
        }
        Step::Conv { geom, w, b, act } => {
            let mut y = kernels::conv2d(&x, n, geom, w, b);
            kernels::activate(&mut y, *act);
            y
        }
        Step::Pool { geom } => kernels::maxpool(&x, n, geom).0,
        Step::Norm { channels, spatial, stats } => {
            kernels::batchnorm(&x, n, *channels, *spatial, [&stats[0], &stats[1], &stats[2], &stats[3]])
        }
        Step::Permute { map } => kernels::gather(&x, n, map),
        Step::Reshape => x,
        Step::Residual { path, shortcut } => {
            let short = match shortcut {
                None => x.clone(),
                Some(s) => run_step(s, x.clone(), n),
            };
            let mut y = x;
            for s in path {
                y = run_step(s, y, n);
            }
            y.iter_mut().zip(short).for_each(|(a, b)| *a = *a + b);
            y
        }
    }
}

impl<T: Scalar> Prepared<T> {
    pub fn new(graph: &NetworkGraph) -> Result<Self, NetError> {
        let mut cur = graph.input_shape.clone();
        let mut steps = Vec::with_capacity(graph.layers.len());
        for l in &graph.layers {
            let (s, o) = prepare_step(l, &cur)?;
            steps.push(s);
            cur = o;
        }
        Ok(Self { input: graph.input_shape.clone(), output: cur, steps })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input
    }

    pub fn output_dims(&self) -> &[usize] {
        &self.output
    }

    pub(crate) fn steps(&self) -> &[Step<T>] {
        &self.steps
    }

    /// Evaluates a batch `[N, ...input]`, returning `[N, ...output]`.
    pub fn run(&self, batch: &Array<T>) -> Result<Array<T>, NetError> {
        if batch.row_dims() != self.input.as_slice() {
            return Err(NetError::Shape {
                index: LayerId::INPUT,
                expected: format!("[N, {:?}]", self.input),
                actual: format!("{:?}", batch.dims()),
            });
        }
        let n = batch.rows();
        let mut x = batch.data().to_vec();
        for s in &self.steps {
            x = run_step(s, x, n);
        }
        let mut dims = vec![n];
        dims.extend_from_slice(&self.output);
        Ok(Array::new(dims, x).expect("output length follows shape inference"))
    }

    /// Evaluates a single sample with the input dims (no batch axis).
    pub fn run_one(&self, x: &[T]) -> Vec<T> {
        let mut v = x.to_vec();
        for s in &self.steps {
            v = run_step(s, v, 1);
        }
        v
    }
}

/// Evaluates a batch `[N, ...input]` in precision `T`.
pub fn forward_batch<T: Scalar>(graph: &NetworkGraph, batch: &Array<T>) -> Result<Array<T>, NetError> {
    Prepared::new(graph)?.run(batch)
}

/// Evaluates one sample whose dims equal the graph's input shape.
pub fn forward(graph: &NetworkGraph, input: &Tensor) -> Result<Tensor, NetError> {
    if input.dims() != graph.input_shape.as_slice() {
        return Err(NetError::Shape {
            index: LayerId::INPUT,
            expected: format!("{:?}", graph.input_shape),
            actual: format!("{:?}", input.dims()),
        });
    }
    let table = infer_shapes(graph)?;
    let p = Prepared::<f32>::new(graph)?;
    let out = p.run_one(input.data());
    Ok(Tensor::new(table.output_dims().to_vec(), out).expect("output length follows shape inference"))
}
