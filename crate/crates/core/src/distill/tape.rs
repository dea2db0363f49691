//! Layer-granular reverse-mode differentiation.
//!
//! [`Trainable`] flattens a graph's parameters into slots (in the order of
//! [`NetworkGraph::params`]) and records every intermediate activation of a
//! forward pass so that [`Trainable::backward`] can replay the layers in
//! reverse.

use crate::kernels::{self, Activation, ConvGeom, PoolGeom};
use crate::netgraph::{kind_output_shape, Layer, LayerKind, NetError, NetworkGraph, Shortcut};
use crate::tensor::{numel, Scalar, Tensor};

#[derive(Debug, Clone)]
enum Node {
    Dense { inf: usize, out: usize, w: usize, b: usize, act: Activation },
    Conv { geom: ConvGeom, w: usize, b: usize, act: Activation },
    Pool { geom: PoolGeom, in_len: usize },
    Norm { channels: usize, spatial: usize, slots: [usize; 4] },
    Permute { map: Vec<usize> },
    Reshape,
    Residual { path: Vec<Node>, shortcut: Option<Box<Node>> },
}

/// What a node saw and produced during the forward pass.
#[derive(Debug)]
enum Saved<T> {
    /// Input and post-activation output of an affine node.
    Affine { x: Vec<T>, y: Vec<T> },
    Pool { argmax: Vec<usize> },
    Norm { x: Vec<T> },
    Nothing,
    Residual { path: Vec<Saved<T>>, shortcut: Option<Box<Saved<T>>> },
}

/// Recorded forward pass of one batch.
#[derive(Debug)]
pub struct Record<T> {
    n: usize,
    saved: Vec<Saved<T>>,
    pub output: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Trainable<T> {
    nodes: Vec<Node>,
    pub params: Vec<Vec<T>>,
    pub trainable: Vec<bool>,
    dims: Vec<Vec<usize>>,
    input: Vec<usize>,
    output: Vec<usize>,
}

struct Builder<T> {
    params: Vec<Vec<T>>,
    trainable: Vec<bool>,
    dims: Vec<Vec<usize>>,
}

impl<T: Scalar> Builder<T> {
    fn slot(&mut self, t: &Tensor, trainable: bool) -> usize {
        self.params.push(t.data().iter().map(|&v| T::from_f32(v)).collect());
        self.trainable.push(trainable);
        self.dims.push(t.dims().to_vec());
        self.params.len() - 1
    }

    fn node(&mut self, l: &Layer, input: &[usize]) -> Result<(Node, Vec<usize>), NetError> {
        let (out, _) = kind_output_shape(l.id, &l.kind, input)?;
        let need = || l.params.as_ref().ok_or(NetError::MissingWeights(l.id));
        let node = match &l.kind {
            LayerKind::FullyConnected { in_features, out_features, activation } => {
                let p = need()?;
                let (w, b) = (self.slot(&p.0[0], true), self.slot(&p.0[1], true));
                Node::Dense { inf: *in_features, out: *out_features, w, b, act: *activation }
            }
            LayerKind::Convolution(c) => {
                let p = need()?;
                let (w, b) = (self.slot(&p.0[0], true), self.slot(&p.0[1], true));
                Node::Conv { geom: crate::netgraph::conv_geom(c, input), w, b, act: c.activation }
            }
            LayerKind::MaxPool { kernel, stride } => Node::Pool {
                geom: PoolGeom { channels: input[0], in_h: input[1], in_w: input[2], kernel: *kernel, stride: *stride },
                in_len: numel(input),
            },
            LayerKind::BatchNorm { channels } => {
                let p = need()?;
                let slots = [0, 1, 2, 3].map(|k| self.slot(&p.0[k], k < 2));
                Node::Norm { channels: *channels, spatial: numel(&input[1..]), slots }
            }
            LayerKind::Flatten => Node::Reshape,
            LayerKind::Transpose { perm } => Node::Permute { map: kernels::transpose_map(input, perm) },
            LayerKind::Residual(block) => {
                let mut cur = input.to_vec();
                let mut path = Vec::new();
                for inner in &block.path {
                    let (n, o) = self.node(inner, &cur)?;
                    path.push(n);
                    cur = o;
                }
                let shortcut = match &block.shortcut {
                    Shortcut::Identity => None,
                    Shortcut::Projection { conv, params } => {
                        let p = params.as_ref().ok_or(NetError::MissingWeights(l.id))?;
                        let (w, b) = (self.slot(&p.0[0], true), self.slot(&p.0[1], true));
                        Some(Box::new(Node::Conv { geom: crate::netgraph::conv_geom(conv, input), w, b, act: conv.activation }))
                    }
                };
                Node::Residual { path, shortcut }
            }
        };
        Ok((node, out))
    }
}

impl<T: Scalar> Trainable<T> {
    pub fn new(graph: &NetworkGraph) -> Result<Self, NetError> {
        let mut b = Builder { params: Vec::new(), trainable: Vec::new(), dims: Vec::new() };
        let mut cur = graph.input_shape.clone();
        let mut nodes = Vec::new();
        for l in &graph.layers {
            let (n, o) = b.node(l, &cur)?;
            nodes.push(n);
            cur = o;
        }
        Ok(Self { nodes, params: b.params, trainable: b.trainable, dims: b.dims, input: graph.input_shape.clone(), output: cur })
    }

    pub fn input_len(&self) -> usize {
        numel(&self.input)
    }

    pub fn output_len(&self) -> usize {
        numel(&self.output)
    }

    pub fn slot_dims(&self) -> &[Vec<usize>] {
        &self.dims
    }

    /// Copies the current parameter values back into `graph` (which must be
    /// the graph this was built from).
    pub fn write_back(&self, graph: &mut NetworkGraph) {
        for ((t, _), p) in graph.params_mut().into_iter().zip(&self.params) {
            for (d, s) in t.data_mut().iter_mut().zip(p) {
                *d = s.narrow();
            }
        }
    }

    pub fn forward(&self, x: &[T], n: usize) -> Record<T> {
        debug_assert_eq!(x.len(), n * self.input_len());
        let mut saved = Vec::with_capacity(self.nodes.len());
        let mut cur = x.to_vec();
        for node in &self.nodes {
            let (y, s) = self.fwd(node, cur, n);
            saved.push(s);
            cur = y;
        }
        Record { n, saved, output: cur }
    }

    fn fwd(&self, node: &Node, x: Vec<T>, n: usize) -> (Vec<T>, Saved<T>) {
        let p = &self.params;
        match node {
            Node::Dense { inf, out, w, b, act } => {
                let mut y = kernels::dense(&x, n, *inf, &p[*w], &p[*b], *out);
                kernels::activate(&mut y, *act);
                (y.clone(), Saved::Affine { x, y })
            }
            Node::Conv { geom, w, b, act } => {
                let mut y = kernels::conv2d(&x, n, geom, &p[*w], &p[*b]);
                kernels::activate(&mut y, *act);
                (y.clone(), Saved::Affine { x, y })
            }
            Node::Pool { geom, .. } => {
                let (y, argmax) = kernels::maxpool(&x, n, geom);
                (y, Saved::Pool { argmax })
            }
            Node::Norm { channels, spatial, slots } => {
                let stats = slots.map(|s| p[s].as_slice());
                let y = kernels::batchnorm(&x, n, *channels, *spatial, stats);
                (y, Saved::Norm { x })
            }
            Node::Permute { map } => (kernels::gather(&x, n, map), Saved::Nothing),
            Node::Reshape => (x, Saved::Nothing),
            Node::Residual { path, shortcut } => {
                let (short, short_saved) = match shortcut {
                    None => (x.clone(), None),
                    Some(s) => {
                        let (y, sv) = self.fwd(s, x.clone(), n);
                        (y, Some(Box::new(sv)))
                    }
                };
                let mut cur = x;
                let mut saved = Vec::with_capacity(path.len());
                for inner in path {
                    let (y, s) = self.fwd(inner, cur, n);
                    saved.push(s);
                    cur = y;
                }
                cur.iter_mut().zip(short).for_each(|(a, b)| *a = *a + b);
                (cur, Saved::Residual { path: saved, shortcut: short_saved })
            }
        }
    }

    /// Gradients of every slot given `dy`, the loss gradient w.r.t. the
    /// recorded output. Non-trainable slots get zero gradients.
    pub fn backward(&self, rec: Record<T>, dy: Vec<T>) -> Vec<Vec<T>> {
        let mut grads: Vec<Vec<T>> = self.params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        let mut g = dy;
        for (node, saved) in self.nodes.iter().zip(rec.saved).rev() {
            g = self.bwd(node, saved, g, rec.n, &mut grads);
        }
        grads
    }

    fn bwd(&self, node: &Node, saved: Saved<T>, dy: Vec<T>, n: usize, grads: &mut [Vec<T>]) -> Vec<T> {
        let p = &self.params;
        let accumulate = |dst: &mut Vec<T>, src: Vec<T>| dst.iter_mut().zip(src).for_each(|(a, b)| *a = *a + b);
        match (node, saved) {
            (Node::Dense { inf, out, w, b, act }, Saved::Affine { x, y }) => {
                let dz = through_activation(dy, &y, *act);
                let (dx, dw, db) = kernels::dense_backward(&dz, &x, n, *inf, &p[*w], *out);
                accumulate(&mut grads[*w], dw);
                accumulate(&mut grads[*b], db);
                dx
            }
            (Node::Conv { geom, w, b, act }, Saved::Affine { x, y }) => {
                let dz = through_activation(dy, &y, *act);
                let (dx, dw, db) = kernels::conv2d_backward(&dz, &x, n, geom, &p[*w]);
                accumulate(&mut grads[*w], dw);
                accumulate(&mut grads[*b], db);
                dx
            }
            (Node::Pool { in_len, .. }, Saved::Pool { argmax }) => kernels::maxpool_backward(&dy, &argmax, n, *in_len),
            (Node::Norm { channels, spatial, slots }, Saved::Norm { x }) => {
                let stats = slots.map(|s| p[s].as_slice());
                let (dx, dg, db) = kernels::batchnorm_backward(&dy, &x, n, *channels, *spatial, stats);
                accumulate(&mut grads[slots[0]], dg);
                accumulate(&mut grads[slots[1]], db);
                dx
            }
            (Node::Permute { map }, Saved::Nothing) => kernels::scatter(&dy, n, map),
            (Node::Reshape, Saved::Nothing) => dy,
            (Node::Residual { path, shortcut }, Saved::Residual { path: ps, shortcut: ss }) => {
                let mut g = dy.clone();
                for (inner, s) in path.iter().zip(ps).rev() {
                    g = self.bwd(inner, s, g, n, grads);
                }
                let gs = match (shortcut, ss) {
                    (Some(node), Some(s)) => self.bwd(node, *s, dy, n, grads),
                    _ => dy,
                };
                accumulate(&mut g, gs);
                g
            }
            _ => unreachable!("record does not match the network it was produced by"),
        }
    }
}

fn through_activation<T: Scalar>(mut dy: Vec<T>, y: &[T], act: Activation) -> Vec<T> {
    if act != Activation::None {
        dy.iter_mut().zip(y).for_each(|(g, &v)| *g = *g * act.derivative_from_output(v));
    }
    dy
}
