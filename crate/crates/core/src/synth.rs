//! Seeded random networks and datasets for tests, benches and scaffolding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distill::init_student;
use crate::netgraph::{Activation, ConvSpec, Layer, LayerKind, NetworkGraph, ResidualBlock, Shortcut};
use crate::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn fc(out: usize, act: Activation) -> LayerKind {
    LayerKind::FullyConnected { in_features: 0, out_features: out, activation: act }
}

fn conv(out: usize, k: usize, s: usize, p: usize, act: Activation) -> ConvSpec {
    ConvSpec { in_channels: 0, out_channels: out, kernel: [k, k], stride: [s, s], padding: [p, p], activation: act }
}

/// Fills in-features/in-channels left as 0 by the builders here.
fn resolve(mut g: NetworkGraph) -> NetworkGraph {
    g = crate::transform::repair(&g).expect("generated graph is valid");
    g
}

/// Fully-connected network with the given widths (`dims[0]` is the input).
/// Hidden layers use `act`, the output layer is linear. Weights are drawn.
pub fn mlp(dims: &[usize], act: Activation, seed: u64) -> NetworkGraph {
    let kinds = dims[1..]
        .iter()
        .enumerate()
        .map(|(i, &d)| fc(d, if i + 2 == dims.len() { Activation::None } else { act }))
        .collect();
    let g = resolve(NetworkGraph::sequential("mlp", vec![dims[0]], kinds));
    init_student(&g, seed, None).expect("valid mlp")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphOptions {
    /// Upper bound on top-level layers (including the output layer).
    pub max_layers: usize,
    /// Upper bound on any layer's width or channel count.
    pub max_units: usize,
    pub convolutional: bool,
    pub residual: bool,
    pub smooth_activations: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self { max_layers: 6, max_units: 16, convolutional: true, residual: true, smooth_activations: true }
    }
}

fn pick_act(rng: &mut impl Rng, o: &GraphOptions) -> Activation {
    let acts: &[Activation] = if o.smooth_activations {
        &[Activation::Relu, Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::None]
    } else {
        &[Activation::Relu, Activation::Relu, Activation::None]
    };
    acts[rng.random_range(0..acts.len())]
}

/// A random valid architecture (no weights). Convolutional graphs start from
/// a small image and end with flatten plus fully-connected layers.
pub fn random_architecture(rng: &mut impl Rng, o: &GraphOptions) -> NetworkGraph {
    let max_layers = o.max_layers.max(2);
    let mut kinds = Vec::new();
    let input;
    if o.convolutional && rng.random_bool(0.6) {
        let c = rng.random_range(1..=3);
        let hw = rng.random_range(5..=9);
        input = vec![c, hw, hw];
        let mut cur = (c, hw);
        let conv_layers = rng.random_range(1..=(max_layers - 2).clamp(1, 4));
        for _ in 0..conv_layers {
            let roll = rng.random_range(0..10);
            let ch = rng.random_range(1..=o.max_units.min(6));
            if roll < 4 || cur.1 < 3 {
                let k = rng.random_range(1..=3.min(cur.1));
                let p = if k > 1 { rng.random_range(0..=1) } else { 0 };
                let s = if cur.1 >= 6 { rng.random_range(1..=2) } else { 1 };
                kinds.push(LayerKind::Convolution(conv(ch, k, s, p, pick_act(rng, o))));
                cur = (ch, (cur.1 + 2 * p - k) / s + 1);
            } else if roll < 5 && cur.1 >= 4 {
                kinds.push(LayerKind::MaxPool { kernel: [2, 2], stride: [2, 2] });
                cur.1 = (cur.1 - 2) / 2 + 1;
            } else if roll < 6 {
                kinds.push(LayerKind::BatchNorm { channels: cur.0 });
            } else if o.residual && roll < 9 {
                let identity = rng.random_bool(0.5) || cur.1 < 4;
                let path = if identity {
                    vec![
                        Layer::new(0, LayerKind::Convolution(conv(ch, 3, 1, 1, pick_act(rng, o)))),
                        Layer::new(1, LayerKind::Convolution(conv(cur.0, 3, 1, 1, Activation::None))),
                    ]
                } else {
                    vec![Layer::new(0, LayerKind::Convolution(conv(ch, 3, 2, 1, pick_act(rng, o))))]
                };
                let shortcut = if identity {
                    Shortcut::Identity
                } else {
                    Shortcut::Projection { conv: conv(ch, 1, 2, 0, Activation::None), params: None }
                };
                kinds.push(LayerKind::Residual(ResidualBlock { path, shortcut }));
                if !identity {
                    cur = (ch, cur.1.div_ceil(2));
                }
            } else {
                kinds.push(LayerKind::Transpose { perm: vec![0, 2, 1] });
            }
        }
        kinds.push(LayerKind::Flatten);
    } else {
        input = vec![rng.random_range(1..=o.max_units)];
    }
    let used = kinds.len();
    let fcs = rng.random_range(0..=(max_layers.saturating_sub(used + 1)).min(3));
    for _ in 0..fcs {
        kinds.push(fc(rng.random_range(1..=o.max_units), pick_act(rng, o)));
    }
    kinds.push(fc(rng.random_range(1..=4), Activation::None));
    resolve(NetworkGraph::sequential("random", input, kinds))
}

/// [`random_architecture`] with He-initialized weights.
pub fn random_network(seed: u64, o: &GraphOptions) -> NetworkGraph {
    let mut r = rng(seed);
    let g = random_architecture(&mut r, o);
    init_student(&g, seed, None).expect("generated graph is valid")
}

/// `n` samples drawn uniformly from `[lo, hi]` with per-sample dims `dims`.
pub fn uniform_inputs(dims: &[usize], n: usize, lo: f32, hi: f32, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let per: usize = dims.iter().product();
    let data = (0..n * per).map(|_| r.random_range(lo..=hi)).collect();
    let mut d = vec![n];
    d.extend_from_slice(dims);
    Tensor::new(d, data).expect("dims")
}
