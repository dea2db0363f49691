//! Student initialization: keep what fits, copy from the teacher what
//! matches, draw the rest.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::netgraph::{infer_shapes, LayerId, LayerKind, NetError, NetworkGraph, Params, Shortcut};
use crate::tensor::Tensor;

/// Identifies a parameter-owning unit across transformations: a block's
/// k-th inner layer and the layer it becomes after linearization share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct UnitKey {
    index: usize,
    sub: usize,
    shortcut: bool,
}

impl UnitKey {
    fn stream(&self) -> u64 {
        ((self.index as u64) << 24) ^ ((self.sub as u64) << 1) ^ self.shortcut as u64
    }
}

fn for_each_unit<'a>(graph: &'a NetworkGraph, mut f: impl FnMut(UnitKey, Vec<Vec<usize>>, Option<&'a Params>)) {
    for l in &graph.layers {
        let LayerId { index, sub } = l.id;
        match &l.kind {
            LayerKind::Residual(b) => {
                for (k, inner) in b.path.iter().enumerate() {
                    let d = inner.kind.param_dims();
                    if !d.is_empty() {
                        f(UnitKey { index, sub: k, shortcut: false }, d, inner.params.as_ref());
                    }
                }
                if let Shortcut::Projection { conv, params } = &b.shortcut {
                    f(UnitKey { index, sub: 0, shortcut: true }, crate::netgraph::conv_param_dims(conv), params.as_ref());
                }
            }
            k => {
                let d = k.param_dims();
                if !d.is_empty() {
                    f(UnitKey { index, sub, shortcut: false }, d, l.params.as_ref());
                }
            }
        }
    }
}

fn units_mut(graph: &mut NetworkGraph) -> Vec<(UnitKey, Vec<Vec<usize>>, bool, &mut Option<Params>)> {
    let mut out = Vec::new();
    for l in &mut graph.layers {
        let LayerId { index, sub } = l.id;
        match &mut l.kind {
            LayerKind::Residual(b) => {
                for (k, inner) in b.path.iter_mut().enumerate() {
                    let d = inner.kind.param_dims();
                    if !d.is_empty() {
                        let bn = matches!(inner.kind, LayerKind::BatchNorm { .. });
                        out.push((UnitKey { index, sub: k, shortcut: false }, d, bn, &mut inner.params));
                    }
                }
                if let Shortcut::Projection { conv, params } = &mut b.shortcut {
                    let d = crate::netgraph::conv_param_dims(conv);
                    out.push((UnitKey { index, sub: 0, shortcut: true }, d, false, params));
                }
            }
            k => {
                let d = k.param_dims();
                if !d.is_empty() {
                    let bn = matches!(k, LayerKind::BatchNorm { .. });
                    out.push((UnitKey { index, sub, shortcut: false }, d, bn, &mut l.params));
                }
            }
        }
    }
    out
}

fn fresh(key: UnitKey, dims: &[Vec<usize>], batchnorm: bool, seed: u64) -> Params {
    if batchnorm {
        let c = dims[0][0];
        return Params(vec![
            Tensor::filled(vec![c], 1.0),
            Tensor::zeros(vec![c]),
            Tensor::zeros(vec![c]),
            Tensor::filled(vec![c], 1.0),
        ]);
    }
    let w_dims = &dims[0];
    let fan_in: usize = w_dims[1..].iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key.stream());
    let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("positive std");
    let n: usize = w_dims.iter().product();
    let w: Vec<f32> = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
    Params(vec![Tensor::new(w_dims.clone(), w).expect("dims"), Tensor::zeros(dims[1].clone())])
}

/// Returns `graph` with every parameter-owning unit populated. Units that
/// already carry dim-correct weights keep them; otherwise the teacher's
/// weights for the same unit are copied when dims agree; the rest get He
/// normal initialization N(0, 2/fan_in), zero biases and identity batch norm.
pub fn init_student(graph: &NetworkGraph, seed: u64, warm_start: Option<&NetworkGraph>) -> Result<NetworkGraph, NetError> {
    infer_shapes(graph)?;
    let mut teacher = std::collections::BTreeMap::new();
    if let Some(t) = warm_start {
        for_each_unit(t, |k, d, p| {
            if let Some(p) = p {
                if p.matches_dims(&d) {
                    teacher.insert(k, p.clone());
                }
            }
        });
    }
    let mut g = graph.clone();
    for (key, dims, bn, slot) in units_mut(&mut g) {
        if slot.as_ref().is_some_and(|p| p.matches_dims(&dims)) {
            continue;
        }
        *slot = Some(match teacher.get(&key) {
            Some(p) if p.matches_dims(&dims) => p.clone(),
            _ => fresh(key, &dims, bn, seed),
        });
    }
    Ok(g)
}
