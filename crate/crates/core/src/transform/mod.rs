//! Architecture transformations: drop, scale, linearize and forall, plus the
//! repair pass that re-parameterizes successor layers after an edit.
//!
//! Layer sets always name original indices. A variant is named by writing the
//! original index of every kept non-output layer (`0`-`9`, then `A`-`Z`) and
//! `_` for every dropped one, e.g. `0123456__9A`.

mod factor;

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

pub use factor::{Factor, FactorError};

use crate::netgraph::{
    infer_shapes, kind_output_shape, reparameterize, KindTag, Layer, LayerId, LayerKind, NetError, NetworkGraph,
};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("cannot drop layer {index}: {reason}")]
    InvalidDrop { index: usize, reason: String },
    #[error("cannot scale layer {target}: {reason}")]
    InvalidScale { target: LayerRef, reason: String },
    #[error("cannot linearize layer {index}: {reason}")]
    InvalidLinearize { index: usize, reason: String },
    #[error(transparent)]
    Shape(#[from] NetError),
    #[error("transformation {position} failed: {source}")]
    AtStep {
        position: usize,
        #[source]
        source: Box<TransformError>,
    },
}

/// Target of a scale operation: the input layer or an original layer index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerRef {
    Input,
    Index(usize),
}

impl fmt::Display for LayerRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerRef::Input => write!(f, "input"),
            LayerRef::Index(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerPredicate {
    IsResidual,
    IsLayer(BTreeSet<usize>),
    IsKind(KindTag),
    And(Vec<LayerPredicate>),
    Or(Vec<LayerPredicate>),
    Not(Box<LayerPredicate>),
}

impl LayerPredicate {
    pub fn eval(&self, layer: &Layer) -> bool {
        match self {
            LayerPredicate::IsResidual => matches!(layer.kind, LayerKind::Residual(_)),
            LayerPredicate::IsLayer(set) => set.contains(&layer.id.index),
            LayerPredicate::IsKind(tag) => layer.kind.tag() == *tag,
            LayerPredicate::And(ps) => ps.iter().all(|p| p.eval(layer)),
            LayerPredicate::Or(ps) => ps.iter().any(|p| p.eval(layer)),
            LayerPredicate::Not(p) => !p.eval(layer),
        }
    }
}

/// An operation missing only its layer set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartialOp {
    Drop,
    Scale(Factor),
    Linearize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransformOp {
    Drop(BTreeSet<usize>),
    Scale(BTreeSet<LayerRef>, Factor),
    Linearize(BTreeSet<usize>),
    Forall(LayerPredicate, PartialOp),
}

impl TransformOp {
    pub fn apply(&self, graph: &NetworkGraph) -> Result<NetworkGraph, TransformError> {
        match self {
            TransformOp::Drop(l) => drop(graph, l),
            TransformOp::Scale(l, f) => scale(graph, l, *f),
            TransformOp::Linearize(l) => linearize(graph, l),
            TransformOp::Forall(p, op) => forall(graph, p, op),
        }
    }
}

fn indices_present(graph: &NetworkGraph, index: usize) -> impl Iterator<Item = (usize, &Layer)> {
    graph.layers.iter().enumerate().filter(move |(_, l)| l.id.index == index)
}

fn output_index(graph: &NetworkGraph) -> Option<usize> {
    graph.output_layer().map(|l| l.id.index)
}

/// Removes the layers with the given original indices.
pub fn drop(graph: &NetworkGraph, targets: &BTreeSet<usize>) -> Result<NetworkGraph, TransformError> {
    if targets.is_empty() {
        return Ok(graph.clone());
    }
    let out_idx = output_index(graph);
    for &i in targets {
        let mut found = false;
        for (_, l) in indices_present(graph, i) {
            found = true;
            if Some(i) == out_idx {
                return Err(TransformError::InvalidDrop { index: i, reason: "the output layer cannot be dropped".into() });
            }
            if l.kind.is_reshaping() {
                return Err(TransformError::InvalidDrop { index: i, reason: "reshaping layers cannot be dropped".into() });
            }
        }
        if !found {
            return Err(TransformError::InvalidDrop { index: i, reason: "no such layer (already dropped?)".into() });
        }
    }
    let mut g = graph.clone();
    g.layers.retain(|l| !targets.contains(&l.id.index));
    finish(graph, g)
}

/// Scales layer sizes by `factor`, flooring: FC neurons, conv kernels, or
/// input height and width.
pub fn scale(graph: &NetworkGraph, targets: &BTreeSet<LayerRef>, factor: Factor) -> Result<NetworkGraph, TransformError> {
    if targets.is_empty() {
        return Ok(graph.clone());
    }
    let out_idx = output_index(graph);
    let mut g = graph.clone();
    for &t in targets {
        let bad = |reason: String| TransformError::InvalidScale { target: t, reason };
        match t {
            LayerRef::Input => {
                let axes: Vec<usize> = match g.input_shape.len() {
                    1 => vec![0],
                    2 => vec![0, 1],
                    3 => vec![1, 2],
                    r => return Err(bad(format!("rank-{r} inputs are not scalable"))),
                };
                for a in axes {
                    let v = factor.floor_mul(g.input_shape[a]);
                    if v < 1 {
                        return Err(bad(format!("dimension {} scales to 0", g.input_shape[a])));
                    }
                    g.input_shape[a] = v;
                }
            }
            LayerRef::Index(i) => {
                if Some(i) == out_idx {
                    return Err(bad("the output layer keeps its size".into()));
                }
                let mut found = false;
                for l in g.layers.iter_mut().filter(|l| l.id.index == i) {
                    found = true;
                    let size = match &mut l.kind {
                        LayerKind::FullyConnected { out_features, .. } => out_features,
                        LayerKind::Convolution(c) => &mut c.out_channels,
                        other => return Err(bad(format!("{:?} layers cannot be scaled", other.tag()))),
                    };
                    let v = factor.floor_mul(*size);
                    if v < 1 {
                        return Err(bad(format!("size {size} scales to 0")));
                    }
                    *size = v;
                    l.params = None;
                }
                if !found {
                    return Err(bad("no such layer".into()));
                }
            }
        }
    }
    finish(graph, g)
}

/// Replaces each named residual block by its compute path.
pub fn linearize(graph: &NetworkGraph, targets: &BTreeSet<usize>) -> Result<NetworkGraph, TransformError> {
    if targets.is_empty() {
        return Ok(graph.clone());
    }
    for &i in targets {
        let mut any = false;
        for (_, l) in indices_present(graph, i) {
            any = true;
            if !matches!(l.kind, LayerKind::Residual(_)) {
                return Err(TransformError::InvalidLinearize { index: i, reason: "not a residual block".into() });
            }
        }
        if !any {
            return Err(TransformError::InvalidLinearize { index: i, reason: "no such layer".into() });
        }
    }
    let mut g = graph.clone();
    let mut layers = Vec::with_capacity(g.layers.len());
    for l in g.layers.drain(..) {
        match l.kind {
            LayerKind::Residual(b) if targets.contains(&l.id.index) => {
                for (k, mut inner) in b.path.into_iter().enumerate() {
                    inner.id = LayerId { index: l.id.index, sub: k };
                    layers.push(inner);
                }
            }
            kind => layers.push(Layer { kind, ..l }),
        }
    }
    g.layers = layers;
    finish(graph, g)
}

/// Applies `op` to the original indices of all layers satisfying `pred`.
pub fn forall(graph: &NetworkGraph, pred: &LayerPredicate, op: &PartialOp) -> Result<NetworkGraph, TransformError> {
    let selected: BTreeSet<usize> = graph.layers.iter().filter(|l| pred.eval(l)).map(|l| l.id.index).collect();
    match op {
        PartialOp::Drop => drop(graph, &selected),
        PartialOp::Linearize => linearize(graph, &selected),
        PartialOp::Scale(f) => scale(graph, &selected.into_iter().map(LayerRef::Index).collect(), *f),
    }
}

/// Re-derives every layer's input-dependent parameters from its
/// predecessor's output shape. Re-parameterized layers lose their weights.
pub fn repair(graph: &NetworkGraph) -> Result<NetworkGraph, TransformError> {
    let mut g = graph.clone();
    let mut cur = g.input_shape.clone();
    for l in &mut g.layers {
        if reparameterize(&mut l.kind, &cur, true) {
            l.params = None;
        }
        cur = kind_output_shape(l.id, &l.kind, &cur)?.0;
    }
    g.validate()?;
    Ok(g)
}

fn finish(original: &NetworkGraph, edited: NetworkGraph) -> Result<NetworkGraph, TransformError> {
    let g = repair(&edited)?;
    let before = infer_shapes(original)?;
    let after = infer_shapes(&g)?;
    if before.output_dims() != after.output_dims() {
        let last = g.output_layer().map(|l| l.id).unwrap_or(LayerId::INPUT);
        return Err(TransformError::Shape(NetError::Shape {
            index: last,
            expected: format!("network output {:?}", before.output_dims()),
            actual: format!("{:?}", after.output_dims()),
        }));
    }
    Ok(g)
}

/// Applies `plan` left to right. Returns the result and its variant name
/// relative to `graph`.
pub fn apply_plan(graph: &NetworkGraph, plan: &[TransformOp]) -> Result<(NetworkGraph, String), TransformError> {
    let mut g = graph.clone();
    for (position, op) in plan.iter().enumerate() {
        g = op.apply(&g).map_err(|e| TransformError::AtStep { position, source: Box::new(e) })?;
    }
    let name = variant_name(graph, &g);
    Ok((g, name))
}

pub fn index_char(i: usize) -> char {
    match i {
        0..=9 => (b'0' + i as u8) as char,
        10..=35 => (b'A' + (i - 10) as u8) as char,
        _ => '#',
    }
}

/// Names `variant` by which of `original`'s non-output layers it still has.
pub fn variant_name(original: &NetworkGraph, variant: &NetworkGraph) -> String {
    let kept: BTreeSet<usize> = variant.layers.iter().map(|l| l.id.index).collect();
    let mut seen = BTreeSet::new();
    let out = output_index(original);
    original
        .layers
        .iter()
        .map(|l| l.id.index)
        .filter(|&i| Some(i) != out && seen.insert(i))
        .map(|i| if kept.contains(&i) { index_char(i) } else { '_' })
        .collect()
}

/// Original indices that `drop` accepts: everything except reshaping layers
/// and the output layer.
pub fn droppable(graph: &NetworkGraph) -> Vec<usize> {
    let out = output_index(graph);
    let mut v: Vec<usize> = graph
        .layers
        .iter()
        .filter(|l| Some(l.id.index) != out && !l.kind.is_reshaping())
        .map(|l| l.id.index)
        .collect();
    v.dedup();
    v
}
