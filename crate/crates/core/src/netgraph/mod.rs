//! Network intermediate representation.
//!
//! A [`NetworkGraph`] is an input shape followed by an ordered list of layers.
//! Every layer carries a [`LayerId`] assigned when the network is first built;
//! transformations never renumber, so dropped layers leave gaps in the index
//! sequence. Per-sample tensors are channel-first: images are `[C, H, W]`.

mod doc;
mod forward;
pub mod reference;
mod shape;

use std::fmt;

use thiserror::Error;

pub use crate::kernels::Activation;
use crate::tensor::{Tensor, TensorError};
pub use doc::{load_network, parse_network, save_network};
pub use forward::{forward, forward_batch, Prepared};
pub(crate) use forward::{conv_geom, Step};
pub use shape::{infer_shapes, kind_output_shape, neuron_count, LayerShape, ShapeTable};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid network at layer {index}: {msg}")]
    Validation { index: LayerId, msg: String },
    #[error("shape error at layer {index}: expected {expected}, got {actual}")]
    Shape { index: LayerId, expected: String, actual: String },
    #[error("layer {0} has no weights")]
    MissingWeights(LayerId),
    #[error("{path}: {source}")]
    Tensor { path: String, source: TensorError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Stable layer identifier. `sub` is non-zero only for layers that came out
/// of a linearized residual block, which share the block's `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LayerId {
    pub index: usize,
    pub sub: usize,
}

impl LayerId {
    pub const INPUT: LayerId = LayerId { index: usize::MAX, sub: 0 };

    pub fn new(index: usize) -> Self {
        Self { index, sub: 0 }
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == LayerId::INPUT {
            write!(f, "input")
        } else if self.sub == 0 {
            write!(f, "{}", self.index)
        } else {
            write!(f, "{}.{}", self.index, self.sub)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shortcut {
    Identity,
    /// Convolutional resize of the block input to the compute path's output shape.
    Projection { conv: ConvSpec, params: Option<Params> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub path: Vec<Layer>,
    pub shortcut: Shortcut,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    FullyConnected { in_features: usize, out_features: usize, activation: Activation },
    Convolution(ConvSpec),
    MaxPool { kernel: [usize; 2], stride: [usize; 2] },
    BatchNorm { channels: usize },
    Flatten,
    Transpose { perm: Vec<usize> },
    Residual(ResidualBlock),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KindTag {
    FullyConnected,
    Convolution,
    MaxPool,
    BatchNorm,
    Flatten,
    Transpose,
    Residual,
}

impl LayerKind {
    pub fn tag(&self) -> KindTag {
        match self {
            LayerKind::FullyConnected { .. } => KindTag::FullyConnected,
            LayerKind::Convolution(_) => KindTag::Convolution,
            LayerKind::MaxPool { .. } => KindTag::MaxPool,
            LayerKind::BatchNorm { .. } => KindTag::BatchNorm,
            LayerKind::Flatten => KindTag::Flatten,
            LayerKind::Transpose { .. } => KindTag::Transpose,
            LayerKind::Residual(_) => KindTag::Residual,
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerKind::FullyConnected { .. } | LayerKind::Convolution(_))
    }

    pub fn is_reshaping(&self) -> bool {
        matches!(self, LayerKind::Flatten | LayerKind::Transpose { .. })
    }

    /// Dims of each parameter tensor this kind owns, in slot order.
    /// Residual blocks own none directly.
    pub fn param_dims(&self) -> Vec<Vec<usize>> {
        match self {
            LayerKind::FullyConnected { in_features, out_features, .. } => {
                vec![vec![*out_features, *in_features], vec![*out_features]]
            }
            LayerKind::Convolution(c) => conv_param_dims(c),
            LayerKind::BatchNorm { channels } => vec![vec![*channels]; 4],
            _ => Vec::new(),
        }
    }

    /// Whether parameter slot `slot` is learned (batch-norm running stats are not).
    pub fn slot_trainable(&self, slot: usize) -> bool {
        !matches!(self, LayerKind::BatchNorm { .. }) || slot < 2
    }
}

pub(crate) fn conv_param_dims(c: &ConvSpec) -> Vec<Vec<usize>> {
    vec![vec![c.out_channels, c.in_channels, c.kernel[0], c.kernel[1]], vec![c.out_channels]]
}

/// Parameter tensors of one layer, in the slot order of [`LayerKind::param_dims`].
#[derive(Debug, Clone, PartialEq)]
pub struct Params(pub Vec<Tensor>);

impl Params {
    pub fn matches_dims(&self, dims: &[Vec<usize>]) -> bool {
        self.0.len() == dims.len() && self.0.iter().zip(dims).all(|(t, d)| t.dims() == d.as_slice())
    }

    pub fn count(&self) -> usize {
        self.0.iter().map(|t| t.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub id: LayerId,
    pub kind: LayerKind,
    pub params: Option<Params>,
}

impl Layer {
    pub fn new(index: usize, kind: LayerKind) -> Self {
        Self { id: LayerId::new(index), kind, params: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    pub name: String,
    pub notes: Vec<String>,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl NetworkGraph {
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, layers: Vec<Layer>) -> Self {
        Self { name: name.into(), notes: Vec::new(), input_shape, layers }
    }

    /// Builds a graph numbering `kinds` 0, 1, 2, ...
    pub fn sequential(name: impl Into<String>, input_shape: Vec<usize>, kinds: Vec<LayerKind>) -> Self {
        let layers = kinds.into_iter().enumerate().map(|(i, k)| Layer::new(i, k)).collect();
        Self::new(name, input_shape, layers)
    }

    /// Layer count including the input layer.
    pub fn layer_count(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn output_layer(&self) -> Option<&Layer> {
        self.layers.last()
    }

    pub fn position(&self, id: LayerId) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }

    pub fn has_weights(&self) -> bool {
        self.weighted_slots().iter().all(|s| s.is_some())
    }

    /// For every parameter-owning unit (layer, block-inner layer, projection),
    /// whether it currently has parameters.
    fn weighted_slots(&self) -> Vec<Option<()>> {
        let mut v = Vec::new();
        for l in &self.layers {
            match &l.kind {
                LayerKind::Residual(b) => {
                    for inner in &b.path {
                        if !inner.kind.param_dims().is_empty() {
                            v.push(inner.params.as_ref().map(|_| ()));
                        }
                    }
                    if let Shortcut::Projection { params, .. } = &b.shortcut {
                        v.push(params.as_ref().map(|_| ()));
                    }
                }
                k if !k.param_dims().is_empty() => v.push(l.params.as_ref().map(|_| ())),
                _ => {}
            }
        }
        v
    }

    /// All parameter tensors in a fixed traversal order, with their trainability.
    pub fn params(&self) -> Vec<(&Tensor, bool)> {
        let mut out = Vec::new();
        for l in &self.layers {
            collect_params(l, &mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(&mut Tensor, bool)> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            collect_params_mut(l, &mut out);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(t, _)| t.len()).sum()
    }

    /// Drops every parameter tensor, keeping only the architecture.
    pub fn strip_weights(&mut self) {
        for l in &mut self.layers {
            strip_layer(l);
        }
    }

    pub fn without_weights(&self) -> Self {
        let mut g = self.clone();
        g.strip_weights();
        g
    }

    /// Equality of everything except parameters.
    pub fn same_architecture(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.without_weights().layers == other.without_weights().layers
    }

    /// Structural validation plus shape inference and parameter dim checks.
    pub fn validate(&self) -> Result<ShapeTable, NetError> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(NetError::Validation { index: LayerId::INPUT, msg: format!("bad input shape {:?}", self.input_shape) });
        }
        let last = self.layers.last().ok_or(NetError::Validation { index: LayerId::INPUT, msg: "network has no layers".into() })?;
        if !last.kind.is_weighted() {
            return Err(NetError::Validation { index: last.id, msg: "last layer must be fully-connected or convolutional".into() });
        }
        for w in self.layers.windows(2) {
            if w[0].id >= w[1].id {
                return Err(NetError::Validation { index: w[1].id, msg: format!("layer ids must increase (after {})", w[0].id) });
            }
        }
        for l in &self.layers {
            check_layer_static(l, false)?;
        }
        let table = infer_shapes(self).map_err(|e| match e {
            NetError::Shape { index, expected, actual } => {
                NetError::Validation { index, msg: format!("expected {expected}, got {actual}") }
            }
            other => other,
        })?;
        for l in &self.layers {
            check_layer_params(l)?;
        }
        Ok(table)
    }
}

/// Sets the input-dependent fields of `kind` (FC in-features, conv
/// in-channels, batch-norm channels, projection dims) from `input`. With
/// `overwrite = false` only unset (zero) fields are filled. Returns whether
/// anything changed; inside residual blocks changed units lose their params.
pub(crate) fn reparameterize(kind: &mut LayerKind, input: &[usize], overwrite: bool) -> bool {
    let set = |field: &mut usize, v: usize| -> bool {
        if (overwrite || *field == 0) && *field != v {
            *field = v;
            true
        } else {
            false
        }
    };
    match kind {
        LayerKind::FullyConnected { in_features, .. } => input.len() == 1 && set(in_features, input[0]),
        LayerKind::Convolution(c) => input.len() == 3 && set(&mut c.in_channels, input[0]),
        LayerKind::BatchNorm { channels } => !input.is_empty() && set(channels, input[0]),
        LayerKind::Residual(b) => {
            let mut changed = false;
            let mut cur = input.to_vec();
            for inner in &mut b.path {
                if reparameterize(&mut inner.kind, &cur, overwrite) {
                    inner.params = None;
                    changed = true;
                }
                match kind_output_shape(inner.id, &inner.kind, &cur) {
                    Ok((o, _)) => cur = o,
                    Err(_) => return changed,
                }
            }
            if let Shortcut::Projection { conv, params } = &mut b.shortcut {
                let mut c = false;
                if input.len() == 3 {
                    c |= set(&mut conv.in_channels, input[0]);
                }
                if cur.len() == 3 {
                    c |= set(&mut conv.out_channels, cur[0]);
                }
                if c {
                    *params = None;
                    changed = true;
                }
            }
            changed
        }
        _ => false,
    }
}

fn check_layer_static(l: &Layer, inside_block: bool) -> Result<(), NetError> {
    let bad = |msg: String| Err(NetError::Validation { index: l.id, msg });
    match &l.kind {
        LayerKind::Convolution(c) => {
            if c.kernel.contains(&0) || c.stride.contains(&0) || c.out_channels == 0 {
                return bad("convolution kernel, stride and channels must be positive".into());
            }
        }
        LayerKind::MaxPool { kernel, stride } => {
            if kernel.contains(&0) || stride.contains(&0) {
                return bad("max-pool kernel and stride must be positive".into());
            }
        }
        LayerKind::FullyConnected { out_features, .. } if *out_features == 0 => {
            return bad("fully-connected layer needs at least one output".into());
        }
        LayerKind::Transpose { perm } => {
            let mut seen = vec![false; perm.len()];
            for &p in perm {
                if p >= perm.len() || seen[p] {
                    return bad(format!("{perm:?} is not a permutation"));
                }
                seen[p] = true;
            }
        }
        LayerKind::Residual(b) => {
            if inside_block {
                return bad("nested residual blocks are not supported".into());
            }
            if b.path.is_empty() {
                return bad("residual compute path is empty".into());
            }
            if let Shortcut::Projection { conv, .. } = &b.shortcut {
                if conv.kernel.contains(&0) || conv.stride.contains(&0) {
                    return bad("projection kernel and stride must be positive".into());
                }
            }
            for inner in &b.path {
                check_layer_static(inner, true)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn check_layer_params(l: &Layer) -> Result<(), NetError> {
    let check = |p: &Option<Params>, dims: Vec<Vec<usize>>, id: LayerId| -> Result<(), NetError> {
        match p {
            Some(p) if !p.matches_dims(&dims) => Err(NetError::Validation {
                index: id,
                msg: format!(
                    "weight dims {:?} disagree with inferred {dims:?}",
                    p.0.iter().map(|t| t.dims().to_vec()).collect::<Vec<_>>()
                ),
            }),
            _ => Ok(()),
        }
    };
    match &l.kind {
        LayerKind::Residual(b) => {
            for inner in &b.path {
                check_layer_params(inner)?;
            }
            if let Shortcut::Projection { conv, params } = &b.shortcut {
                check(params, conv_param_dims(conv), l.id)?;
            }
            Ok(())
        }
        k => check(&l.params, k.param_dims(), l.id),
    }
}

fn collect_params<'a>(l: &'a Layer, out: &mut Vec<(&'a Tensor, bool)>) {
    if let LayerKind::Residual(b) = &l.kind {
        for inner in &b.path {
            collect_params(inner, out);
        }
        if let Shortcut::Projection { params: Some(p), .. } = &b.shortcut {
            out.extend(p.0.iter().map(|t| (t, true)));
        }
    } else if let Some(p) = &l.params {
        out.extend(p.0.iter().enumerate().map(|(i, t)| (t, l.kind.slot_trainable(i))));
    }
}

fn collect_params_mut<'a>(l: &'a mut Layer, out: &mut Vec<(&'a mut Tensor, bool)>) {
    let Layer { kind, params, .. } = l;
    if let LayerKind::Residual(b) = kind {
        for inner in &mut b.path {
            collect_params_mut(inner, out);
        }
        if let Shortcut::Projection { params: Some(p), .. } = &mut b.shortcut {
            out.extend(p.0.iter_mut().map(|t| (t, true)));
        }
    } else if let Some(p) = params {
        let k = kind.clone();
        out.extend(p.0.iter_mut().enumerate().map(|(i, t)| (t, k.slot_trainable(i))));
    }
}

fn strip_layer(l: &mut Layer) {
    l.params = None;
    if let LayerKind::Residual(b) = &mut l.kind {
        for inner in &mut b.path {
            strip_layer(inner);
        }
        if let Shortcut::Projection { params, .. } = &mut b.shortcut {
            *params = None;
        }
    }
}
