//! The network document: TOML with ordered `[[layer]]` tables, weights in
//! binary weight blobs referenced by relative path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    Activation, ConvSpec, Layer, LayerId, LayerKind, NetError, NetworkGraph, Params, ResidualBlock, Shortcut,
};
use crate::tensor::{read_blob, write_blob, Tensor};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
    #[serde(rename = "layer")]
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sub: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    in_features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out_features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    in_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    perm: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shortcut: Option<ShortcutDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path: Option<Vec<LayerDoc>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShortcutDoc {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    in_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<String>,
}

struct Ctx<'a> {
    dir: &'a Path,
    doc_path: String,
}

impl Ctx<'_> {
    fn parse_err(&self, msg: impl Into<String>) -> NetError {
        NetError::Parse { path: self.doc_path.clone(), msg: msg.into() }
    }

    fn read(&self, rel: &str) -> Result<Tensor, NetError> {
        let p = self.dir.join(rel);
        read_blob(&p).map_err(|source| NetError::Tensor { path: p.display().to_string(), source })
    }
}

/// Splits a packed `[rows, cols + 1]` blob into weight `[rows, cols...]` and bias `[rows]`.
fn unpack_affine(blob: &Tensor, w_dims: Vec<usize>, id: LayerId) -> Result<Params, NetError> {
    let rows = w_dims[0];
    let cols: usize = w_dims[1..].iter().product();
    if blob.dims() != [rows, cols + 1] {
        return Err(NetError::Validation {
            index: id,
            msg: format!("weight blob dims {:?}, expected {:?}", blob.dims(), [rows, cols + 1]),
        });
    }
    let mut w = Vec::with_capacity(rows * cols);
    let mut b = Vec::with_capacity(rows);
    for r in blob.data().chunks_exact(cols + 1) {
        w.extend_from_slice(&r[..cols]);
        b.push(r[cols]);
    }
    Ok(Params(vec![Tensor::new(w_dims, w).unwrap(), Tensor::new(vec![rows], b).unwrap()]))
}

fn pack_affine(p: &Params) -> Tensor {
    let (w, b) = (&p.0[0], &p.0[1]);
    let rows = b.len();
    let cols = w.len() / rows.max(1);
    let mut data = Vec::with_capacity(rows * (cols + 1));
    for r in 0..rows {
        data.extend_from_slice(&w.data()[r * cols..(r + 1) * cols]);
        data.push(b.data()[r]);
    }
    Tensor::new(vec![rows, cols + 1], data).unwrap()
}

fn unpack_params(kind: &LayerKind, blob: &Tensor, id: LayerId) -> Result<Params, NetError> {
    match kind {
        LayerKind::FullyConnected { .. } | LayerKind::Convolution(_) => {
            unpack_affine(blob, kind.param_dims().swap_remove(0), id)
        }
        LayerKind::BatchNorm { channels } => {
            if blob.dims() != [4, *channels] {
                return Err(NetError::Validation {
                    index: id,
                    msg: format!("batch-norm blob dims {:?}, expected [4, {channels}]", blob.dims()),
                });
            }
            Ok(Params(blob.data().chunks_exact(*channels).map(|c| Tensor::from_vec(c.to_vec())).collect()))
        }
        _ => Err(NetError::Validation { index: id, msg: "this layer kind takes no weights".into() }),
    }
}

fn pack_params(kind: &LayerKind, p: &Params) -> Tensor {
    match kind {
        LayerKind::BatchNorm { channels } => {
            let data = p.0.iter().flat_map(|t| t.data().iter().copied()).collect();
            Tensor::new(vec![4, *channels], data).unwrap()
        }
        _ => pack_affine(p),
    }
}

fn req<T: Copy>(ctx: &Ctx, v: Option<T>, field: &str, kind: &str) -> Result<T, NetError> {
    v.ok_or_else(|| ctx.parse_err(format!("`{kind}` layer needs `{field}`")))
}

fn parse_kind(ctx: &Ctx, d: &LayerDoc, inside_block: bool) -> Result<LayerKind, NetError> {
    let k = d.kind.as_str();
    Ok(match k {
        "fully_connected" | "fc" | "dense" => LayerKind::FullyConnected {
            in_features: d.in_features.unwrap_or(0),
            out_features: req(ctx, d.out_features, "out_features", k)?,
            activation: d.activation.unwrap_or(Activation::None),
        },
        "conv" | "convolution" => LayerKind::Convolution(ConvSpec {
            in_channels: d.in_channels.unwrap_or(0),
            out_channels: req(ctx, d.out_channels, "out_channels", k)?,
            kernel: req(ctx, d.kernel, "kernel", k)?,
            stride: d.stride.unwrap_or([1, 1]),
            padding: d.padding.unwrap_or([0, 0]),
            activation: d.activation.unwrap_or(Activation::None),
        }),
        "maxpool" | "max_pool" => LayerKind::MaxPool {
            kernel: req(ctx, d.kernel, "kernel", k)?,
            stride: d.stride.or(d.kernel).unwrap(),
        },
        "batchnorm" | "batch_norm" => LayerKind::BatchNorm { channels: d.channels.unwrap_or(0) },
        "flatten" => LayerKind::Flatten,
        "transpose" => LayerKind::Transpose { perm: d.perm.clone().ok_or_else(|| ctx.parse_err("`transpose` needs `perm`"))? },
        "residual" if !inside_block => {
            let path_docs = d.path.as_ref().ok_or_else(|| ctx.parse_err("`residual` needs `[[layer.path]]` entries"))?;
            let mut path = Vec::with_capacity(path_docs.len());
            for (i, pd) in path_docs.iter().enumerate() {
                path.push(parse_layer(ctx, pd, LayerId::new(i), true)?);
            }
            let shortcut = match &d.shortcut {
                None => Shortcut::Identity,
                Some(s) if s.kind == "identity" => Shortcut::Identity,
                Some(s) if s.kind == "projection" => {
                    let conv = ConvSpec {
                        in_channels: s.in_channels.unwrap_or(0),
                        out_channels: s.out_channels.unwrap_or(0),
                        kernel: s.kernel.unwrap_or([1, 1]),
                        stride: s.stride.unwrap_or([1, 1]),
                        padding: s.padding.unwrap_or([0, 0]),
                        activation: Activation::None,
                    };
                    Shortcut::Projection { conv, params: None }
                }
                Some(s) => return Err(ctx.parse_err(format!("unknown shortcut type `{}`", s.kind))),
            };
            LayerKind::Residual(ResidualBlock { path, shortcut })
        }
        "residual" => return Err(ctx.parse_err("nested residual blocks are not supported")),
        "input" => return Err(ctx.parse_err("`input` may only be the first layer")),
        other => return Err(ctx.parse_err(format!("unknown layer kind `{other}`"))),
    })
}

fn parse_layer(ctx: &Ctx, d: &LayerDoc, id: LayerId, inside_block: bool) -> Result<Layer, NetError> {
    let kind = parse_kind(ctx, d, inside_block)?;
    Ok(Layer { id, kind, params: None })
}

/// Weight references are resolved once input-dependent fields are known.
fn load_weights(ctx: &Ctx, d: &LayerDoc, l: &mut Layer) -> Result<(), NetError> {
    if let LayerKind::Residual(b) = &mut l.kind {
        let docs = d.path.as_deref().unwrap_or_default();
        for (pd, inner) in docs.iter().zip(&mut b.path) {
            load_weights(ctx, pd, inner)?;
        }
        if let (Shortcut::Projection { conv, params }, Some(sd)) = (&mut b.shortcut, &d.shortcut) {
            if let Some(rel) = &sd.weights {
                let blob = ctx.read(rel)?;
                *params = Some(unpack_affine(&blob, super::conv_param_dims(conv).swap_remove(0), l.id)?);
            }
        }
        if d.weights.is_some() {
            return Err(ctx.parse_err("residual blocks take weights on their inner layers"));
        }
        return Ok(());
    }
    if let Some(rel) = &d.weights {
        let blob = ctx.read(rel)?;
        l.params = Some(unpack_params(&l.kind, &blob, l.id)?);
    }
    Ok(())
}

pub fn load_network(path: &Path) -> Result<NetworkGraph, NetError> {
    let text = std::fs::read_to_string(path).map_err(|source| NetError::Io { path: path.display().to_string(), source })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    parse_network(&text, dir, &path.display().to_string())
}

/// Parses a network document; blob paths resolve against `dir`.
pub fn parse_network(text: &str, dir: &Path, origin: &str) -> Result<NetworkGraph, NetError> {
    let ctx = Ctx { dir, doc_path: origin.to_string() };
    let doc: NetworkDoc = toml::from_str(text).map_err(|e| ctx.parse_err(e.to_string()))?;
    let (first, rest) = doc.layers.split_first().ok_or_else(|| ctx.parse_err("no layers"))?;
    if first.kind != "input" {
        return Err(ctx.parse_err("first layer must be `input`"));
    }
    let input_shape = first.shape.clone().ok_or_else(|| ctx.parse_err("`input` needs `shape`"))?;
    let mut layers = Vec::with_capacity(rest.len());
    let mut next = 0usize;
    for d in rest {
        let id = LayerId { index: d.index.unwrap_or(next), sub: d.sub.unwrap_or(0) };
        next = id.index + 1;
        layers.push(parse_layer(&ctx, d, id, false)?);
    }
    let mut graph = NetworkGraph { name: doc.name, notes: doc.notes, input_shape, layers };
    fill_unset_inputs(&mut graph)?;
    for (d, l) in rest.iter().zip(&mut graph.layers) {
        load_weights(&ctx, d, l)?;
    }
    graph.validate()?;
    Ok(graph)
}

/// Fills input-dependent fields left unset (zero) in the document.
fn fill_unset_inputs(graph: &mut NetworkGraph) -> Result<(), NetError> {
    let mut cur = graph.input_shape.clone();
    for l in &mut graph.layers {
        super::reparameterize(&mut l.kind, &cur, false);
        cur = match super::kind_output_shape(l.id, &l.kind, &cur) {
            Ok((o, _)) => o,
            // leave the error for validation to report with context
            Err(_) => return Ok(()),
        };
    }
    Ok(())
}

fn layer_doc(l: &Layer, blob_name: &mut dyn FnMut(&str, &Tensor) -> Result<String, NetError>, tag: &str) -> Result<LayerDoc, NetError> {
    let mut d = LayerDoc::default();
    match &l.kind {
        LayerKind::FullyConnected { in_features, out_features, activation } => {
            d.kind = "fully_connected".into();
            d.in_features = Some(*in_features);
            d.out_features = Some(*out_features);
            d.activation = Some(*activation);
        }
        LayerKind::Convolution(c) => {
            d.kind = "conv".into();
            d.in_channels = Some(c.in_channels);
            d.out_channels = Some(c.out_channels);
            d.kernel = Some(c.kernel);
            d.stride = Some(c.stride);
            d.padding = Some(c.padding);
            d.activation = Some(c.activation);
        }
        LayerKind::MaxPool { kernel, stride } => {
            d.kind = "maxpool".into();
            d.kernel = Some(*kernel);
            d.stride = Some(*stride);
        }
        LayerKind::BatchNorm { channels } => {
            d.kind = "batchnorm".into();
            d.channels = Some(*channels);
        }
        LayerKind::Flatten => d.kind = "flatten".into(),
        LayerKind::Transpose { perm } => {
            d.kind = "transpose".into();
            d.perm = Some(perm.clone());
        }
        LayerKind::Residual(b) => {
            d.kind = "residual".into();
            let mut path = Vec::with_capacity(b.path.len());
            for (i, inner) in b.path.iter().enumerate() {
                path.push(layer_doc(inner, blob_name, &format!("{tag}_{i}"))?);
            }
            d.path = Some(path);
            d.shortcut = Some(match &b.shortcut {
                Shortcut::Identity => ShortcutDoc { kind: "identity".into(), ..Default::default() },
                Shortcut::Projection { conv, params } => ShortcutDoc {
                    kind: "projection".into(),
                    in_channels: Some(conv.in_channels),
                    out_channels: Some(conv.out_channels),
                    kernel: Some(conv.kernel),
                    stride: Some(conv.stride),
                    padding: Some(conv.padding),
                    weights: params.as_ref().map(|p| blob_name(&format!("{tag}_shortcut"), &pack_affine(p))).transpose()?,
                },
            });
        }
    }
    if !matches!(l.kind, LayerKind::Residual(_)) {
        if let Some(p) = &l.params {
            d.weights = Some(blob_name(tag, &pack_params(&l.kind, p))?);
        }
    }
    Ok(d)
}

/// Writes the document and one blob per weighted layer next to it.
pub fn save_network(graph: &NetworkGraph, path: &Path) -> Result<(), NetError> {
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("network").to_string();
    let mut blob_name = |tag: &str, t: &Tensor| -> Result<String, NetError> {
        let name = format!("{stem}.{tag}.r4vt");
        let p = dir.join(&name);
        write_blob(&p, t).map_err(|source| NetError::Tensor { path: p.display().to_string(), source })?;
        Ok(name)
    };
    let mut layers = vec![LayerDoc { kind: "input".into(), shape: Some(graph.input_shape.clone()), ..Default::default() }];
    for l in &graph.layers {
        let tag = if l.id.sub == 0 { format!("l{}", l.id.index) } else { format!("l{}_{}", l.id.index, l.id.sub) };
        let mut d = layer_doc(l, &mut blob_name, &tag)?;
        d.index = Some(l.id.index);
        d.sub = (l.id.sub != 0).then_some(l.id.sub);
        layers.push(d);
    }
    let doc = NetworkDoc { name: graph.name.clone(), notes: graph.notes.clone(), layers };
    let text = toml::to_string(&doc).map_err(|e| NetError::Parse { path: path.display().to_string(), msg: e.to_string() })?;
    std::fs::write(path, text).map_err(|source| NetError::Io { path: path.display().to_string(), source })
}
