use super::{ConvSpec, LayerId, LayerKind, NetError, NetworkGraph, Shortcut};
use crate::tensor::numel;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub id: LayerId,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    /// Output size of weighted layers (including those inside a residual
    /// block); zero for reshaping, pooling and normalization layers.
    pub neurons: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTable {
    pub input: Vec<usize>,
    pub layers: Vec<LayerShape>,
}

impl ShapeTable {
    pub fn output_dims(&self) -> &[usize] {
        self.layers.last().map(|l| l.output.as_slice()).unwrap_or(&self.input)
    }

    pub fn neurons(&self) -> usize {
        self.layers.iter().map(|l| l.neurons).sum()
    }

    pub fn get(&self, id: LayerId) -> Option<&LayerShape> {
        self.layers.iter().find(|l| l.id == id)
    }
}

fn shape_err(id: LayerId, expected: impl Into<String>, actual: impl Into<String>) -> NetError {
    NetError::Shape { index: id, expected: expected.into(), actual: actual.into() }
}

fn conv_out(id: LayerId, c: &ConvSpec, input: &[usize]) -> Result<Vec<usize>, NetError> {
    let [ch, h, w] = match input {
        [c, h, w] => [*c, *h, *w],
        _ => return Err(shape_err(id, "rank-3 [C,H,W] input", format!("{input:?}"))),
    };
    if ch != c.in_channels {
        return Err(shape_err(id, format!("{} input channels", c.in_channels), format!("{ch}")));
    }
    let ph = h + 2 * c.padding[0];
    let pw = w + 2 * c.padding[1];
    if c.kernel[0] > ph || c.kernel[1] > pw {
        return Err(shape_err(
            id,
            format!("padded input at least {}x{}", c.kernel[0], c.kernel[1]),
            format!("{ph}x{pw}"),
        ));
    }
    Ok(vec![c.out_channels, (ph - c.kernel[0]) / c.stride[0] + 1, (pw - c.kernel[1]) / c.stride[1] + 1])
}

/// Output shape and neuron contribution of one layer given its input shape.
pub fn kind_output_shape(id: LayerId, kind: &LayerKind, input: &[usize]) -> Result<(Vec<usize>, usize), NetError> {
    match kind {
        LayerKind::FullyConnected { in_features, out_features, .. } => {
            if input.len() != 1 {
                return Err(shape_err(id, "rank-1 features (flatten first)", format!("{input:?}")));
            }
            if input[0] != *in_features {
                return Err(shape_err(id, format!("{in_features} in-features"), format!("{}", input[0])));
            }
            Ok((vec![*out_features], *out_features))
        }
        LayerKind::Convolution(c) => {
            let out = conv_out(id, c, input)?;
            let n = numel(&out);
            Ok((out, n))
        }
        LayerKind::MaxPool { kernel, stride } => {
            let [ch, h, w] = match input {
                [c, h, w] => [*c, *h, *w],
                _ => return Err(shape_err(id, "rank-3 [C,H,W] input", format!("{input:?}"))),
            };
            if kernel[0] > h || kernel[1] > w {
                return Err(shape_err(id, format!("input at least {}x{}", kernel[0], kernel[1]), format!("{h}x{w}")));
            }
            Ok((vec![ch, (h - kernel[0]) / stride[0] + 1, (w - kernel[1]) / stride[1] + 1], 0))
        }
        LayerKind::BatchNorm { channels } => {
            if input.first() != Some(channels) {
                return Err(shape_err(id, format!("{channels} channels"), format!("{input:?}")));
            }
            Ok((input.to_vec(), 0))
        }
        LayerKind::Flatten => Ok((vec![numel(input)], 0)),
        LayerKind::Transpose { perm } => {
            if perm.len() != input.len() {
                return Err(shape_err(id, format!("rank {}", perm.len()), format!("{input:?}")));
            }
            Ok((perm.iter().map(|&p| input[p]).collect(), 0))
        }
        LayerKind::Residual(b) => {
            let mut cur = input.to_vec();
            let mut neurons = 0;
            for inner in &b.path {
                let (o, n) = kind_output_shape(inner.id, &inner.kind, &cur)?;
                cur = o;
                neurons += n;
            }
            let short = match &b.shortcut {
                Shortcut::Identity => input.to_vec(),
                Shortcut::Projection { conv, .. } => {
                    let o = conv_out(id, conv, input)?;
                    neurons += numel(&o);
                    o
                }
            };
            if short != cur {
                return Err(shape_err(id, format!("shortcut output {cur:?} (compute path)"), format!("{short:?}")));
            }
            Ok((cur, neurons))
        }
    }
}

/// Assigns input/output shapes to every layer, checking adjacency.
pub fn infer_shapes(graph: &NetworkGraph) -> Result<ShapeTable, NetError> {
    let mut cur = graph.input_shape.clone();
    let mut layers = Vec::with_capacity(graph.layers.len());
    for l in &graph.layers {
        let (out, neurons) = kind_output_shape(l.id, &l.kind, &cur)?;
        layers.push(LayerShape { id: l.id, input: std::mem::replace(&mut cur, out.clone()), output: out, neurons });
    }
    Ok(ShapeTable { input: graph.input_shape.clone(), layers })
}

/// Sum of weighted-layer output sizes.
pub fn neuron_count(graph: &NetworkGraph) -> Result<usize, NetError> {
    Ok(infer_shapes(graph)?.neurons())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{Activation, Layer, NetworkGraph, ResidualBlock};

    fn conv(ic: usize, oc: usize, k: usize, s: usize, p: usize) -> LayerKind {
        LayerKind::Convolution(ConvSpec {
            in_channels: ic,
            out_channels: oc,
            kernel: [k, k],
            stride: [s, s],
            padding: [p, p],
            activation: Activation::Relu,
        })
    }

    #[test]
    fn first_dave_conv_is_48x48x24() {
        let g = NetworkGraph::sequential("c", vec![3, 100, 100], vec![conv(3, 24, 5, 2, 0)]);
        let t = infer_shapes(&g).unwrap();
        assert_eq!(t.output_dims(), &[24, 48, 48]);
        assert_eq!(t.neurons(), 48 * 48 * 24);
    }

    #[test]
    fn kernel_larger_than_input_is_shape_error() {
        let g = NetworkGraph::sequential("c", vec![1, 5, 5], vec![conv(1, 2, 7, 1, 0)]);
        assert!(matches!(infer_shapes(&g), Err(NetError::Shape { .. })));
    }

    #[test]
    fn residual_shortcut_must_agree() {
        let block = |shortcut| {
            LayerKind::Residual(ResidualBlock {
                path: vec![Layer::new(0, conv(2, 4, 3, 1, 1))],
                shortcut,
            })
        };
        let g = NetworkGraph::sequential("r", vec![2, 4, 4], vec![block(Shortcut::Identity)]);
        assert!(matches!(infer_shapes(&g), Err(NetError::Shape { .. })));
        let proj = Shortcut::Projection {
            conv: ConvSpec {
                in_channels: 2,
                out_channels: 4,
                kernel: [1, 1],
                stride: [1, 1],
                padding: [0, 0],
                activation: Activation::None,
            },
            params: None,
        };
        let g = NetworkGraph::sequential("r", vec![2, 4, 4], vec![block(proj)]);
        let t = infer_shapes(&g).unwrap();
        assert_eq!(t.output_dims(), &[4, 4, 4]);
        // compute-path conv plus projection conv
        assert_eq!(t.neurons(), 2 * 64);
    }

    #[test]
    fn reshaping_layers_contribute_no_neurons() {
        let g = NetworkGraph::sequential(
            "f",
            vec![2, 3, 3],
            vec![
                LayerKind::BatchNorm { channels: 2 },
                LayerKind::MaxPool { kernel: [2, 2], stride: [1, 1] },
                LayerKind::Transpose { perm: vec![1, 2, 0] },
                LayerKind::Flatten,
                LayerKind::FullyConnected { in_features: 8, out_features: 3, activation: Activation::None },
            ],
        );
        let t = infer_shapes(&g).unwrap();
        assert_eq!(t.layers[1].output, vec![2, 2, 2]);
        assert_eq!(t.layers[2].output, vec![2, 2, 2]);
        assert_eq!(t.neurons(), 3);
    }
}
