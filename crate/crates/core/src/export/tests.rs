use super::*;
use crate::netgraph::{Activation, ConvSpec, LayerKind, NetworkGraph, Params, Prepared};
use crate::synth::{mlp, random_network, uniform_inputs, GraphOptions};
use crate::verify::{make_property, margin, PropertyKind};

fn f64_forward(g: &NetworkGraph, x: &[f64]) -> Vec<f64> {
    Prepared::<f64>::new(g).unwrap().run_one(x)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

fn perturb_norms(g: &mut NetworkGraph) {
    for l in &mut g.layers {
        if let (LayerKind::BatchNorm { channels }, Some(Params(p))) = (&l.kind, &mut l.params) {
            for c in 0..*channels {
                let t = c as f32;
                p[0].data_mut()[c] = 1.5 - 0.2 * t;
                p[1].data_mut()[c] = 0.1 * t - 0.2;
                p[2].data_mut()[c] = 0.05 * t;
                p[3].data_mut()[c] = 0.5 + t;
            }
        }
    }
}

fn conv(inc: usize, out: usize, k: usize, p: usize, act: Activation) -> LayerKind {
    LayerKind::Convolution(ConvSpec { in_channels: inc, out_channels: out, kernel: [k, k], stride: [1, 1], padding: [p, p], activation: act })
}

fn conv_net() -> NetworkGraph {
    let g = NetworkGraph::sequential(
        "convnet",
        vec![2, 6, 6],
        vec![
            LayerKind::BatchNorm { channels: 2 },
            conv(2, 3, 3, 0, Activation::Relu),
            conv(3, 2, 3, 1, Activation::None),
            LayerKind::BatchNorm { channels: 2 },
            LayerKind::Flatten,
            LayerKind::FullyConnected { in_features: 32, out_features: 5, activation: Activation::Relu },
            LayerKind::FullyConnected { in_features: 5, out_features: 2, activation: Activation::None },
        ],
    );
    let mut g = crate::distill::init_student(&g, 4, None).unwrap();
    perturb_norms(&mut g);
    g
}

fn inputs(g: &NetworkGraph, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let t = uniform_inputs(&g.input_shape, n, -1.0, 1.0, seed);
    let per: usize = g.input_shape.iter().product();
    t.data().chunks(per).map(|c| c.iter().map(|&v| v as f64).collect()).collect()
}

#[test]
fn nnet_round_trip_mlp() {
    let g = mlp(&[5, 8, 8, 3], Activation::Relu, 7);
    let text = nnet_text(&g, None).unwrap();
    for x in inputs(&g, 20, 1) {
        let y = reference_eval_text(ExportTarget::NNet, &text, &x).unwrap();
        assert!(close(&y, &f64_forward(&g, &x), 1e-6));
    }
}

#[test]
fn nnet_folds_linear_layers_and_norms() {
    let mut g = NetworkGraph::sequential(
        "mixed",
        vec![4],
        vec![
            LayerKind::FullyConnected { in_features: 4, out_features: 6, activation: Activation::None },
            LayerKind::BatchNorm { channels: 6 },
            LayerKind::FullyConnected { in_features: 6, out_features: 5, activation: Activation::Relu },
            LayerKind::FullyConnected { in_features: 5, out_features: 2, activation: Activation::Relu },
        ],
    );
    g = crate::distill::init_student(&g, 2, None).unwrap();
    perturb_norms(&mut g);
    let text = nnet_text(&g, None).unwrap();
    let m = NnetModel::parse(&text).unwrap();
    // linear fc and norm fuse into the first ReLU layer; a final ReLU gets an identity layer
    assert_eq!(m.layer_sizes, vec![4, 5, 2, 2]);
    for x in inputs(&g, 20, 3) {
        assert!(close(&m.eval(&x), &f64_forward(&g, &x), 1e-6));
    }
}

#[test]
fn nnet_margin_output_matches_violation() {
    for seed in 0..10 {
        let g = mlp(&[3, 6, 3], Activation::Relu, seed);
        let center = Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap();
        let kinds = [
            PropertyKind::ClassInvariant(0),
            PropertyKind::Interval { lo: vec![-0.5, -1.0, -0.3], hi: vec![0.5, 1.0, 0.3] },
        ];
        for kind in kinds {
            let p = make_property(center.clone(), 0.5, kind, None).unwrap();
            let text = nnet_text(&g, Some(&p)).unwrap();
            let m = NnetModel::parse(&text).unwrap();
            assert_eq!(m.layer_sizes.last(), Some(&1));
            assert_eq!(m.mins, p.input_box().lo);
            let forms = p.forms(3).unwrap();
            for x in inputs(&g, 50, seed + 100) {
                let want = margin(&forms, &f64_forward(&g, &x));
                let got = m.eval(&x)[0];
                assert!((got - want).abs() < 1e-9 * (1.0 + want.abs()), "{got} vs {want}");
                assert_eq!(got >= 0.0, want >= 0.0);
            }
        }
    }
}

#[test]
fn nnet_rejects_convolutions() {
    let err = nnet_text(&conv_net(), None).unwrap_err();
    assert!(matches!(err, ExportError::UnsupportedLayer { index, .. } if index == LayerId::new(1)), "{err}");
}

#[test]
fn nnet_rejects_smooth_activations() {
    let g = mlp(&[2, 3, 1], Activation::Sigmoid, 1);
    assert!(matches!(nnet_text(&g, None), Err(ExportError::UnsupportedLayer { .. })));
}

#[test]
fn enn_round_trip_conv_net() {
    let g = conv_net();
    let text = enn_text(&g).unwrap();
    let m = EnnModel::parse(&text).unwrap();
    // both norms fold away: into the first conv's inputs and the second conv's rows
    assert_eq!(m.layers.len(), 4);
    for x in inputs(&g, 20, 5) {
        assert!(close(&m.eval(&x).unwrap(), &f64_forward(&g, &x), 1e-6));
    }
}

#[test]
fn enn_rejects_sigmoid_and_pooling() {
    let g = mlp(&[2, 3, 1], Activation::Sigmoid, 1);
    assert!(matches!(enn_text(&g), Err(ExportError::UnsupportedLayer { .. })));
    let p = NetworkGraph::sequential(
        "pooled",
        vec![1, 4, 4],
        vec![
            LayerKind::MaxPool { kernel: [2, 2], stride: [2, 2] },
            LayerKind::Flatten,
            LayerKind::FullyConnected { in_features: 4, out_features: 1, activation: Activation::None },
        ],
    );
    let p = crate::distill::init_student(&p, 1, None).unwrap();
    assert!(matches!(enn_text(&p), Err(ExportError::UnsupportedLayer { index, .. }) if index == LayerId::new(0)));
}

#[test]
fn rlv_round_trip_random_relu_nets() {
    let opts = GraphOptions { smooth_activations: false, ..GraphOptions::default() };
    for seed in 0..30 {
        let g = random_network(seed, &opts);
        let text = rlv_text(&g, None).unwrap();
        for x in inputs(&g, 5, seed) {
            let y = reference_eval_text(ExportTarget::Rlv, &text, &x).unwrap();
            assert!(close(&y, &f64_forward(&g, &x), 1e-6), "seed {seed}");
        }
    }
}

#[test]
fn rlv_property_encodes_violation() {
    let g = mlp(&[2, 4, 2], Activation::Relu, 3);
    let p = make_property(Tensor::new(vec![2], vec![0.0, 0.5]).unwrap(), 0.25, PropertyKind::ClassInvariant(1), None).unwrap();
    let text = rlv_text(&g, Some(&p)).unwrap();
    let m = RlvModel::parse(&text).unwrap();
    assert_eq!(m.asserts.len(), 2 * 2 + 1);
    let forms = p.forms(2).unwrap();
    for x in inputs(&g, 30, 8) {
        let v = m.eval(&x).unwrap();
        let want = margin(&forms, &f64_forward(&g, &x));
        assert!((m.value(&v, "violation").unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn rlv_rejects_unbounded_box() {
    let g = mlp(&[2, 2, 1], Activation::Relu, 3);
    let p = make_property(Tensor::zeros(vec![2]), f64::INFINITY, PropertyKind::Interval { lo: vec![0.0], hi: vec![1.0] }, None).unwrap();
    assert!(matches!(rlv_text(&g, Some(&p)), Err(ExportError::UnboundedInput(0))));
}

#[test]
fn rlv_rejects_tanh() {
    let g = mlp(&[2, 3, 1], Activation::Tanh, 1);
    assert!(matches!(rlv_text(&g, None), Err(ExportError::UnsupportedLayer { .. })));
}

#[test]
fn exports_are_byte_identical() {
    let g = conv_net();
    let m = mlp(&[4, 4, 2], Activation::Relu, 0);
    assert_eq!(enn_text(&g).unwrap(), enn_text(&g.clone()).unwrap());
    assert_eq!(rlv_text(&g, None).unwrap(), rlv_text(&g, None).unwrap());
    assert_eq!(nnet_text(&m, None).unwrap(), nnet_text(&m, None).unwrap());
}

#[test]
fn malformed_files_are_parse_errors() {
    let text = nnet_text(&mlp(&[2, 2, 1], Activation::Relu, 0), None).unwrap();
    let broken = text.replacen("e0,", "eX,", 1);
    assert!(matches!(NnetModel::parse(&broken), Err(ExportError::Parse { .. })));
    let truncated: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
    assert!(matches!(NnetModel::parse(&truncated), Err(ExportError::Parse { .. })));
    assert!(matches!(EnnModel::parse("enn,1,\ninput,2,\nlayers,1,\nfc,1,2,relu,\n1,2,\n"), Err(ExportError::Parse { line: 5, .. })));
    assert!(matches!(RlvModel::parse("Input a\nReLU b 0 1.0 c\n"), Err(ExportError::Parse { line: 2, .. })));
}

#[test]
fn zero_weight_file_evaluates_to_zero() {
    let text = "2,3,1,4,\n3,4,1,\n0,\n-1,-1,-1,\n1,1,1,\n0,0,0,0,\n1,1,1,1,\n\
                0,0,0,\n0,0,0,\n0,0,0,\n0,0,0,\n0,\n0,\n0,\n0,\n0,0,0,0,\n0,\n";
    let m = NnetModel::parse(text).unwrap();
    assert_eq!(m.eval(&[0.3, -0.7, 0.9]), vec![0.0]);
}

#[test]
fn target_names() {
    for t in ExportTarget::ALL {
        assert_eq!(t.to_string().parse::<ExportTarget>().unwrap(), t);
    }
    assert!("onnx".parse::<ExportTarget>().is_err());
}
