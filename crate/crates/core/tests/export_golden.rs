//! Exports of small fixed networks compared byte-for-byte with checked-in
//! files. Set `UPDATE_GOLDEN=1` to rewrite them after an intended change.

use std::path::PathBuf;

use nn_refactor::export::ExportTarget;
use nn_refactor::netgraph::{Activation, ConvSpec, LayerKind, NetworkGraph, Params};
use nn_refactor::tensor::Tensor;
use nn_refactor::verify::{make_property, PropertyKind, RobustnessProperty};

/// Fills every weight with a short repeating pattern of exact binary fractions.
fn with_pattern(mut g: NetworkGraph) -> NetworkGraph {
    let mut k = 0usize;
    for l in &mut g.layers {
        let bn = matches!(l.kind, LayerKind::BatchNorm { .. });
        let ts = l
            .kind
            .param_dims()
            .into_iter()
            .enumerate()
            .map(|(slot, dims)| {
                let n = dims.iter().product();
                let v = (0..n)
                    .map(|_| {
                        k += 1;
                        let x = ((k * 7) % 13) as f32 / 8.0 - 0.75;
                        if bn && slot == 3 { 1.0 + x.abs() } else { x }
                    })
                    .collect();
                Tensor::new(dims, v).unwrap()
            })
            .collect();
        l.params = Some(Params(ts));
    }
    g
}

fn fc(i: usize, o: usize, a: Activation) -> LayerKind {
    LayerKind::FullyConnected { in_features: i, out_features: o, activation: a }
}

fn dense() -> NetworkGraph {
    with_pattern(NetworkGraph::sequential(
        "dense",
        vec![3],
        vec![fc(3, 4, Activation::Relu), LayerKind::BatchNorm { channels: 4 }, fc(4, 2, Activation::None)],
    ))
}

fn conv() -> NetworkGraph {
    let c = ConvSpec { in_channels: 1, out_channels: 2, kernel: [2, 2], stride: [1, 1], padding: [0, 0], activation: Activation::Relu };
    with_pattern(NetworkGraph::sequential(
        "conv",
        vec![1, 3, 3],
        vec![LayerKind::Convolution(c), LayerKind::Flatten, fc(8, 2, Activation::None)],
    ))
}

fn property() -> RobustnessProperty {
    let center = Tensor::new(vec![3], vec![0.25, -0.5, 0.75]).unwrap();
    make_property(center, 0.125, PropertyKind::ClassInvariant(0), None).unwrap()
}

fn check(file: &str, text: String) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(file);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &text).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(text, want, "{file} changed; rerun with UPDATE_GOLDEN=1 if intended");
}

#[test]
fn nnet_golden() {
    check("dense.nnet", ExportTarget::NNet.render(&dense(), None).unwrap());
    check("dense.margin.nnet", ExportTarget::NNet.render(&dense(), Some(&property())).unwrap());
}

#[test]
fn enn_golden() {
    check("conv.enn", ExportTarget::ExtendedNNet.render(&conv(), None).unwrap());
}

#[test]
fn rlv_golden() {
    check("dense.rlv", ExportTarget::Rlv.render(&dense(), Some(&property())).unwrap());
    check("conv.rlv", ExportTarget::Rlv.render(&conv(), None).unwrap());
}
