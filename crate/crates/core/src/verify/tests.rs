use super::*;
use crate::netgraph::{forward_batch, Activation, LayerKind, NetworkGraph, Params};
use crate::synth::{mlp, random_network, uniform_inputs, GraphOptions};
use crate::tensor::Array;

fn affine(inputs: usize, w: Vec<f32>, b: Vec<f32>) -> NetworkGraph {
    let out = b.len();
    let mut g = NetworkGraph::sequential(
        "affine",
        vec![inputs],
        vec![LayerKind::FullyConnected { in_features: inputs, out_features: out, activation: Activation::None }],
    );
    g.layers[0].params = Some(Params(vec![Tensor::new(vec![out, inputs], w).unwrap(), Tensor::new(vec![out], b).unwrap()]));
    g
}

fn interval(center: Vec<f32>, eps: f64, lo: f64, hi: f64) -> RobustnessProperty {
    let n = center.len();
    make_property(Tensor::new(vec![n], center).unwrap(), eps, PropertyKind::Interval { lo: vec![lo], hi: vec![hi] }, None)
        .unwrap()
}

#[test]
fn zero_epsilon_box_is_the_center() {
    let p = interval(vec![0.25, -1.0], 0.0, -1.0, 1.0);
    let b = p.input_box();
    assert_eq!(b.lo, vec![0.25, -1.0]);
    assert_eq!(b.lo, b.hi);
}

#[test]
fn steer_delta_converts_degrees() {
    let p = make_property(
        Tensor::zeros(vec![1]),
        0.1,
        PropertyKind::SteerDelta { label: 0.0, bound_degrees: 10.0, units: AngleUnits::Radians },
        None,
    )
    .unwrap();
    match p.constraint {
        OutputConstraint::Interval { lo, hi } => {
            assert!((lo[0] + 0.1745).abs() < 1e-4);
            assert!((hi[0] - 0.1745).abs() < 1e-4);
        }
        c => panic!("{c:?}"),
    }
    assert!((normalized_epsilon(2.0, 255.0) - 2.0 / 255.0).abs() < 1e-15);
}

#[test]
fn class_invariant_forms() {
    let p = make_property(Tensor::zeros(vec![3]), 0.0, PropertyKind::ClassInvariant(1), None).unwrap();
    let f = p.forms(2).unwrap();
    assert_eq!(f, vec![LinearForm { a: vec![1.0, -1.0], b: 0.0 }]);
    // logit_1 - logit_0 > 0 holds, so the margin is negative
    assert!(margin(&f, &[0.2, 0.9]) < 0.0);
    assert!(margin(&f, &[0.9, 0.9]) >= 0.0);
}

#[test]
fn identity_network_maps_box_to_itself() {
    let g = affine(2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]);
    let b = IntervalBox::new(vec![2], vec![-1.0, 0.5], vec![2.0, 0.75]).unwrap();
    assert_eq!(ibp_bounds(&g, &b).unwrap().lo, b.lo);
    assert_eq!(ibp_bounds(&g, &b).unwrap().hi, b.hi);
}

#[test]
fn difference_is_exact() {
    let g = affine(2, vec![1.0, -1.0], vec![0.0]);
    let b = IntervalBox::new(vec![2], vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let o = ibp_bounds(&g, &b).unwrap();
    assert_eq!((o.lo[0], o.hi[0]), (-1.0, 1.0));
}

#[test]
fn chained_affine_layers_are_exact() {
    // y = h0 - h1 with h0 = h1 = x: the true range is {0}
    let mut g = mlp(&[1, 2, 1], Activation::None, 0);
    {
        let mut p = g.params_mut();
        p[0].0.data_mut().copy_from_slice(&[1.0, 1.0]);
        p[1].0.data_mut().copy_from_slice(&[0.0, 0.0]);
        p[2].0.data_mut().copy_from_slice(&[1.0, -1.0]);
        p[3].0.data_mut()[0] = 0.0;
    }
    let b = IntervalBox::new(vec![1], vec![-1.0], vec![1.0]).unwrap();
    let o = ibp_bounds(&g, &b).unwrap();
    assert_eq!((o.lo[0], o.hi[0]), (0.0, 0.0));
}

#[test]
fn monte_carlo_samples_stay_inside() {
    for seed in 0..5 {
        let g = random_network(seed, &GraphOptions::default());
        let x = uniform_inputs(&g.input_shape, 500, -1.0, 1.0, seed + 100);
        let n = x.dims()[1..].iter().product::<usize>();
        let b = IntervalBox::new(g.input_shape.clone(), vec![-1.0; n], vec![1.0; n]).unwrap();
        let o = ibp_bounds(&g, &b).unwrap();
        let y = forward_batch(&g, &x.cast::<f64>()).unwrap();
        for i in 0..y.rows() {
            assert!(o.contains(y.row(i)), "seed {seed} sample {i}");
        }
    }
}

#[test]
fn bisection_children_cover_parent() {
    let b = IntervalBox::new(vec![2], vec![0.0, -2.0], vec![1.0, 2.0]).unwrap();
    let (d, _) = b.widest();
    assert_eq!(d, 1);
    let (l, r) = b.bisect(d);
    assert_eq!(l.hi[1], r.lo[1]);
    assert_eq!((l.lo[1], r.hi[1]), (-2.0, 2.0));
    let g = affine(2, vec![0.5, -3.0], vec![1.0]);
    let pb = ibp_bounds(&g, &b).unwrap();
    for c in [l, r] {
        assert!(pb.encloses(&ibp_bounds(&g, &c).unwrap()));
    }
}

#[test]
fn point_property_is_proved_immediately() {
    let g = affine(1, vec![1.0], vec![0.0]);
    let v = check_property(&g, &interval(vec![0.1], 0.0, -0.5, 0.5), &VerifyBudget::default()).unwrap();
    assert_eq!(v.outcome, Outcome::True);
    assert_eq!(v.regions, 1);
}

#[test]
fn identity_violation_is_found() {
    let g = affine(1, vec![1.0], vec![0.0]);
    let p = interval(vec![0.0], 1.0, -0.5, 0.5);
    let v = check_property(&g, &p, &VerifyBudget::default()).unwrap();
    match v.outcome {
        Outcome::False(x) => assert!(x.data()[0].abs() >= 0.5 && x.data()[0].abs() <= 1.0),
        o => panic!("{o:?}"),
    }
    let cex = falsify(&g, &p, 1000, 3).unwrap().unwrap();
    assert!(cex.data()[0].abs() >= 0.5);
}

#[test]
fn whole_space_constraint_has_no_counterexample() {
    let g = affine(1, vec![1.0], vec![0.0]);
    let p = interval(vec![0.0], 1.0, -1e30, 1e30);
    assert!(falsify(&g, &p, 500, 1).unwrap().is_none());
}

/// y = relu(x) - relu(-x) - x is identically zero, but plain interval
/// bounds over [-1, 1] only give [-2, 2].
fn cancelling_net() -> NetworkGraph {
    let mut g = NetworkGraph::sequential(
        "cancel",
        vec![1],
        vec![
            LayerKind::FullyConnected { in_features: 1, out_features: 3, activation: Activation::Relu },
            LayerKind::FullyConnected { in_features: 3, out_features: 1, activation: Activation::None },
        ],
    );
    // third hidden unit carries relu(x + 2) = x + 2 on [-1, 1]
    g.layers[0].params =
        Some(Params(vec![Tensor::new(vec![3, 1], vec![1.0, -1.0, 1.0]).unwrap(), Tensor::new(vec![3], vec![0.0, 0.0, 2.0]).unwrap()]));
    g.layers[1].params =
        Some(Params(vec![Tensor::new(vec![1, 3], vec![1.0, -1.0, -1.0]).unwrap(), Tensor::new(vec![1], vec![2.0]).unwrap()]));
    g
}

#[test]
fn refinement_budget_decides_unknown_versus_true() {
    let g = cancelling_net();
    let xs = Array::new(vec![201, 1], (0..=200).map(|i| -1.0 + i as f64 / 100.0).collect()).unwrap();
    let ys = forward_batch(&g, &xs).unwrap();
    assert!(ys.data().iter().all(|y| y.abs() < 1e-12));
    let p = interval(vec![0.0], 1.0, -0.5, 0.5);
    let tight = VerifyBudget { max_regions: 1, ..Default::default() };
    assert_eq!(check_property(&g, &p, &tight).unwrap().outcome, Outcome::Unknown);
    let v = check_property(&g, &p, &VerifyBudget::default()).unwrap();
    assert_eq!(v.outcome, Outcome::True);
    assert!(v.regions > 1);
}

#[test]
fn zero_timeout_is_out_of_resources() {
    let g = cancelling_net();
    let p = interval(vec![0.0], 1.0, -0.5, 0.5);
    let v = check_property(&g, &p, &VerifyBudget { timeout: Some(0.0), ..Default::default() }).unwrap();
    assert_eq!(v.outcome, Outcome::Oor);
}

#[test]
fn verdicts_are_deterministic() {
    let g = random_network(3, &GraphOptions { convolutional: false, ..Default::default() });
    let n = g.input_shape[0];
    let out: usize = crate::netgraph::infer_shapes(&g).unwrap().output_dims().iter().product();
    let p = make_property(
        Tensor::zeros(vec![n]),
        0.05,
        PropertyKind::Interval { lo: vec![-1.0; out], hi: vec![1.0; out] },
        None,
    )
    .unwrap();
    let b = VerifyBudget { max_regions: 64, ..Default::default() };
    let a = check_property(&g, &p, &b).unwrap();
    let c = check_property(&g, &p, &b).unwrap();
    assert_eq!((a.outcome, a.regions), (c.outcome, c.regions));
}

#[test]
fn mismatched_center_is_rejected() {
    let g = affine(2, vec![1.0, 1.0], vec![0.0]);
    assert!(matches!(check_property(&g, &interval(vec![0.0], 0.1, -1.0, 1.0), &VerifyBudget::default()), Err(VerifyError::Dims(_))));
}

#[test]
fn property_document_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = Tensor::new(vec![2], vec![0.5, -0.25]).unwrap();
    crate::tensor::write_blob(&dir.path().join("c.r4vt"), &c).unwrap();
    let p = make_property(c, 0.125, PropertyKind::Interval { lo: vec![-1.0], hi: vec![2.0] }, Some((0.0, 1.0))).unwrap();
    let text = property_document(&p, "c.r4vt");
    assert_eq!(parse_property(&text, dir.path()).unwrap(), p);
    let raw = "center = \"c.r4vt\"\nepsilon_raw = 2\ninput_scale = 255\n[constraint]\ntype = \"class_invariant\"\nclass = 0\n";
    let q = parse_property(raw, dir.path()).unwrap();
    assert!((q.epsilon - 2.0 / 255.0).abs() < 1e-15);
}
