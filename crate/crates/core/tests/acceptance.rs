//! Acceptance suite: one pass/fail line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test --test acceptance`.

use std::collections::BTreeSet;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use nn_refactor::distill::{distill, grad_hard_mse, init_student, loss_hard_mse, relative_error, Dataset, DistillConfig, Optimizer, Task, Trainable};
use nn_refactor::driver::{sweet_spot_search, CandidateResult, PropertyResult, SearchBudget};
use nn_refactor::export::{nnet_text, reference_eval_text, ExportTarget, NnetModel};
use nn_refactor::netgraph::reference::dave2;
use nn_refactor::netgraph::{
    infer_shapes, load_network, neuron_count, save_network, Activation, ConvSpec, LayerId, LayerKind, NetworkGraph, Prepared,
    Shortcut,
};
use nn_refactor::synth::{mlp, random_architecture, random_network, rng, uniform_inputs, GraphOptions};
use nn_refactor::tensor::Tensor;
use nn_refactor::transform::{apply_plan, droppable, Factor, LayerPredicate, LayerRef, PartialOp, TransformOp};
use nn_refactor::verify::{check_property, ibp_bounds, make_property, margin, IntervalBox, Outcome, PropertyKind, VerifyBudget};

// Tolerances.
const GRAD_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-3;
const DISTILL_MAX_MSE: f64 = 0.05;
const DISTILL_MAX_EPOCHS: usize = 200;
const SOUNDNESS_SAMPLES: usize = 100_000;
const AFFINE_TOL: f64 = 1e-6;
const EXPORT_TOL: f64 = 1e-6;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn set(v: &[usize]) -> BTreeSet<usize> {
    v.iter().copied().collect()
}

fn f64_forward(p: &Prepared<f64>, x: &[f64]) -> Vec<f64> {
    p.run_one(x)
}

fn criterion_1() -> Check {
    let g = dave2();
    let rows: &[(&[usize], &str, usize)] = &[
        (&[], "0123456789A", 82669),
        (&[0, 1, 2, 3, 4, 7, 8, 9], "_____56___A", 11),
        (&[1, 2, 3, 4], "0____56789A", 56621),
        (&[7, 8, 9, 10], "0123456____", 81345),
        (&[3, 4], "012__56789A", 77933),
        (&[7, 8], "0123456__9A", 81405),
        (&[0, 1, 2, 3, 4, 7], "_____56_89A", 161),
    ];
    for (drop, name, want) in rows {
        let plan = if drop.is_empty() { vec![] } else { vec![TransformOp::Drop(set(drop))] };
        let (v, n) = apply_plan(&g, &plan).map_err(|e| e.to_string())?;
        let got = neuron_count(&v).map_err(|e| e.to_string())?;
        ensure(&n == name && got == *want, || format!("{n}: {got} neurons, expected {name}: {want}"))?;
    }
    Ok(format!("{} variants exact", rows.len()))
}

fn sizes(g: &NetworkGraph) -> Vec<(LayerId, usize)> {
    g.layers
        .iter()
        .filter_map(|l| match &l.kind {
            LayerKind::FullyConnected { out_features, .. } => Some((l.id, *out_features)),
            LayerKind::Convolution(c) => Some((l.id, c.out_channels)),
            _ => None,
        })
        .collect()
}

fn random_op(r: &mut ChaCha8Rng, g: &NetworkGraph) -> TransformOp {
    let d = droppable(g);
    let pick = |r: &mut ChaCha8Rng, from: &[usize]| -> BTreeSet<usize> {
        from.iter().copied().filter(|_| r.random_bool(0.35)).collect()
    };
    let residual: Vec<usize> =
        g.layers.iter().filter(|l| matches!(l.kind, LayerKind::Residual(_))).map(|l| l.id.index).collect();
    match r.random_range(0..4) {
        0 => TransformOp::Drop(pick(r, &d)),
        1 => {
            let scalable: Vec<usize> = sizes(g).into_iter().map(|(i, _)| i.index).collect::<BTreeSet<_>>().into_iter().collect();
            let mut t: BTreeSet<LayerRef> = pick(r, &scalable).into_iter().map(LayerRef::Index).collect();
            if r.random_bool(0.2) {
                t.insert(LayerRef::Input);
            }
            let f = [(1, 2), (3, 4), (3, 2), (2, 1), (1, 3)][r.random_range(0..5)];
            TransformOp::Scale(t, Factor::new(f.0, f.1).unwrap())
        }
        2 => TransformOp::Linearize(pick(r, &residual)),
        _ => TransformOp::Forall(LayerPredicate::IsResidual, PartialOp::Linearize),
    }
}

fn criterion_2() -> Check {
    let opts = GraphOptions { max_layers: 8, ..GraphOptions::default() };
    let (mut applied, mut composed) = (0, 0);
    for seed in 0..200u64 {
        let mut r = rng(seed);
        let g = random_architecture(&mut r, &opts);
        let out_dims = infer_shapes(&g).map_err(|e| format!("seed {seed}: {e}"))?.output_dims().to_vec();
        let mut cur = g.clone();
        let steps = r.random_range(1..=4);
        for _ in 0..steps {
            let op = random_op(&mut r, &cur);
            let Ok(next) = op.apply(&cur) else { continue };
            applied += 1;
            let t = infer_shapes(&next).map_err(|e| format!("seed {seed}: {e}"))?;
            ensure(t.output_dims() == out_dims.as_slice(), || format!("seed {seed}: output dims changed by {op:?}"))?;
            if let TransformOp::Scale(targets, f) = &op {
                let before = sizes(&cur);
                let after = sizes(&next);
                for (i, n) in &before {
                    if targets.contains(&LayerRef::Index(i.index)) {
                        let want = f.floor_mul(*n);
                        let got = after.iter().find(|(j, _)| j == i).map(|(_, m)| *m);
                        ensure(got == Some(want), || format!("seed {seed}: layer {i} scaled {n} -> {got:?}, want {want}"))?;
                    }
                }
                if targets.contains(&LayerRef::Input) {
                    let k = cur.input_shape.len();
                    let axes: Vec<usize> = if k == 3 { vec![1, 2] } else { (0..k).collect() };
                    for a in axes {
                        ensure(next.input_shape[a] == f.floor_mul(cur.input_shape[a]), || format!("seed {seed}: input axis {a}"))?;
                    }
                }
            }
            cur = next;
        }
        // drop composition: drop(A) then drop(B) equals drop(A u B)
        let d = droppable(&g);
        let a: BTreeSet<usize> = d.iter().copied().filter(|_| r.random_bool(0.3)).collect();
        let b: BTreeSet<usize> = d.iter().copied().filter(|i| !a.contains(i) && r.random_bool(0.3)).collect();
        let both: BTreeSet<usize> = a.union(&b).copied().collect();
        let seq = apply_plan(&g, &[TransformOp::Drop(a.clone()), TransformOp::Drop(b.clone())]);
        let once = apply_plan(&g, &[TransformOp::Drop(both)]);
        // only valid plans count; a valid sequence must agree with the union
        if let Ok((x, nx)) = seq {
            composed += 1;
            match once {
                Ok((y, ny)) => ensure(x == y && nx == ny, || format!("seed {seed}: drop composition differs"))?,
                Err(e) => return Err(format!("seed {seed}: drop {a:?} then {b:?} is valid but their union fails: {e}")),
            }
        }
    }
    Ok(format!("200 graphs, {applied} applied ops, {composed} drop compositions"))
}

fn smooth(kind: &mut LayerKind) {
    let fix = |a: &mut Activation| {
        if *a == Activation::Relu {
            *a = Activation::Tanh;
        }
    };
    match kind {
        LayerKind::FullyConnected { activation, .. } => fix(activation),
        LayerKind::Convolution(c) => fix(&mut c.activation),
        LayerKind::Residual(b) => {
            for l in &mut b.path {
                smooth(&mut l.kind);
            }
            if let Shortcut::Projection { conv, .. } = &mut b.shortcut {
                fix(&mut conv.activation);
            }
        }
        _ => {}
    }
}

fn criterion_3() -> Check {
    let opts = GraphOptions { max_layers: 5, max_units: 12, ..GraphOptions::default() };
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut g = random_network(seed, &opts);
        g.layers.iter_mut().for_each(|l| smooth(&mut l.kind));
        let net = Trainable::<f64>::new(&g).map_err(|e| e.to_string())?;
        let n = 3;
        let x = uniform_inputs(&g.input_shape, n, -1.0, 1.0, seed + 1000).cast::<f64>();
        let y = uniform_inputs(&[net.output_len()], n, -1.0, 1.0, seed + 2000).cast::<f64>();
        let rec = net.forward(x.data(), n);
        let dy = grad_hard_mse(&rec.output, y.data());
        let analytic = net.backward(rec, dy);
        let loss = |p: &Trainable<f64>| loss_hard_mse(&p.forward(x.data(), n).output, y.data());
        for s in 0..net.params.len() {
            if !net.trainable[s] {
                continue;
            }
            for k in 0..net.params[s].len() {
                let (mut a, mut b) = (net.clone(), net.clone());
                a.params[s][k] += FD_STEP;
                b.params[s][k] -= FD_STEP;
                let fd = (loss(&a) - loss(&b)) / (2.0 * FD_STEP);
                let an = analytic[s][k];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-2);
                worst = worst.max(rel);
                ensure(rel <= GRAD_REL_TOL, || format!("seed {seed} slot {s}[{k}]: analytic {an} vs fd {fd}"))?;
            }
        }
    }
    Ok(format!("50 networks, max relative error {worst:.2e}"))
}

fn criterion_4() -> Check {
    let teacher = mlp(&[16, 8, 4, 1], Activation::Relu, 42);
    let data = Dataset::shared(uniform_inputs(&[16], 2000, -1.0, 1.0, 43));
    let (student, name) = apply_plan(&teacher.without_weights(), &[TransformOp::Drop(set(&[1]))]).map_err(|e| e.to_string())?;
    let cfg = DistillConfig {
        epochs: DISTILL_MAX_EPOCHS,
        batch_size: 32,
        optimizer: Optimizer::adam(1e-2),
        seed: 7,
        ..DistillConfig::default()
    };
    let (_, report) = distill(&teacher, &student, &data, &cfg).map_err(|e| e.to_string())?;
    let best = report.best_error().unwrap_or(f64::INFINITY);
    ensure(best <= DISTILL_MAX_MSE, || format!("{name}: best validation MSE {best} after {} epochs", report.val_error.len()))?;
    let warm = init_student(&teacher.without_weights(), 1, Some(&teacher)).map_err(|e| e.to_string())?;
    let x = &data.teacher_inputs;
    let e0 = relative_error(&teacher, &warm, x, x, Task::Regression).map_err(|e| e.to_string())?;
    ensure(e0 == 0.0, || format!("warm-started student error {e0}"))?;
    Ok(format!("{name}: MSE {best:.4} at epoch {}, warm start 0", report.best_epoch.unwrap_or(0) + 1))
}

fn sample_box(r: &mut ChaCha8Rng, b: &IntervalBox) -> Vec<f64> {
    b.lo.iter().zip(&b.hi).map(|(l, h)| if h > l { r.random_range(*l..=*h) } else { *l }).collect()
}

fn criterion_5() -> Check {
    let opts = GraphOptions { max_layers: 4, max_units: 8, convolutional: false, residual: false, smooth_activations: false };
    let (mut proved, mut refuted) = (0, 0);
    let mut seed = 0u64;
    while proved < 100 {
        seed += 1;
        ensure(seed < 2000, || format!("only {proved} true verdicts in 2000 attempts"))?;
        let g = random_network(seed, &opts);
        let p = Prepared::<f64>::new(&g).map_err(|e| e.to_string())?;
        let n_in = g.input_shape[0];
        let mut r = rng(seed + 50_000);
        let center: Vec<f32> = (0..n_in).map(|_| r.random_range(-1.0..1.0)).collect();
        let eps = r.random_range(0.01..0.2);
        let y0 = f64_forward(&p, &center.iter().map(|&v| v as f64).collect::<Vec<_>>());
        let cbox = IntervalBox::new(vec![n_in], center.iter().map(|&c| c as f64 - eps).collect(), center.iter().map(|&c| c as f64 + eps).collect())
            .map_err(|e| e.to_string())?;
        let ib = ibp_bounds(&g, &cbox).map_err(|e| e.to_string())?;
        let scale = r.random_range(0.3..1.5);
        let kind = if y0.len() > 1 && r.random_bool(0.5) {
            let c = (0..y0.len()).max_by(|&a, &b| y0[a].total_cmp(&y0[b])).unwrap();
            PropertyKind::ClassInvariant(c)
        } else {
            let lo = y0.iter().zip(&ib.lo).map(|(y, l)| y - (y - l) * scale).collect();
            let hi = y0.iter().zip(&ib.hi).map(|(y, h)| y + (h - y) * scale).collect();
            PropertyKind::Interval { lo, hi }
        };
        let prop = make_property(Tensor::new(vec![n_in], center).unwrap(), eps, kind, None).map_err(|e| e.to_string())?;
        let forms = prop.forms(y0.len()).map_err(|e| e.to_string())?;
        let budget = VerifyBudget { max_regions: 2048, seed, ..VerifyBudget::default() };
        let v = check_property(&g, &prop, &budget).map_err(|e| e.to_string())?;
        let b = prop.input_box();
        match v.outcome {
            Outcome::True => {
                proved += 1;
                for i in 0..SOUNDNESS_SAMPLES {
                    let x = sample_box(&mut r, &b);
                    let m = margin(&forms, &f64_forward(&p, &x));
                    ensure(m < 0.0, || format!("seed {seed}: sample {i} violates a proved property (margin {m})"))?;
                }
            }
            Outcome::False(cex) => {
                refuted += 1;
                let x: Vec<f64> = cex.data().iter().map(|&v| v as f64).collect();
                ensure(b.contains(&x), || format!("seed {seed}: counterexample outside the box"))?;
                let m = margin(&forms, &f64_forward(&p, &x));
                ensure(m >= 0.0, || format!("seed {seed}: counterexample does not violate (margin {m})"))?;
            }
            _ => {}
        }
    }
    Ok(format!("{proved} true verdicts with {SOUNDNESS_SAMPLES} samples each, {refuted} counterexamples valid"))
}

fn affine_net(seed: u64) -> NetworkGraph {
    let mut r = rng(seed);
    let d: Vec<usize> = (0..r.random_range(2..=4)).map(|_| r.random_range(1..=6)).collect();
    mlp(&d, Activation::None, seed)
}

fn criterion_6() -> Check {
    for seed in 0..100u64 {
        let g = random_network(seed, &GraphOptions::default());
        let p = Prepared::<f64>::new(&g).map_err(|e| e.to_string())?;
        let n: usize = g.input_shape.iter().product();
        let mut r = rng(seed + 7000);
        let c: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let eps = r.random_range(0.05..0.5);
        let b = IntervalBox::new(g.input_shape.clone(), c.iter().map(|v| v - eps).collect(), c.iter().map(|v| v + eps).collect())
            .map_err(|e| e.to_string())?;
        let o = ibp_bounds(&g, &b).map_err(|e| e.to_string())?;
        for i in 0..2000 {
            let y = f64_forward(&p, &sample_box(&mut r, &b));
            ensure(o.contains(&y), || format!("seed {seed}: sample {i} escapes the bounds"))?;
        }
    }
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let g = affine_net(seed);
        let p = Prepared::<f64>::new(&g).map_err(|e| e.to_string())?;
        let n = g.input_shape[0];
        let mut r = rng(seed + 9000);
        let c: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let rad: Vec<f64> = (0..n).map(|_| r.random_range(0.0..0.5)).collect();
        let b = IntervalBox::new(vec![n], c.iter().zip(&rad).map(|(c, r)| c - r).collect(), c.iter().zip(&rad).map(|(c, r)| c + r).collect())
            .map_err(|e| e.to_string())?;
        let o = ibp_bounds(&g, &b).map_err(|e| e.to_string())?;
        // exact range: f(c) -+ sum_j |W_ij| r_j with W recovered column by column
        let yc = f64_forward(&p, &c);
        let mut spread = vec![0.0; yc.len()];
        for j in 0..n {
            let mut e = c.clone();
            e[j] += 1.0;
            let col = f64_forward(&p, &e);
            for (s, (a, b)) in spread.iter_mut().zip(col.iter().zip(&yc)) {
                *s += (a - b).abs() * rad[j];
            }
        }
        for k in 0..yc.len() {
            let d = (o.lo[k] - (yc[k] - spread[k])).abs().max((o.hi[k] - (yc[k] + spread[k])).abs());
            worst = worst.max(d);
            ensure(d <= AFFINE_TOL, || format!("affine seed {seed} output {k}: bounds off by {d}"))?;
        }
    }
    Ok(format!("100 networks contained, 100 affine networks exact (max deviation {worst:.1e})"))
}

fn conv_net(seed: u64) -> NetworkGraph {
    let conv = |i, o, k, p, a| {
        LayerKind::Convolution(ConvSpec { in_channels: i, out_channels: o, kernel: [k, k], stride: [1, 1], padding: [p, p], activation: a })
    };
    let g = NetworkGraph::sequential(
        "conv",
        vec![2, 7, 7],
        vec![
            conv(2, 3, 3, 1, Activation::Relu),
            conv(3, 4, 3, 0, Activation::None),
            LayerKind::BatchNorm { channels: 4 },
            LayerKind::Flatten,
            LayerKind::FullyConnected { in_features: 100, out_features: 6, activation: Activation::Relu },
            LayerKind::FullyConnected { in_features: 6, out_features: 2, activation: Activation::None },
        ],
    );
    init_student(&g, seed, None).unwrap()
}

fn criterion_7() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let relu = GraphOptions { smooth_activations: false, ..GraphOptions::default() };
    let cases: Vec<(ExportTarget, NetworkGraph)> = (0..4u64)
        .flat_map(|s| {
            [
                (ExportTarget::NNet, mlp(&[6, 10, 8, 3], Activation::Relu, s)),
                (ExportTarget::ExtendedNNet, conv_net(s)),
                (ExportTarget::Rlv, random_network(s + 20, &relu)),
            ]
        })
        .collect();
    let mut checked = 0;
    for (k, (t, g)) in cases.iter().enumerate() {
        let text = t.render(g, None).map_err(|e| format!("{t}: {e}"))?;
        let p = Prepared::<f64>::new(g).map_err(|e| e.to_string())?;
        let xs = uniform_inputs(&g.input_shape, 100, -1.0, 1.0, 500 + k as u64);
        for i in 0..100 {
            let x: Vec<f64> = xs.row(i).iter().map(|&v| v as f64).collect();
            let got = reference_eval_text(*t, &text, &x).map_err(|e| e.to_string())?;
            let want = f64_forward(&p, &x);
            let d = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ensure(got.len() == want.len() && d <= EXPORT_TOL, || format!("{t} case {k} input {i}: deviation {d}"))?;
            checked += 1;
        }
        // byte-identical after a save/load round trip of the network
        let path = dir.path().join(format!("net{k}.toml"));
        save_network(g, &path).map_err(|e| e.to_string())?;
        let again = t.render(&load_network(&path).map_err(|e| e.to_string())?, None).map_err(|e| e.to_string())?;
        ensure(again == text, || format!("{t} case {k}: re-export differs"))?;
    }
    let mut points = 0;
    for s in 0..10u64 {
        let g = mlp(&[4, 8, 3], Activation::Relu, 100 + s);
        let p = Prepared::<f64>::new(&g).map_err(|e| e.to_string())?;
        let center = uniform_inputs(&[4], 1, -0.5, 0.5, s).reshape(vec![4]).unwrap();
        let kind = if s % 2 == 0 {
            PropertyKind::ClassInvariant((s / 2) as usize % 3)
        } else {
            PropertyKind::Interval { lo: vec![-0.5; 3], hi: vec![0.5; 3] }
        };
        let prop = make_property(center, 0.4, kind, None).map_err(|e| e.to_string())?;
        let m = NnetModel::parse(&nnet_text(&g, Some(&prop)).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let forms = prop.forms(3).map_err(|e| e.to_string())?;
        let xs = uniform_inputs(&[4], 200, -1.0, 1.0, 900 + s);
        for i in 0..200 {
            let x: Vec<f64> = xs.row(i).iter().map(|&v| v as f64).collect();
            let violated = margin(&forms, &f64_forward(&p, &x)) >= 0.0;
            ensure((m.eval(&x)[0] >= 0.0) == violated, || format!("margin net {s} point {i}: encoding disagrees"))?;
            points += 1;
        }
    }
    Ok(format!("{checked} round-trip evaluations, {points} margin points, re-exports identical"))
}

fn criterion_8() -> Check {
    let g = dave2();
    let order_len = droppable(&g).len();
    let limit = (order_len as f64).log2().ceil() as usize + 2;
    // error falls and verification time grows with the neuron count
    let eval = |plan: &[TransformOp]| -> CandidateResult {
        let (v, name) = apply_plan(&g, plan).unwrap();
        let neurons = neuron_count(&v).unwrap();
        CandidateResult {
            name,
            neurons,
            rel_error: Some(1.0 - neurons as f64 / 82669.0),
            properties: vec![PropertyResult { id: "p".into(), outcome: Outcome::True, seconds: neurons as f64 / 1000.0 }],
            failure: None,
            accepted: false,
            plan: plan.to_vec(),
        }
    };
    let order = nn_refactor::driver::drop_order(&g);
    let mut probes = Vec::new();
    for k in 0..=order_len {
        let plan = if k == 0 { vec![] } else { vec![TransformOp::Drop(order[..k].iter().copied().collect())] };
        let target = eval(&plan);
        let budget = SearchBudget::new(target.rel_error.unwrap(), target.properties[0].seconds, usize::MAX).map_err(|e| e.to_string())?;
        let out = sweet_spot_search(&g, &budget, eval);
        let best = out.best.as_ref().map(|b| b.name.clone());
        ensure(best.as_deref() == Some(target.name.as_str()), || format!("feasible {}: search returned {best:?}", target.name))?;
        ensure(out.trace.len() <= limit, || format!("feasible {}: {} probes > {limit}", target.name, out.trace.len()))?;
        probes.push(out.trace.len());
        if k > 0 {
            let zero = SearchBudget::new(0.0, target.properties[0].seconds, usize::MAX).map_err(|e| e.to_string())?;
            let out = sweet_spot_search(&g, &zero, eval);
            let names: BTreeSet<_> = out.trace.iter().map(|r| r.name.clone()).collect();
            ensure(out.best.is_none() && !out.trace.is_empty() && names.len() == out.trace.len(), || {
                format!("e_max = 0 with t_max of {}: best {:?}", target.name, out.best.map(|b| b.name))
            })?;
        }
    }
    Ok(format!("{} feasible targets found in at most {} probes (limit {limit})", probes.len(), probes.iter().max().unwrap()))
}

fn criterion_9() -> Check {
    let bin = env!("CARGO_BIN_EXE_nn-refactor");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scen = dir.path().join("scenario");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).env_remove("NN_REFACTOR_SEED").output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    };
    run(&["scaffold", "--out", scen.to_str().unwrap(), "--seed", "11"])?;
    let cfg = scen.join("config.toml");
    let text = std::fs::read_to_string(&cfg).map_err(|e| e.to_string())?.replace("time_decimals = 2", "time_decimals = 0");
    std::fs::write(&cfg, text).map_err(|e| e.to_string())?;
    let report = scen.join("out/report.csv");
    run(&["run", cfg.to_str().unwrap(), "--seed", "11"])?;
    let first = std::fs::read(&report).map_err(|e| e.to_string())?;
    std::fs::remove_dir_all(scen.join("out")).map_err(|e| e.to_string())?;
    run(&["run", cfg.to_str().unwrap(), "--seed", "11"])?;
    let second = std::fs::read(&report).map_err(|e| e.to_string())?;
    ensure(first == second, || format!("reports differ:\n{}\n{}", String::from_utf8_lossy(&first), String::from_utf8_lossy(&second)))?;
    let rows = String::from_utf8_lossy(&first).lines().count() - 1;
    Ok(format!("two runs byte-identical ({rows} rows)"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("neuron counts of the reference variants", criterion_1),
        ("transformation algebra on random graphs", criterion_2),
        ("analytic vs finite-difference gradients", criterion_3),
        ("desk-scale distillation", criterion_4),
        ("verifier soundness", criterion_5),
        ("interval bound containment", criterion_6),
        ("export round trip", criterion_7),
        ("sweet-spot search", criterion_8),
        ("end-to-end determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let res = f();
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(msg) => println!("criterion {}: PASS  {name}: {msg} [{secs:.1}s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {msg} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
