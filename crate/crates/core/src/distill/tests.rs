use super::*;
use crate::netgraph::{forward_batch, Activation, LayerKind};
use crate::synth::{mlp, uniform_inputs};
use crate::transform;

#[test]
fn init_is_deterministic() {
    let g = crate::netgraph::reference::dronet_toy();
    let a = init_student(&g, 7, None).unwrap();
    let b = init_student(&g, 7, None).unwrap();
    assert_eq!(a, b);
    assert!(a.has_weights());
    assert_ne!(a, init_student(&g, 8, None).unwrap());
}

#[test]
fn fan_in_variance() {
    let k = 100;
    let g = crate::netgraph::NetworkGraph::sequential(
        "v",
        vec![k],
        vec![LayerKind::FullyConnected { in_features: k, out_features: 100, activation: Activation::None }],
    );
    let g = init_student(&g, 1, None).unwrap();
    let w = g.layers[0].params.as_ref().unwrap().0[0].data();
    assert_eq!(w.len(), 10_000);
    let mean = w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64;
    let var = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / w.len() as f64;
    let expected = 2.0 / k as f64;
    assert!(var < 3.0 * expected && var > expected / 3.0, "variance {var}");
}

#[test]
fn warm_start_copies_identical_student() {
    let teacher = mlp(&[4, 6, 3, 1], Activation::Relu, 2);
    let student = init_student(&teacher.without_weights(), 99, Some(&teacher)).unwrap();
    assert_eq!(student, teacher);
    let x = uniform_inputs(&[4], 20, -1.0, 1.0, 3);
    assert_eq!(relative_error(&teacher, &student, &x, &x, Task::Regression).unwrap(), 0.0);
}

#[test]
fn warm_start_survives_linearization() {
    let teacher = init_student(&crate::netgraph::reference::dronet_toy(), 5, None).unwrap();
    let lin = transform::linearize(&teacher.without_weights(), &[2, 3, 4].into()).unwrap();
    let s = init_student(&lin, 1, Some(&teacher)).unwrap();
    let tw: Vec<f32> = teacher.params().iter().flat_map(|(t, _)| t.data().to_vec()).collect();
    let sw: Vec<f32> = s.params().iter().flat_map(|(t, _)| t.data().to_vec()).collect();
    // only the projection shortcuts disappear
    assert!(sw.iter().all(|v| tw.contains(v)));
}

#[test]
fn mse_examples() {
    assert_eq!(loss_hard_mse(&[1.0f32, 2.0], &[1.0, 2.0]), 0.0);
    assert_eq!(loss_hard_mse(&[1.0f32, 2.0], &[0.0, 0.0]), 2.5);
    let a = uniform_inputs(&[7], 5, -2.0, 2.0, 1);
    let b = uniform_inputs(&[7], 5, -2.0, 2.0, 2);
    let mut oracle = 0.0f64;
    for i in 0..a.len() {
        let d = a.data()[i] as f64 - b.data()[i] as f64;
        oracle += d * d;
    }
    oracle /= a.len() as f64;
    assert!((loss_hard_mse(a.data(), b.data()) - oracle).abs() < 1e-7);
}

#[test]
fn soft_ce_examples() {
    let z = [0.3f64, -1.2, 2.0];
    for t in [0.5, 1.0, 4.0] {
        let m = z.iter().fold(f64::MIN, |m, &v| m.max(v / t));
        let e: Vec<f64> = z.iter().map(|v| (v / t - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let entropy: f64 = -e.iter().map(|v| (v / s) * (v / s).ln()).sum::<f64>();
        assert!((loss_soft_ce(&z, &z, 3, t, None) - entropy).abs() < 1e-12);
        // any other student does worse
        let other = [0.0f64, 0.0, 0.0];
        assert!(loss_soft_ce(&other, &z, 3, t, None) > entropy);
    }
    // student (1,0) against teacher (0,1) at T=1
    let p = [1.0 / (1.0 + 1f64.exp()), 1f64.exp() / (1.0 + 1f64.exp())];
    let lq = [1.0 - (1f64.exp() + 1.0).ln(), -(1f64.exp() + 1.0).ln()];
    let oracle = -(p[0] * lq[0] + p[1] * lq[1]);
    assert!((loss_soft_ce(&[1.0f64, 0.0], &[0.0, 1.0], 2, 1.0, None) - oracle).abs() < 1e-12);
    // high temperature flattens the targets
    let g = grad_soft_ce(&[0.0f64, 0.0], &[3.0, -3.0], 2, 1e6, None);
    assert!(g.iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn soft_ce_gradient_matches_differences() {
    let s = [0.4f64, -0.3, 1.1, 0.2, 0.0, -0.7];
    let t = [1.0f64, 0.5, -0.5, 0.1, 0.9, 0.3];
    let labels = [2usize, 1];
    for lab in [None, Some(&labels[..])] {
        let g = grad_soft_ce(&s, &t, 3, 2.0, lab);
        for k in 0..s.len() {
            let h = 1e-6;
            let mut a = s;
            let mut b = s;
            a[k] += h;
            b[k] -= h;
            let fd = (loss_soft_ce(&a, &t, 3, 2.0, lab) - loss_soft_ce(&b, &t, 3, 2.0, lab)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8, "{k}: {fd} vs {}", g[k]);
        }
    }
}

#[test]
fn zero_network_has_zero_gradients() {
    let mut g = mlp(&[3, 4, 2], Activation::None, 1);
    for (t, _) in g.params_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = uniform_inputs(&[3], 5, -1.0, 1.0, 1);
    let y = Tensor::zeros(vec![5, 2]);
    let grads = backprop_grads(&g, &x, LossMode::HardMse, &y).unwrap();
    assert_eq!(grads.loss, 0.0);
    assert!(grads.grads.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn relu_at_zero_uses_zero_subgradient() {
    // y = relu(w*x + b) with w*x + b == 0 exactly
    let mut g = mlp(&[1, 1, 1], Activation::Relu, 1);
    {
        let mut p = g.params_mut();
        p[0].0.data_mut()[0] = 1.0;
        p[1].0.data_mut()[0] = 0.0;
        p[2].0.data_mut()[0] = 1.0;
    }
    let x = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
    let y = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
    let grads = backprop_grads(&g, &x, LossMode::HardMse, &y).unwrap();
    assert_eq!(grads.grads[0].data()[0], 0.0);
    assert_eq!(grads.grads[1].data()[0], 0.0);
}

/// Central differences on the f64 loss surface.
fn fd_oracle(net: &Trainable<f64>, x: &[f64], n: usize, y: &[f64], h: f64) -> Vec<Vec<f64>> {
    let loss = |p: &Trainable<f64>| loss_hard_mse(&p.forward(x, n).output, y);
    let mut out = Vec::new();
    for s in 0..net.params.len() {
        let mut g = vec![0.0; net.params[s].len()];
        for (k, gk) in g.iter_mut().enumerate() {
            let mut a = net.clone();
            a.params[s][k] += h;
            let mut b = net.clone();
            b.params[s][k] -= h;
            *gk = (loss(&a) - loss(&b)) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

#[test]
fn two_layer_mlp_gradients_match_differences() {
    let g = mlp(&[5, 7, 3], Activation::Tanh, 11);
    let x = uniform_inputs(&[5], 4, -1.0, 1.0, 12).cast::<f64>();
    let y = uniform_inputs(&[3], 4, -1.0, 1.0, 13).cast::<f64>();
    let net = Trainable::<f64>::new(&g).unwrap();
    let rec = net.forward(x.data(), 4);
    let dy = grad_hard_mse(&rec.output, y.data());
    let analytic = net.backward(rec, dy);
    let fd = fd_oracle(&net, x.data(), 4, y.data(), 1e-3);
    for (a, f) in analytic.iter().flatten().zip(fd.iter().flatten()) {
        let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-2);
        assert!(rel <= 1e-4, "{a} vs {f}");
    }
}

#[test]
fn sgd_step_decreases_quadratic_loss() {
    let g = mlp(&[3, 1], Activation::None, 4);
    let x = uniform_inputs(&[3], 8, -1.0, 1.0, 5);
    let y = uniform_inputs(&[1], 8, -1.0, 1.0, 6);
    let mut net = Trainable::<f32>::new(&g).unwrap();
    let rec = net.forward(x.data(), 8);
    let before = loss_hard_mse(&rec.output, y.data());
    let grads = net.backward(rec, grad_hard_mse(&net.forward(x.data(), 8).output, y.data()));
    let mut opt = OptimizerState::new(Optimizer::sgd(1e-2), &net.params);
    let tr = net.trainable.clone();
    opt.step(&mut net.params, &grads, &tr);
    let after = loss_hard_mse(&net.forward(x.data(), 8).output, y.data());
    assert!(after < before);
}

#[test]
fn exact_copy_reaches_threshold_in_first_epoch() {
    let teacher = mlp(&[4, 8, 1], Activation::Relu, 3);
    let data = Dataset::shared(uniform_inputs(&[4], 100, -1.0, 1.0, 1));
    let cfg = DistillConfig { error_threshold: Some(1e-9), epochs: 20, ..Default::default() };
    let (s, r) = distill(&teacher, &teacher, &data, &cfg).unwrap();
    assert_eq!(r.stop_reason, StopReason::Threshold);
    assert_eq!(r.val_error.len(), 1);
    assert_eq!(r.best_epoch, Some(0));
    assert_eq!(s, teacher);
}

#[test]
fn zero_timeout_runs_no_epochs() {
    let teacher = mlp(&[4, 8, 1], Activation::Relu, 3);
    let data = Dataset::shared(uniform_inputs(&[4], 50, -1.0, 1.0, 1));
    let cfg = DistillConfig { timeout: Some(0.0), ..Default::default() };
    let (_, r) = distill(&teacher, &teacher.without_weights(), &data, &cfg).unwrap();
    assert_eq!(r.stop_reason, StopReason::Timeout);
    assert!(r.val_error.is_empty());
    assert_eq!(r.best_epoch, None);
}

#[test]
fn budget_is_checked_before_training() {
    let teacher = mlp(&[4, 8, 1], Activation::Relu, 3);
    let data = Dataset::shared(uniform_inputs(&[4], 50, -1.0, 1.0, 1));
    let cfg = DistillConfig { param_budget: Some(10), ..Default::default() };
    match distill(&teacher, &teacher, &data, &cfg) {
        Err(DistillError::BudgetExceeded { report, .. }) => assert_eq!(report.stop_reason, StopReason::Budget),
        other => panic!("{other:?}"),
    }
}

#[test]
fn training_is_deterministic_and_keeps_best_epoch() {
    let teacher = mlp(&[6, 10, 1], Activation::Relu, 8);
    let student = transform::scale(&teacher, &[transform::LayerRef::Index(0)].into(), transform::Factor::new(1, 2).unwrap()).unwrap();
    let data = Dataset::shared(uniform_inputs(&[6], 300, -1.0, 1.0, 9));
    let cfg = DistillConfig { epochs: 8, batch_size: 16, seed: 4, ..Default::default() };
    let (s1, r1) = distill(&teacher, &student, &data, &cfg).unwrap();
    let (s2, r2) = distill(&teacher, &student, &data, &cfg).unwrap();
    assert_eq!(r1.train_loss, r2.train_loss);
    assert_eq!(r1.val_error, r2.val_error);
    assert_eq!(s1, s2);
    let best = r1.best_epoch.unwrap();
    let min = r1.val_error.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(r1.val_error[best], min);
    let (_, val) = data.split();
    let vx = data.student_inputs.select_rows(&val);
    let e = relative_error(&teacher, &s1, &vx, &vx, Task::Regression).unwrap();
    assert!((e - min).abs() < 1e-9 * min.max(1.0), "{e} vs {min}");
}

#[test]
fn relative_error_examples() {
    // teacher y = x, student y = x + 1
    let mk = |b: f32| {
        let mut g = mlp(&[1, 1], Activation::None, 0);
        let mut p = g.params_mut();
        p[0].0.data_mut()[0] = 1.0;
        p[1].0.data_mut()[0] = b;
        drop(p);
        g
    };
    let x = Tensor::new(vec![3, 1], vec![0.0, 1.0, 2.0]).unwrap();
    assert_eq!(relative_error(&mk(0.0), &mk(1.0), &x, &x, Task::Regression).unwrap(), 1.0);
    assert_eq!(relative_error(&mk(0.0), &mk(0.0), &x, &x, Task::Classification).unwrap(), 1.0);

    let t = mlp(&[5, 6, 2], Activation::Tanh, 21);
    let s = mlp(&[5, 3, 2], Activation::Relu, 22);
    let xs = uniform_inputs(&[5], 6, -1.0, 1.0, 3);
    let (yt, ys) = (forward_batch(&t, &xs).unwrap(), forward_batch(&s, &xs).unwrap());
    let mut oracle = 0.0f64;
    for (a, b) in yt.data().iter().zip(ys.data()) {
        oracle += (*a as f64 - *b as f64).powi(2);
    }
    oracle /= yt.len() as f64;
    let e = relative_error(&t, &s, &xs, &xs, Task::Regression).unwrap();
    assert!((e - oracle).abs() < 1e-7);
}
