//! Teacher/student distillation: initialization, gradients, losses,
//! optimizers and the training loop with its four stopping rules.

mod data;
mod init;
mod loss;
mod optim;
mod tape;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::Dataset;
pub use init::init_student;
pub use loss::{grad_hard_mse, grad_soft_ce, loss_hard_mse, loss_soft_ce, LossMode};
pub use optim::{Optimizer, OptimizerState};
pub use tape::{Record, Trainable};

use crate::netgraph::{infer_shapes, NetError, NetworkGraph, Prepared};
use crate::tensor::{numel, Array, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("invalid distillation config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error(transparent)]
    Shape(#[from] NetError),
    #[error("non-finite loss or gradient in epoch {epoch}")]
    NonFinite { epoch: usize, report: Box<TrainReport> },
    #[error("estimated footprint {estimate} exceeds the budget of {budget}")]
    BudgetExceeded { estimate: usize, budget: usize, report: Box<TrainReport> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub loss: LossMode,
    /// Stop once validation relative MSE is at or below this.
    pub error_threshold: Option<f64>,
    /// Wall-clock seconds, checked before each epoch.
    pub timeout: Option<f64>,
    /// Maximum parameters plus per-batch activations.
    pub param_budget: Option<usize>,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            optimizer: Optimizer::default(),
            loss: LossMode::HardMse,
            error_threshold: None,
            timeout: None,
            param_budget: None,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        if self.epochs == 0 {
            return Err(DistillError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(DistillError::Config("batch_size must be at least 1".into()));
        }
        if let LossMode::SoftCe { temperature } = self.loss {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(DistillError::Config(format!("temperature must be positive, got {temperature}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Epochs,
    Threshold,
    Timeout,
    Budget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_error: Vec<f64>,
    /// Epoch (0-based) with the lowest validation error, if any completed.
    pub best_epoch: Option<usize>,
    pub stop_reason: StopReason,
    pub seconds: f64,
}

impl TrainReport {
    fn empty(stop_reason: StopReason) -> Self {
        Self { train_loss: Vec::new(), val_error: Vec::new(), best_epoch: None, stop_reason, seconds: 0.0 }
    }

    pub fn best_error(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.val_error[e])
    }
}

/// Loss value and gradients of every parameter tensor, in the order of
/// [`NetworkGraph::params`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub loss: f64,
    pub grads: Vec<Array<T>>,
}

enum Labels<'a> {
    Classes(&'a [usize]),
    Values(&'a [f32]),
}

fn loss_and_grad<T: Scalar>(mode: LossMode, out: &[T], target: &[T], classes: usize, labels: Option<&Labels>) -> (f64, Vec<T>) {
    match mode {
        LossMode::HardMse => {
            let (l, g) = (loss_hard_mse(out, target), grad_hard_mse(out, target));
            match labels {
                Some(Labels::Values(v)) => {
                    let lv: Vec<T> = v.iter().map(|&x| T::from_f32(x)).collect();
                    let (l2, g2) = (loss_hard_mse(out, &lv), grad_hard_mse(out, &lv));
                    let half = T::from_f64(0.5);
                    (0.5 * l + 0.5 * l2, g.into_iter().zip(g2).map(|(a, b)| half * a + half * b).collect())
                }
                _ => (l, g),
            }
        }
        LossMode::SoftCe { temperature } => {
            let cls = match labels {
                Some(Labels::Classes(c)) => Some(*c),
                _ => None,
            };
            (loss_soft_ce(out, target, classes, temperature, cls), grad_soft_ce(out, target, classes, temperature, cls))
        }
    }
}

fn finite<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Gradients of `loss(graph(batch), targets)` w.r.t. every parameter tensor.
pub fn backprop_grads<T: Scalar>(
    graph: &NetworkGraph,
    batch: &Array<T>,
    loss: LossMode,
    targets: &Array<T>,
) -> Result<Gradients<T>, DistillError> {
    let net = Trainable::<T>::new(graph)?;
    let n = batch.rows();
    if batch.len() != n * net.input_len() || targets.len() != n * net.output_len() {
        return Err(NetError::Shape {
            index: crate::netgraph::LayerId::INPUT,
            expected: format!("{} inputs and {} targets per sample", net.input_len(), net.output_len()),
            actual: format!("{:?} and {:?}", batch.dims(), targets.dims()),
        }
        .into());
    }
    let rec = net.forward(batch.data(), n);
    let (l, dy) = loss_and_grad(loss, &rec.output, targets.data(), net.output_len(), None);
    let grads = net.backward(rec, dy);
    if !l.is_finite() || !grads.iter().all(|g| finite(g)) {
        return Err(DistillError::NonFinite { epoch: 0, report: Box::new(TrainReport::empty(StopReason::Epochs)) });
    }
    let grads = grads
        .into_iter()
        .zip(net.slot_dims())
        .map(|(g, d)| Array::new(d.clone(), g).expect("slot dims"))
        .collect();
    Ok(Gradients { loss: l, grads })
}

/// Static footprint estimate: parameter count plus one batch of activations.
pub fn footprint(graph: &NetworkGraph, batch_size: usize) -> Result<usize, NetError> {
    let t = infer_shapes(graph)?;
    let acts: usize = numel(&t.input) + t.layers.iter().map(|l| numel(&l.output)).sum::<usize>();
    let params: usize = graph
        .layers
        .iter()
        .map(|l| match &l.kind {
            crate::netgraph::LayerKind::Residual(b) => {
                let inner: usize = b.path.iter().map(|i| i.kind.param_dims().iter().map(|d| numel(d)).sum::<usize>()).sum();
                let short = match &b.shortcut {
                    crate::netgraph::Shortcut::Projection { conv, .. } => {
                        crate::netgraph::conv_param_dims(conv).iter().map(|d| numel(d)).sum()
                    }
                    _ => 0,
                };
                inner + short
            }
            k => k.param_dims().iter().map(|d| numel(d)).sum(),
        })
        .sum();
    Ok(params + batch_size * acts)
}

/// Evaluates `graph` on all rows of `inputs` in batches of `chunk`.
pub fn evaluate(graph: &NetworkGraph, inputs: &Tensor, chunk: usize) -> Result<Tensor, NetError> {
    let p = Prepared::<f32>::new(graph)?;
    let n = inputs.rows();
    let chunk = chunk.max(1);
    let mut out = Vec::with_capacity(n * numel(p.output_dims()));
    for start in (0..n).step_by(chunk) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        out.extend(p.run(&inputs.select_rows(&idx))?.into_data());
    }
    let mut dims = vec![n];
    dims.extend_from_slice(p.output_dims());
    Ok(Tensor::new(dims, out).expect("evaluated length"))
}

fn mse_f64(a: &[f32], b: &[f32]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.len() as f64
}

fn argmax(r: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in r.iter().enumerate() {
        if *v > r[best] {
            best = i;
        }
    }
    best
}

/// Regression: MSE between student and teacher outputs. Classification:
/// fraction of samples on which their argmax classes agree.
pub fn relative_error(
    teacher: &NetworkGraph,
    student: &NetworkGraph,
    teacher_inputs: &Tensor,
    student_inputs: &Tensor,
    task: Task,
) -> Result<f64, DistillError> {
    if teacher_inputs.rows() != student_inputs.rows() {
        return Err(DistillError::Data("teacher and student inputs have different sample counts".into()));
    }
    let t = evaluate(teacher, teacher_inputs, 256)?;
    let s = evaluate(student, student_inputs, 256)?;
    if t.dims() != s.dims() {
        return Err(NetError::Shape {
            index: crate::netgraph::LayerId::INPUT,
            expected: format!("student output {:?}", t.dims()),
            actual: format!("{:?}", s.dims()),
        }
        .into());
    }
    Ok(match task {
        Task::Regression => mse_f64(s.data(), t.data()),
        Task::Classification => {
            let n = t.rows();
            if n == 0 {
                return Ok(1.0);
            }
            let agree = (0..n).filter(|&i| argmax(t.row(i)) == argmax(s.row(i))).count();
            agree as f64 / n as f64
        }
    })
}

/// Trains `student` to reproduce `teacher` on `data`. Missing student weights
/// are initialized by [`init_student`] with the teacher as warm start. The
/// returned student carries the weights of the best validation epoch.
pub fn distill(
    teacher: &NetworkGraph,
    student: &NetworkGraph,
    data: &Dataset,
    cfg: &DistillConfig,
) -> Result<(NetworkGraph, TrainReport), DistillError> {
    cfg.validate()?;
    let started = Instant::now();
    if data.is_empty() {
        return Err(DistillError::Data("dataset has no samples".into()));
    }
    let mut student = init_student(student, cfg.seed, Some(teacher))?;
    if let Some(budget) = cfg.param_budget {
        let estimate = footprint(&student, cfg.batch_size)?;
        if estimate > budget {
            return Err(DistillError::BudgetExceeded { estimate, budget, report: Box::new(TrainReport::empty(StopReason::Budget)) });
        }
    }
    let targets = evaluate(teacher, &data.teacher_inputs, cfg.batch_size.max(64))?;
    let mut net = Trainable::<f32>::new(&student)?;
    if data.student_inputs.row_dims().iter().product::<usize>() != net.input_len() {
        return Err(DistillError::Data(format!(
            "student inputs have per-sample dims {:?}, network expects {:?}",
            data.student_inputs.row_dims(),
            student.input_shape
        )));
    }
    let classes = net.output_len();
    if targets.len() != data.len() * classes {
        return Err(DistillError::Data("teacher and student output sizes differ".into()));
    }
    let class_labels: Option<Vec<usize>> = match (&data.labels, cfg.loss) {
        (Some(l), LossMode::SoftCe { .. }) => {
            let v: Vec<usize> = l.data().iter().map(|&c| c as usize).collect();
            if l.len() != data.len() || v.iter().any(|&c| c >= classes) {
                return Err(DistillError::Data("class labels must be one in-range index per sample".into()));
            }
            Some(v)
        }
        (Some(l), LossMode::HardMse) if l.len() != targets.len() => {
            return Err(DistillError::Data("regression labels must match the output dims".into()));
        }
        _ => None,
    };
    let (train, val) = data.split();
    let val_idx = if val.is_empty() { train.clone() } else { val };
    let val_inputs = data.student_inputs.select_rows(&val_idx);
    let val_targets = targets.select_rows(&val_idx);

    let mut opt = OptimizerState::new(cfg.optimizer, &net.params);
    let mut report = TrainReport::empty(StopReason::Epochs);
    let mut best: Option<(f64, Vec<Vec<f32>>)> = None;
    let mut order = train.clone();
    let validation_error = |net: &Trainable<f32>| -> f64 {
        let mut out = Vec::with_capacity(val_targets.len());
        for chunk in (0..val_inputs.rows()).collect::<Vec<_>>().chunks(cfg.batch_size.max(64)) {
            let x = val_inputs.select_rows(chunk);
            out.extend(net.forward(x.data(), chunk.len()).output);
        }
        mse_f64(&out, val_targets.data())
    };

    for epoch in 0..cfg.epochs {
        if cfg.timeout.is_some_and(|t| started.elapsed().as_secs_f64() >= t) {
            report.stop_reason = StopReason::Timeout;
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = data.student_inputs.select_rows(batch);
            let y = targets.select_rows(batch);
            let lab_vals;
            let lab_cls: Vec<usize>;
            let labels = match (&class_labels, &data.labels) {
                (Some(c), _) => {
                    lab_cls = batch.iter().map(|&i| c[i]).collect();
                    Some(Labels::Classes(&lab_cls))
                }
                (None, Some(l)) if cfg.loss == LossMode::HardMse => {
                    lab_vals = l.select_rows(batch);
                    Some(Labels::Values(lab_vals.data()))
                }
                _ => None,
            };
            let rec = net.forward(x.data(), batch.len());
            let (l, dy) = loss_and_grad(cfg.loss, &rec.output, y.data(), classes, labels.as_ref());
            let grads = net.backward(rec, dy);
            if !l.is_finite() || !grads.iter().all(|g| finite(g)) {
                report.seconds = started.elapsed().as_secs_f64();
                return Err(DistillError::NonFinite { epoch, report: Box::new(report) });
            }
            total += l * batch.len() as f64;
            let trainable = net.trainable.clone();
            opt.step(&mut net.params, &grads, &trainable);
        }
        let err = validation_error(&net);
        report.train_loss.push(total / order.len().max(1) as f64);
        report.val_error.push(err);
        if !err.is_finite() {
            report.seconds = started.elapsed().as_secs_f64();
            return Err(DistillError::NonFinite { epoch, report: Box::new(report) });
        }
        if best.as_ref().is_none_or(|(b, _)| err < *b) {
            best = Some((err, net.params.clone()));
            report.best_epoch = Some(epoch);
        }
        if cfg.error_threshold.is_some_and(|t| err <= t) {
            report.stop_reason = StopReason::Threshold;
            break;
        }
    }
    if let Some((_, params)) = best {
        net.params = params;
    }
    net.write_back(&mut student);
    report.seconds = started.elapsed().as_secs_f64();
    Ok((student, report))
}

#[cfg(test)]
mod tests;
