//! Distillation losses. Values are reduced in 64-bit; gradients are returned
//! in the working precision.

use serde::{Deserialize, Serialize};

use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
#[derive(Default)]
pub enum LossMode {
    #[default]
    HardMse,
    SoftCe {
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
}

fn default_temperature() -> f64 {
    1.0
}


/// Mean over batch and output dims of the squared difference.
pub fn loss_hard_mse<T: Scalar>(student: &[T], teacher: &[T]) -> f64 {
    assert_eq!(student.len(), teacher.len(), "loss operands differ in length");
    if student.is_empty() {
        return 0.0;
    }
    let s: f64 = student.iter().zip(teacher).map(|(a, b)| (a.widen() - b.widen()).powi(2)).sum();
    s / student.len() as f64
}

pub fn grad_hard_mse<T: Scalar>(student: &[T], teacher: &[T]) -> Vec<T> {
    let k = 2.0 / student.len() as f64;
    student.iter().zip(teacher).map(|(a, b)| T::from_f64(k * (a.widen() - b.widen()))).collect()
}

fn softmax(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / t));
    let e: Vec<f64> = z.iter().map(|&v| (v / t - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / t));
    let lse = z.iter().map(|&v| (v / t - m).exp()).sum::<f64>().ln() + m;
    z.iter().map(|&v| v / t - lse).collect()
}

fn rows<T: Scalar>(x: &[T], classes: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
    x.chunks(classes).map(|r| r.iter().map(|v| v.widen()).collect())
}

/// Cross-entropy of the student's temperature-softened softmax against the
/// teacher's, averaged over the batch. With `labels` (class indices), the
/// label cross-entropy at temperature 1 is mixed in with weight one half.
pub fn loss_soft_ce<T: Scalar>(student: &[T], teacher: &[T], classes: usize, temperature: f64, labels: Option<&[usize]>) -> f64 {
    assert_eq!(student.len(), teacher.len(), "loss operands differ in length");
    let n = student.len() / classes;
    if n == 0 {
        return 0.0;
    }
    let mut soft = 0.0;
    let mut hard = 0.0;
    for (i, (s, t)) in rows(student, classes).zip(rows(teacher, classes)).enumerate() {
        let p = softmax(&t, temperature);
        let lq = log_softmax(&s, temperature);
        soft -= p.iter().zip(&lq).map(|(a, b)| a * b).sum::<f64>();
        if let Some(l) = labels {
            hard -= log_softmax(&s, 1.0)[l[i]];
        }
    }
    let (soft, hard) = (soft / n as f64, hard / n as f64);
    match labels {
        Some(_) => 0.5 * soft + 0.5 * hard,
        None => soft,
    }
}

pub fn grad_soft_ce<T: Scalar>(student: &[T], teacher: &[T], classes: usize, temperature: f64, labels: Option<&[usize]>) -> Vec<T> {
    let n = (student.len() / classes).max(1) as f64;
    let w = if labels.is_some() { 0.5 } else { 1.0 };
    let mut g = Vec::with_capacity(student.len());
    for (i, (s, t)) in rows(student, classes).zip(rows(teacher, classes)).enumerate() {
        let p = softmax(&t, temperature);
        let q = softmax(&s, temperature);
        let qh = labels.map(|_| softmax(&s, 1.0));
        for k in 0..classes {
            let mut v = w * (q[k] - p[k]) / temperature;
            if let (Some(l), Some(qh)) = (labels, &qh) {
                v += 0.5 * (qh[k] - if l[i] == k { 1.0 } else { 0.0 });
            }
            g.push(T::from_f64(v / n));
        }
    }
    g
}
