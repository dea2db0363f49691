//! Counterexample search: uniform sampling followed by greedy coordinate
//! ascent on the violation margin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::property::{margin, IntervalBox, LinearForm, RobustnessProperty};
use super::VerifyError;
use crate::netgraph::{NetworkGraph, Prepared};
use crate::tensor::{Array, Tensor};

const BATCH: usize = 256;

/// Rounds `v` to an f32 that lies inside `[lo, hi]`, if one exists nearby.
pub(crate) fn snap(v: f64, lo: f64, hi: f64) -> Option<f32> {
    let mut x = v.clamp(lo, hi) as f32;
    if (x as f64) < lo {
        x = x.next_up();
    }
    if (x as f64) > hi {
        x = x.next_down();
    }
    ((x as f64) >= lo && (x as f64) <= hi).then_some(x)
}

pub(crate) fn snap_point(p: &[f64], b: &IntervalBox) -> Option<Vec<f32>> {
    p.iter().enumerate().map(|(i, &v)| snap(v, b.lo[i], b.hi[i])).collect()
}

/// Evaluates the margin at many points at once.
pub(crate) struct MarginEval<'a> {
    net: Prepared<f64>,
    forms: &'a [LinearForm],
}

impl<'a> MarginEval<'a> {
    pub(crate) fn new(graph: &NetworkGraph, forms: &'a [LinearForm]) -> Result<Self, VerifyError> {
        Ok(Self { net: Prepared::new(graph)?, forms })
    }

    pub(crate) fn margins(&self, points: &[Vec<f32>]) -> Vec<f64> {
        let dims = self.net.input_dims().to_vec();
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(BATCH) {
            let data: Vec<f64> = chunk.iter().flat_map(|p| p.iter().map(|&v| v as f64)).collect();
            let mut d = vec![chunk.len()];
            d.extend_from_slice(&dims);
            let y = self.net.run(&Array::new(d, data).expect("dims")).expect("input dims checked");
            out.extend((0..chunk.len()).map(|i| margin(self.forms, y.row(i))));
        }
        out
    }

    pub(crate) fn margin(&self, p: &[f32]) -> f64 {
        self.margins(std::slice::from_ref(&p.to_vec()))[0]
    }
}

fn search(eval: &MarginEval, b: &IntervalBox, samples: usize, seed: u64) -> Option<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(samples + 1);
    points.extend(snap_point(&b.center(), b));
    while points.len() < samples.max(1) {
        let p: Vec<f64> = b.lo.iter().zip(&b.hi).map(|(&l, &h)| if h > l { rng.random_range(l..=h) } else { l }).collect();
        match snap_point(&p, b) {
            Some(x) => points.push(x),
            None => break,
        }
    }
    let margins = eval.margins(&points);
    let mut best = 0;
    for (i, m) in margins.iter().enumerate() {
        if *m >= 0.0 {
            return Some(points.swap_remove(i));
        }
        if *m > margins[best] {
            best = i;
        }
    }
    let mut x = points.swap_remove(best);
    let mut mx = margins[best];
    let mut step: Vec<f64> = b.lo.iter().zip(&b.hi).map(|(l, h)| 0.25 * (h - l)).collect();
    let mut budget = samples;
    while budget > 0 && step.iter().any(|s| *s > 0.0) {
        let mut cands = Vec::new();
        for d in 0..x.len() {
            if step[d] == 0.0 {
                continue;
            }
            for dir in [1.0, -1.0] {
                let mut c = x.clone();
                if let Some(v) = snap(x[d] as f64 + dir * step[d], b.lo[d], b.hi[d]) {
                    c[d] = v;
                    cands.push(c);
                }
            }
        }
        if cands.is_empty() {
            break;
        }
        budget = budget.saturating_sub(cands.len());
        let ms = eval.margins(&cands);
        let (i, m) = ms.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &m)| if m > acc.1 { (i, m) } else { acc });
        if m >= 0.0 {
            return Some(cands.swap_remove(i));
        }
        if m > mx {
            mx = m;
            x = cands.swap_remove(i);
        } else {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    None
}

/// Looks for an input in the property's box whose output violates the
/// constraint. Any returned point is inside the box and violating under
/// concrete evaluation.
pub fn falsify(graph: &NetworkGraph, prop: &RobustnessProperty, samples: usize, seed: u64) -> Result<Option<Tensor>, VerifyError> {
    let out = super::check_dims(graph, prop)?;
    let forms = prop.forms(out)?;
    let eval = MarginEval::new(graph, &forms)?;
    let b = prop.input_box();
    Ok(search(&eval, &b, samples, seed).map(|x| Tensor::new(prop.center.dims().to_vec(), x).expect("dims")))
}

pub(crate) fn search_box(eval: &MarginEval, b: &IntervalBox, samples: usize, seed: u64) -> Option<Vec<f32>> {
    search(eval, b, samples, seed)
}
