//! Local-robustness properties, interval bound propagation, input-splitting
//! refinement and a sampling falsifier.
//!
//! Concrete semantics are f64 evaluation of the stored f32 weights; bounds
//! are sound for that semantics up to f64 rounding.

mod falsify;
mod ibp;
mod property;

use std::fmt;
use std::time::Instant;

use thiserror::Error;

pub use falsify::falsify;
pub use ibp::{ibp_bounds, IbpNetwork};
pub use property::{
    load_property, make_property, margin, normalized_epsilon, parse_property, property_document, AngleUnits,
    IntervalBox, LinearForm, OutputConstraint, PropertyKind, RobustnessProperty,
};

use crate::netgraph::{infer_shapes, NetError, NetworkGraph};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("dimension mismatch: {0}")]
    Dims(String),
    #[error("invalid property: {0}")]
    Property(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    True,
    /// Carries an input inside the box whose output violates the constraint.
    False(Tensor),
    Unknown,
    /// Wall-clock budget exhausted.
    Oor,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::True => "true",
            Outcome::False(_) => "false",
            Outcome::Unknown => "unknown",
            Outcome::Oor => "oor",
        }
    }

    pub fn is_decided(&self) -> bool {
        matches!(self, Outcome::True | Outcome::False(_))
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub outcome: Outcome,
    pub seconds: f64,
    /// Regions whose bounds were computed.
    pub regions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyBudget {
    /// Wall-clock seconds; `None` means unlimited.
    pub timeout: Option<f64>,
    pub max_regions: usize,
    pub falsify_samples: usize,
    pub seed: u64,
}

impl Default for VerifyBudget {
    fn default() -> Self {
        Self { timeout: None, max_regions: 4096, falsify_samples: 1000, seed: 0 }
    }
}

/// Checks that the property fits the graph; returns the output length.
fn check_dims(graph: &NetworkGraph, prop: &RobustnessProperty) -> Result<usize, VerifyError> {
    let t = infer_shapes(graph)?;
    if prop.center.dims() != graph.input_shape.as_slice() {
        return Err(VerifyError::Dims(format!(
            "property center {:?} vs network input {:?}",
            prop.center.dims(),
            graph.input_shape
        )));
    }
    if let Some(c) = &prop.clamp {
        if c.len() != prop.center.len() {
            return Err(VerifyError::Dims("clamp range does not cover the input".into()));
        }
    }
    Ok(t.output_dims().iter().product())
}

/// Decides `prop` on `graph`: falsifier first, then depth-first refinement
/// of the input box, bisecting the widest dimension, until every region is
/// proven, a violating point is found, `max_regions` regions have been
/// bounded (Unknown) or the timeout trips (OOR).
pub fn check_property(graph: &NetworkGraph, prop: &RobustnessProperty, budget: &VerifyBudget) -> Result<Verdict, VerifyError> {
    let started = Instant::now();
    let out = check_dims(graph, prop)?;
    let forms = prop.forms(out)?;
    let eval = falsify::MarginEval::new(graph, &forms)?;
    let net = IbpNetwork::new(graph)?;
    let root = prop.input_box();
    let done = |outcome: Outcome, regions: usize| Ok(Verdict { outcome, seconds: started.elapsed().as_secs_f64(), regions });
    let timed_out = || budget.timeout.is_some_and(|t| started.elapsed().as_secs_f64() > t);
    let to_tensor = |x: Vec<f32>| Tensor::new(prop.center.dims().to_vec(), x).expect("dims");

    if let Some(x) = falsify::search_box(&eval, &root, budget.falsify_samples, budget.seed) {
        return done(Outcome::False(to_tensor(x)), 0);
    }
    let mut stack = vec![root];
    let mut regions = 0;
    let mut stuck = false;
    while let Some(region) = stack.pop() {
        if timed_out() {
            return done(Outcome::Oor, regions);
        }
        if regions >= budget.max_regions {
            return done(Outcome::Unknown, regions);
        }
        regions += 1;
        let bounds = net.form_bounds(&region, &forms);
        if bounds.iter().all(|(_, hi)| *hi < 0.0) {
            continue;
        }
        if let Some(c) = falsify::snap_point(&region.center(), &region) {
            if eval.margin(&c) >= 0.0 {
                return done(Outcome::False(to_tensor(c)), regions);
            }
        }
        let (d, w) = region.widest();
        let (a, b) = region.bisect(d);
        if w <= 0.0 || a == region || b == region {
            // a point the bounds cannot separate from the constraint boundary
            stuck = true;
            continue;
        }
        stack.push(b);
        stack.push(a);
    }
    done(if stuck { Outcome::Unknown } else { Outcome::True }, regions)
}

#[cfg(test)]
mod tests;
