//! Binary search over how many droppable layers to remove.

use std::collections::BTreeSet;

use super::{CandidateResult, Context, DriverError, PipelineConfig, SearchBudget};
use crate::netgraph::{LayerKind, NetworkGraph};
use crate::transform::{apply_plan, droppable, Factor, LayerRef, TransformOp};

pub const REFINE_FACTORS: [(u64, u64); 3] = [(3, 4), (1, 2), (1, 4)];

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// Accepted candidate with the smallest relative error.
    pub best: Option<CandidateResult>,
    /// Every probe in order.
    pub trace: Vec<CandidateResult>,
    /// Scale refinements of `best`, when requested.
    pub refinements: Vec<CandidateResult>,
}

/// Drop order: layers before the first flatten from last to first, then
/// the remaining layers from first to last.
pub fn drop_order(graph: &NetworkGraph) -> Vec<usize> {
    let flatten = graph.layers.iter().find(|l| matches!(l.kind, LayerKind::Flatten)).map(|l| l.id.index);
    let d = droppable(graph);
    let (mut conv, fc): (Vec<usize>, Vec<usize>) = d.into_iter().partition(|&i| flatten.is_some_and(|f| i < f));
    conv.reverse();
    conv.into_iter().chain(fc).collect()
}

pub fn probe_limit(droppable: usize) -> usize {
    let n = droppable.max(1);
    (usize::BITS - (n - 1).leading_zeros()) as usize + 2
}

/// Starts from the full network (nothing dropped) and bisects on the drop
/// count: too much error moves toward fewer drops, a failed or undecided
/// verification toward more. After an acceptance the search keeps looking
/// at fewer drops for a smaller error. `eval` receives each candidate plan.
pub fn sweet_spot_search<F>(teacher: &NetworkGraph, budget: &SearchBudget, mut eval: F) -> SearchOutcome
where
    F: FnMut(&[TransformOp]) -> CandidateResult,
{
    let order = drop_order(teacher);
    let limit = probe_limit(order.len()).min(budget.max_candidates);
    let mut trace: Vec<CandidateResult> = Vec::new();
    let mut best: Option<usize> = None;
    let (mut lo, mut hi) = (0isize, order.len() as isize);
    while lo <= hi && trace.len() < limit {
        let k = if trace.is_empty() { 0 } else { ((lo + hi) / 2) as usize };
        let set: BTreeSet<usize> = order[..k].iter().copied().collect();
        let plan = if set.is_empty() { Vec::new() } else { vec![TransformOp::Drop(set)] };
        let mut r = eval(&plan);
        r.plan = plan;
        if r.assess(budget) {
            if best.is_none_or(|b| r.rel_error < trace[b].rel_error) {
                best = Some(trace.len());
            }
            hi = k as isize - 1;
        } else if r.failure.is_some() || !r.error_ok(budget) {
            hi = k as isize - 1;
        } else {
            lo = k as isize + 1;
        }
        trace.push(r);
    }
    let best = best.map(|b| trace[b].clone());
    SearchOutcome { best, trace, refinements: Vec::new() }
}

/// Scales every top-level fully-connected and convolutional layer of the
/// candidate produced by `plan` (except the output) by each of
/// [`REFINE_FACTORS`].
pub fn refine<F>(teacher: &NetworkGraph, plan: &[TransformOp], budget: &SearchBudget, mut eval: F) -> Vec<CandidateResult>
where
    F: FnMut(&[TransformOp]) -> CandidateResult,
{
    let Ok((g, _)) = apply_plan(&teacher.without_weights(), plan) else {
        return Vec::new();
    };
    let out = g.output_layer().map(|l| l.id.index);
    let targets: BTreeSet<LayerRef> = g
        .layers
        .iter()
        .filter(|l| Some(l.id.index) != out && matches!(l.kind, LayerKind::FullyConnected { .. } | LayerKind::Convolution(_)))
        .map(|l| LayerRef::Index(l.id.index))
        .collect();
    if targets.is_empty() {
        return Vec::new();
    }
    REFINE_FACTORS
        .iter()
        .map(|&(n, d)| {
            let mut p = plan.to_vec();
            p.push(TransformOp::Scale(targets.clone(), Factor::new(n, d).expect("non-zero")));
            let mut r = eval(&p);
            r.plan = p;
            r.assess(budget);
            r
        })
        .collect()
}

/// Runs the search with the teacher, data and properties of `cfg`; the
/// per-property timeout is capped at `t_max`.
pub fn search_pipeline(cfg: &PipelineConfig, budget: &SearchBudget) -> Result<SearchOutcome, DriverError> {
    let mut ctx = Context::load(cfg)?;
    ctx.verify.timeout = Some(ctx.verify.timeout.map_or(budget.t_max, |t| t.min(budget.t_max))).filter(|t| t.is_finite());
    let teacher = ctx.teacher.clone();
    let mut out = sweet_spot_search(&teacher, budget, |plan| ctx.evaluate(plan).0);
    if budget.refine {
        if let Some(b) = &out.best {
            out.refinements = refine(&teacher, &b.plan.clone(), budget, |p| ctx.evaluate(p).0);
        }
    }
    Ok(out)
}
