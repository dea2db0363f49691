//! End-to-end orchestration: configuration, the transform, distill, verify
//! and export pipeline, the sweet-spot search, portfolios and CSV reports.

mod config;
mod pipeline;
mod report;
mod scaffold;
mod search;

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub use config::{resolve_seed, DataPaths, PipelineConfig, ReportOptions, SEED_ENV};
pub use pipeline::{portfolio_run, run_pipeline, Context};
pub use report::{emit_report, report_text};
pub use scaffold::scaffold;
pub use search::{drop_order, refine, search_pipeline, sweet_spot_search, SearchOutcome, REFINE_FACTORS};

use crate::netgraph::NetError;
use crate::transform::TransformOp;
use crate::verify::Outcome;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("config: {0}")]
    Config(String),
    #[error("{what} not found: {}", path.display())]
    MissingPath { what: String, path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{stage} stage: {message}")]
    Stage { stage: Stage, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Transform,
    Distill,
    Verify,
    Export,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Transform => "transform",
            Stage::Distill => "distill",
            Stage::Verify => "verify",
            Stage::Export => "export",
        })
    }
}

/// Error budget, per-property time budget and probe cap for the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBudget {
    pub e_max: f64,
    pub t_max: f64,
    pub max_candidates: usize,
    /// Run the scale refinement pass on the accepted candidate.
    pub refine: bool,
}

impl SearchBudget {
    /// `e_max = 0` is allowed: it only accepts lossless candidates.
    pub fn new(e_max: f64, t_max: f64, max_candidates: usize) -> Result<Self, DriverError> {
        if !(e_max >= 0.0) || !(t_max > 0.0) {
            return Err(DriverError::Config(format!("need e_max >= 0 and t_max > 0, got {e_max} and {t_max}")));
        }
        if max_candidates == 0 {
            return Err(DriverError::Config("max_candidates must be at least 1".into()));
        }
        Ok(Self { e_max, t_max, max_candidates, refine: false })
    }

    pub fn unlimited() -> Self {
        Self { e_max: f64::INFINITY, t_max: f64::INFINITY, max_candidates: usize::MAX, refine: false }
    }

    pub fn with_refine(mut self, refine: bool) -> Self {
        self.refine = refine;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub id: String,
    pub outcome: Outcome,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    /// Kept/dropped layer name, e.g. `012__56789A`.
    pub name: String,
    pub neurons: usize,
    pub rel_error: Option<f64>,
    pub properties: Vec<PropertyResult>,
    /// The stage that stopped the pipeline, if any.
    pub failure: Option<StageFailure>,
    pub accepted: bool,
    /// The transform plan that produced the candidate.
    pub plan: Vec<TransformOp>,
}

impl CandidateResult {
    pub fn failed(name: impl Into<String>, stage: Stage, message: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            neurons: 0,
            rel_error: None,
            properties: Vec::new(),
            failure: Some(StageFailure { stage, message: message.into() }),
            accepted: false,
            plan: Vec::new(),
        }
    }

    pub fn error_ok(&self, budget: &SearchBudget) -> bool {
        self.rel_error.is_some_and(|e| e <= budget.e_max)
    }

    /// Every property decided True or False within `t_max`.
    pub fn verification_ok(&self, budget: &SearchBudget) -> bool {
        self.failure.is_none() && self.properties.iter().all(|p| p.outcome.is_decided() && p.seconds <= budget.t_max)
    }

    /// Sets and returns `accepted`.
    pub fn assess(&mut self, budget: &SearchBudget) -> bool {
        self.accepted = self.failure.is_none() && self.error_ok(budget) && self.verification_ok(budget);
        self.accepted
    }
}
