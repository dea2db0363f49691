use std::path::Path;

use super::{emit_report, CandidateResult, DriverError, PipelineConfig, PropertyResult, SearchBudget, Stage, StageFailure};
use crate::distill::{distill, relative_error, Dataset, DistillConfig, Task};
use crate::exec;
use crate::export::ExportTarget;
use crate::netgraph::{load_network, neuron_count, save_network, NetworkGraph};
use crate::transform::{apply_plan, TransformOp};
use crate::verify::{check_property, load_property, RobustnessProperty, VerifyBudget};

/// Everything a candidate evaluation reads: loaded once, shared by every
/// candidate of a search.
#[derive(Debug, Clone)]
pub struct Context {
    pub teacher: NetworkGraph,
    pub data: Option<Dataset>,
    pub properties: Vec<(String, RobustnessProperty)>,
    pub distill: DistillConfig,
    pub task: Task,
    pub verify: VerifyBudget,
}

fn stage_err(stage: Stage, e: impl std::fmt::Display) -> DriverError {
    DriverError::Stage { stage, message: e.to_string() }
}

fn property_id(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("property").to_string()
}

impl Context {
    pub fn load(cfg: &PipelineConfig) -> Result<Self, DriverError> {
        let teacher = load_network(&cfg.model)?;
        let data = cfg
            .data
            .as_ref()
            .map(|d| Dataset::load(&d.teacher, d.student.as_deref(), d.labels.as_deref()))
            .transpose()
            .map_err(|e| stage_err(Stage::Load, e))?;
        let properties = cfg
            .properties
            .iter()
            .map(|p| load_property(p).map(|prop| (property_id(p), prop)))
            .collect::<Result<_, _>>()
            .map_err(|e| stage_err(Stage::Load, e))?;
        Ok(Self { teacher, data, properties, distill: cfg.distill.clone(), task: cfg.task, verify: cfg.verify })
    }

    /// Transforms, distills and verifies one candidate. Returns the result
    /// (not yet assessed) and the trained network when every stage
    /// succeeded.
    pub fn evaluate(&self, plan: &[TransformOp]) -> (CandidateResult, Option<NetworkGraph>) {
        let (arch, name) = match apply_plan(&self.teacher, plan) {
            Ok(v) => v,
            Err(e) => {
                let mut r = CandidateResult::failed("", Stage::Transform, e.to_string());
                r.plan = plan.to_vec();
                return (r, None);
            }
        };
        let mut r = CandidateResult {
            name,
            neurons: neuron_count(&arch).unwrap_or(0),
            rel_error: None,
            properties: Vec::new(),
            failure: None,
            accepted: false,
            plan: plan.to_vec(),
        };
        let fail = |mut r: CandidateResult, stage: Stage, e: &dyn std::fmt::Display| {
            r.failure = Some(StageFailure { stage, message: e.to_string() });
            (r, None)
        };
        let student = if plan.is_empty() {
            r.rel_error = Some(0.0);
            arch
        } else {
            let Some(data) = &self.data else {
                return fail(r, Stage::Distill, &"no dataset configured");
            };
            let student = match distill(&self.teacher, &arch, data, &self.distill) {
                Ok((s, _)) => s,
                Err(e) => return fail(r, Stage::Distill, &e),
            };
            match self.validation_error(&student, data) {
                Ok(e) => r.rel_error = Some(e),
                Err(e) => return fail(r, Stage::Distill, &e),
            }
            student
        };
        for (id, prop) in &self.properties {
            match check_property(&student, prop, &self.verify) {
                Ok(v) => r.properties.push(PropertyResult { id: id.clone(), outcome: v.outcome, seconds: v.seconds }),
                Err(e) => return fail(r, Stage::Verify, &format!("{id}: {e}")),
            }
        }
        (r, Some(student))
    }

    /// Regression: output MSE against the teacher. Classification: the
    /// fraction of disagreeing argmax classes. Both on the validation split.
    fn validation_error(&self, student: &NetworkGraph, data: &Dataset) -> Result<f64, crate::distill::DistillError> {
        let (train, val) = data.split();
        let idx = if val.is_empty() { train } else { val };
        let t = data.teacher_inputs.select_rows(&idx);
        let s = data.student_inputs.select_rows(&idx);
        let e = relative_error(&self.teacher, student, &t, &s, self.task)?;
        Ok(match self.task {
            Task::Regression => e,
            Task::Classification => 1.0 - e,
        })
    }
}

fn export_all(
    cfg: &PipelineConfig,
    ctx: &Context,
    r: &CandidateResult,
    student: &NetworkGraph,
) -> Result<(), DriverError> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|source| DriverError::Io { path: cfg.output_dir.clone(), source })?;
    save_network(student, &cfg.output_dir.join(format!("{}.toml", r.name))).map_err(|e| stage_err(Stage::Export, e))?;
    for &t in &cfg.targets {
        if t == ExportTarget::ExtendedNNet || ctx.properties.is_empty() {
            let path = cfg.output_dir.join(format!("{}.{}", r.name, t.extension()));
            t.write(student, None, &path).map_err(|e| stage_err(Stage::Export, e))?;
        } else {
            for (id, prop) in &ctx.properties {
                let path = cfg.output_dir.join(format!("{}.{id}.{}", r.name, t.extension()));
                t.write(student, Some(prop), &path).map_err(|e| stage_err(Stage::Export, e))?;
            }
        }
    }
    Ok(())
}

/// Runs the configured plan end to end and writes the student network,
/// the exports and the report into the output directory. Stage errors do
/// not make this fail; they are recorded in the result and the report.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<CandidateResult, DriverError> {
    let budget = cfg.search.unwrap_or_else(SearchBudget::unlimited);
    let mut r = match Context::load(cfg) {
        Ok(ctx) => {
            let (mut r, student) = ctx.evaluate(&cfg.plan);
            if let Some(s) = student {
                if let Err(e) = export_all(cfg, &ctx, &r, &s) {
                    r.failure = Some(StageFailure { stage: Stage::Export, message: e.to_string() });
                }
            }
            r
        }
        Err(e) => {
            let mut r = CandidateResult::failed("", Stage::Load, e.to_string());
            r.plan = cfg.plan.clone();
            r
        }
    };
    r.assess(&budget);
    std::fs::create_dir_all(&cfg.output_dir).map_err(|source| DriverError::Io { path: cfg.output_dir.clone(), source })?;
    emit_report(std::slice::from_ref(&r), &cfg.output_dir.join(&cfg.report.file), cfg.report.time_decimals)?;
    Ok(r)
}

/// Runs independent pipelines on up to `parallelism` workers. The result
/// list is in input order and does not depend on `parallelism`.
pub fn portfolio_run(candidates: &[PipelineConfig], parallelism: usize) -> Vec<Result<CandidateResult, DriverError>> {
    if parallelism <= 1 {
        return candidates.iter().map(run_pipeline).collect();
    }
    exec::with_threads(parallelism, || exec::map_tasks(candidates.len(), |i| run_pipeline(&candidates[i])))
}
