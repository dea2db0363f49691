//! Pipeline configuration file.
//!
//! ```toml
//! seed = 7
//! output_dir = "out"
//!
//! [model]
//! path = "models/teacher.toml"
//!
//! [[transform.strategy]]
//! type = "drop"
//! layers = [2, 3]
//!
//! [[transform.strategy]]
//! type = "forall"
//! predicate = "is_residual"
//! op = "linearize"
//!
//! [distillation]
//! threshold = 1e-3
//! [distillation.parameters]
//! epochs = 20
//! optimizer = "adam"
//! [distillation.data.teacher]
//! path = "data/inputs.r4vt"
//!
//! [verify]
//! properties = ["props/p0.toml"]
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{DriverError, SearchBudget};
use crate::distill::{DistillConfig, LossMode, Optimizer, Task};
use crate::export::ExportTarget;
use crate::netgraph::{load_network, KindTag};
use crate::transform::{apply_plan, Factor, LayerPredicate, LayerRef, PartialOp, TransformOp};
use crate::verify::VerifyBudget;

pub const SEED_ENV: &str = "NN_REFACTOR_SEED";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    output_dir: Option<String>,
    model: ModelDoc,
    #[serde(default)]
    transform: TransformDoc,
    #[serde(default)]
    distillation: DistillDoc,
    #[serde(default)]
    verify: VerifyDoc,
    #[serde(default)]
    export: ExportDoc,
    #[serde(default)]
    search: Option<SearchDoc>,
    #[serde(default)]
    report: ReportDoc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    path: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformDoc {
    #[serde(default)]
    strategy: Vec<StrategyDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum LayerDoc {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum FactorDoc {
    Number(f64),
    Text(String),
}

impl FactorDoc {
    fn factor(&self) -> Result<Factor, DriverError> {
        match self {
            FactorDoc::Number(f) => Factor::from_f64(*f),
            FactorDoc::Text(s) => s.parse(),
        }
        .map_err(|e| DriverError::Config(e.to_string()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum PredicateDoc {
    IsResidual,
    IsLayer(Vec<usize>),
    IsKind(String),
    And(Vec<PredicateDoc>),
    Or(Vec<PredicateDoc>),
    Not(Box<PredicateDoc>),
}

fn kind_tag(s: &str) -> Result<KindTag, DriverError> {
    Ok(match s {
        "fully_connected" | "fc" | "dense" => KindTag::FullyConnected,
        "conv" | "convolution" => KindTag::Convolution,
        "maxpool" => KindTag::MaxPool,
        "batchnorm" => KindTag::BatchNorm,
        "flatten" => KindTag::Flatten,
        "transpose" => KindTag::Transpose,
        "residual" => KindTag::Residual,
        _ => return Err(DriverError::Config(format!("unknown layer kind `{s}`"))),
    })
}

impl PredicateDoc {
    fn predicate(&self) -> Result<LayerPredicate, DriverError> {
        let all = |v: &[PredicateDoc]| v.iter().map(PredicateDoc::predicate).collect::<Result<Vec<_>, _>>();
        Ok(match self {
            PredicateDoc::IsResidual => LayerPredicate::IsResidual,
            PredicateDoc::IsLayer(v) => LayerPredicate::IsLayer(v.iter().copied().collect()),
            PredicateDoc::IsKind(k) => LayerPredicate::IsKind(kind_tag(k)?),
            PredicateDoc::And(v) => LayerPredicate::And(all(v)?),
            PredicateDoc::Or(v) => LayerPredicate::Or(all(v)?),
            PredicateDoc::Not(p) => LayerPredicate::Not(Box::new(p.predicate()?)),
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum StrategyDoc {
    Drop { layers: Vec<usize> },
    Scale { layers: Vec<LayerDoc>, factor: FactorDoc },
    Linearize { layers: Vec<usize> },
    Forall { predicate: PredicateDoc, op: String, factor: Option<FactorDoc> },
}

impl StrategyDoc {
    fn op(&self) -> Result<TransformOp, DriverError> {
        let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        Ok(match self {
            StrategyDoc::Drop { layers } => TransformOp::Drop(set(layers)),
            StrategyDoc::Linearize { layers } => TransformOp::Linearize(set(layers)),
            StrategyDoc::Scale { layers, factor } => {
                let refs = layers
                    .iter()
                    .map(|l| match l {
                        LayerDoc::Index(i) => Ok(LayerRef::Index(*i)),
                        LayerDoc::Name(n) if n == "input" => Ok(LayerRef::Input),
                        LayerDoc::Name(n) => Err(DriverError::Config(format!("scale layers are indices or \"input\", got `{n}`"))),
                    })
                    .collect::<Result<_, _>>()?;
                TransformOp::Scale(refs, factor.factor()?)
            }
            StrategyDoc::Forall { predicate, op, factor } => {
                let partial = match (op.as_str(), factor) {
                    ("drop", None) => PartialOp::Drop,
                    ("linearize", None) => PartialOp::Linearize,
                    ("scale", Some(f)) => PartialOp::Scale(f.factor()?),
                    ("scale", None) => return Err(DriverError::Config("forall scale needs a factor".into())),
                    (o, _) => return Err(DriverError::Config(format!("forall op must be drop, linearize or scale (with a factor), got `{o}`"))),
                };
                TransformOp::Forall(predicate.predicate()?, partial)
            }
        })
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistillDoc {
    /// Maximum parameters plus per-batch activations.
    #[serde(default)]
    param_budget: Option<usize>,
    #[serde(default)]
    threshold: Option<f64>,
    #[serde(default)]
    timeout: Option<f64>,
    #[serde(default)]
    task: Task,
    #[serde(default)]
    parameters: ParamsDoc,
    #[serde(default)]
    data: Option<DataDoc>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDoc {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    optimizer: Option<String>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    rho: Option<f64>,
    eps: Option<f64>,
    loss: Option<String>,
    temperature: Option<f64>,
}

impl ParamsDoc {
    fn optimizer(&self) -> Result<Optimizer, DriverError> {
        let mut o = match self.optimizer.as_deref().unwrap_or("adam") {
            "adam" => Optimizer::default(),
            "sgd" => Optimizer::sgd(0.01),
            "adadelta" => Optimizer::adadelta(),
            o => return Err(DriverError::Config(format!("unknown optimizer `{o}`"))),
        };
        match &mut o {
            Optimizer::Sgd { learning_rate, momentum } => {
                *learning_rate = self.learning_rate.unwrap_or(*learning_rate);
                *momentum = self.momentum.unwrap_or(*momentum);
            }
            Optimizer::Adam { learning_rate, beta1, beta2, eps } => {
                *learning_rate = self.learning_rate.unwrap_or(*learning_rate);
                *beta1 = self.beta1.unwrap_or(*beta1);
                *beta2 = self.beta2.unwrap_or(*beta2);
                *eps = self.eps.unwrap_or(*eps);
            }
            Optimizer::Adadelta { learning_rate, rho, eps } => {
                *learning_rate = self.learning_rate.unwrap_or(*learning_rate);
                *rho = self.rho.unwrap_or(*rho);
                *eps = self.eps.unwrap_or(*eps);
            }
        }
        Ok(o)
    }

    fn loss(&self) -> Result<LossMode, DriverError> {
        match self.loss.as_deref().unwrap_or("mse") {
            "mse" | "hard_mse" => Ok(LossMode::HardMse),
            "soft_ce" | "kd" => Ok(LossMode::SoftCe { temperature: self.temperature.unwrap_or(1.0) }),
            l => Err(DriverError::Config(format!("unknown loss `{l}`"))),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataDoc {
    teacher: DataSetDoc,
    #[serde(default)]
    student: Option<DataSetDoc>,
    #[serde(default)]
    labels: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSetDoc {
    path: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyDoc {
    #[serde(default)]
    properties: Vec<String>,
    timeout: Option<f64>,
    max_regions: Option<usize>,
    falsify_samples: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportDoc {
    #[serde(default)]
    targets: Vec<ExportTarget>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchDoc {
    emax: f64,
    tmax: f64,
    #[serde(default)]
    max_candidates: Option<usize>,
    #[serde(default)]
    refine: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportDoc {
    file: Option<String>,
    time_decimals: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub file: String,
    pub time_decimals: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { file: "report.csv".into(), time_decimals: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub teacher: PathBuf,
    pub student: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

/// A loaded configuration with every path resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: PathBuf,
    pub plan: Vec<TransformOp>,
    pub distill: DistillConfig,
    pub task: Task,
    pub data: Option<DataPaths>,
    pub properties: Vec<PathBuf>,
    pub verify: VerifyBudget,
    pub targets: Vec<ExportTarget>,
    pub search: Option<SearchBudget>,
    pub report: ReportOptions,
}

fn existing(dir: &Path, rel: &str, what: &str) -> Result<PathBuf, DriverError> {
    let p = dir.join(rel);
    if p.exists() {
        Ok(p)
    } else {
        Err(DriverError::MissingPath { what: what.to_string(), path: p })
    }
}

/// CLI seed, then the environment variable, then the config value.
pub fn resolve_seed(config: Option<u64>, cli: Option<u64>) -> Result<u64, DriverError> {
    if let Some(s) = cli {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| DriverError::Config(format!("{SEED_ENV} must be an integer, got `{v}`"))),
        Err(_) => Ok(config.unwrap_or(0)),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path, cli_seed: Option<u64>) -> Result<Self, DriverError> {
        let text = std::fs::read_to_string(path).map_err(|source| DriverError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), cli_seed)
    }

    pub fn parse(text: &str, dir: &Path, cli_seed: Option<u64>) -> Result<Self, DriverError> {
        let doc: ConfigDoc = toml::from_str(text).map_err(|e| DriverError::Config(e.to_string()))?;
        let seed = resolve_seed(doc.seed, cli_seed)?;
        let model = existing(dir, &doc.model.path, "model")?;
        let plan = doc.transform.strategy.iter().map(StrategyDoc::op).collect::<Result<Vec<_>, _>>()?;
        let teacher = load_network(&model)?;
        apply_plan(&teacher.without_weights(), &plan).map_err(|e| DriverError::Config(format!("transform plan: {e}")))?;
        let d = &doc.distillation;
        let p = &d.parameters;
        let distill = DistillConfig {
            epochs: p.epochs.unwrap_or(10),
            batch_size: p.batch_size.unwrap_or(32),
            optimizer: p.optimizer()?,
            loss: p.loss()?,
            error_threshold: d.threshold,
            timeout: d.timeout,
            param_budget: d.param_budget,
            seed,
        };
        distill.validate().map_err(|e| DriverError::Config(e.to_string()))?;
        let data = match &d.data {
            Some(dd) => Some(DataPaths {
                teacher: existing(dir, &dd.teacher.path, "teacher dataset")?,
                student: dd.student.as_ref().map(|s| existing(dir, &s.path, "student dataset")).transpose()?,
                labels: dd.labels.as_ref().map(|l| existing(dir, l, "labels")).transpose()?,
            }),
            None => None,
        };
        if data.is_none() && !plan.is_empty() {
            return Err(DriverError::Config("a transform plan needs [distillation.data.teacher]".into()));
        }
        let properties = doc.verify.properties.iter().map(|p| existing(dir, p, "property")).collect::<Result<_, _>>()?;
        let defaults = VerifyBudget::default();
        let verify = VerifyBudget {
            timeout: doc.verify.timeout,
            max_regions: doc.verify.max_regions.unwrap_or(defaults.max_regions),
            falsify_samples: doc.verify.falsify_samples.unwrap_or(defaults.falsify_samples),
            seed,
        };
        let search = doc
            .search
            .map(|s| SearchBudget::new(s.emax, s.tmax, s.max_candidates.unwrap_or(usize::MAX)).map(|b| b.with_refine(s.refine)))
            .transpose()?;
        let defaults = ReportOptions::default();
        let report = ReportOptions {
            file: doc.report.file.unwrap_or(defaults.file),
            time_decimals: doc.report.time_decimals.unwrap_or(defaults.time_decimals),
        };
        Ok(Self {
            seed,
            output_dir: dir.join(doc.output_dir.as_deref().unwrap_or("out")),
            model,
            plan,
            distill,
            task: d.task,
            data,
            properties,
            verify,
            targets: doc.export.targets,
            search,
            report,
        })
    }
}
