//! Writers and reference interpreters for three verifier exchange formats:
//! nnet (fully connected ReLU), an extended nnet with convolutions, and rlv.
//! Every writer is deterministic: the same graph gives the same bytes.

mod enn;
mod lower;
mod nnet;
mod rlv;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use enn::{enn_text, EnnModel, EnnRecord};
pub use nnet::{nnet_text, NnetModel};
pub use rlv::{rlv_text, RlvAssert, RlvModel, RlvNode};

use crate::netgraph::{LayerId, NetError, NetworkGraph};
use crate::tensor::Tensor;
use crate::verify::RobustnessProperty;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("layer {index} ({kind}) cannot be exported: {reason}")]
    UnsupportedLayer { index: LayerId, kind: String, reason: String },
    #[error("unsupported constraint: {0}")]
    UnsupportedConstraint(String),
    #[error("input {0} is unbounded; rlv needs a finite input box")]
    UnboundedInput(usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Net(#[from] NetError),
}

pub(crate) fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn parse_err(line: usize, msg: String) -> ExportError {
    ExportError::Parse { line, msg }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExportTarget {
    #[serde(rename = "nnet")]
    NNet,
    #[serde(rename = "enn")]
    ExtendedNNet,
    #[serde(rename = "rlv")]
    Rlv,
}

impl ExportTarget {
    pub const ALL: [ExportTarget; 3] = [ExportTarget::NNet, ExportTarget::ExtendedNNet, ExportTarget::Rlv];

    pub fn extension(self) -> &'static str {
        match self {
            ExportTarget::NNet => "nnet",
            ExportTarget::ExtendedNNet => "enn",
            ExportTarget::Rlv => "rlv",
        }
    }

    /// Renders `graph`; the property is ignored by the extended format.
    pub fn render(self, graph: &NetworkGraph, prop: Option<&RobustnessProperty>) -> Result<String, ExportError> {
        match self {
            ExportTarget::NNet => nnet_text(graph, prop),
            ExportTarget::ExtendedNNet => enn_text(graph),
            ExportTarget::Rlv => rlv_text(graph, prop),
        }
    }

    pub fn write(self, graph: &NetworkGraph, prop: Option<&RobustnessProperty>, path: &Path) -> Result<(), ExportError> {
        let text = self.render(graph, prop)?;
        std::fs::write(path, text).map_err(|source| ExportError::Io { path: path.to_path_buf(), source })
    }
}

impl fmt::Display for ExportTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for ExportTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nnet" => Ok(ExportTarget::NNet),
            "enn" | "extended-nnet" | "extended_nnet" => Ok(ExportTarget::ExtendedNNet),
            "rlv" => Ok(ExportTarget::Rlv),
            _ => Err(format!("unknown export target `{s}` (expected nnet, enn or rlv)")),
        }
    }
}

pub fn export_nnet(graph: &NetworkGraph, prop: Option<&RobustnessProperty>, path: &Path) -> Result<(), ExportError> {
    ExportTarget::NNet.write(graph, prop, path)
}

pub fn export_extended_nnet(graph: &NetworkGraph, path: &Path) -> Result<(), ExportError> {
    ExportTarget::ExtendedNNet.write(graph, None, path)
}

pub fn export_rlv(graph: &NetworkGraph, prop: Option<&RobustnessProperty>, path: &Path) -> Result<(), ExportError> {
    ExportTarget::Rlv.write(graph, prop, path)
}

/// Evaluates an exported file on one input with an interpreter that shares
/// no code with the crate's own forward pass. For nnet files written with a
/// property this is the single margin output; for rlv it is the `out_k`
/// neurons.
pub fn reference_eval_text(target: ExportTarget, text: &str, input: &[f64]) -> Result<Vec<f64>, ExportError> {
    match target {
        ExportTarget::NNet => {
            let m = NnetModel::parse(text)?;
            if input.len() != m.input_size {
                return Err(parse_err(0, format!("expected {} inputs, got {}", m.input_size, input.len())));
            }
            Ok(m.eval(input))
        }
        ExportTarget::ExtendedNNet => EnnModel::parse(text)?.eval(input),
        ExportTarget::Rlv => {
            let m = RlvModel::parse(text)?;
            let v = m.eval(input)?;
            Ok(m.outputs(&v))
        }
    }
}

pub fn reference_eval(target: ExportTarget, path: &Path, input: &Tensor) -> Result<Tensor, ExportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ExportError::Io { path: path.to_path_buf(), source })?;
    let x: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
    let y = reference_eval_text(target, &text, &x)?;
    let n = y.len();
    Ok(Tensor::new(vec![n], y.into_iter().map(|v| v as f32).collect()).expect("length matches"))
}

#[cfg(test)]
mod tests;
