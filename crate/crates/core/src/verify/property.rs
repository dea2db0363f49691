use std::path::Path;

use serde::Deserialize;

use super::VerifyError;
use crate::tensor::{read_blob, Tensor};

/// Per-dimension closed intervals over a tensor shape.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBox {
    pub dims: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl IntervalBox {
    pub fn new(dims: Vec<usize>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, VerifyError> {
        let n: usize = dims.iter().product();
        if lo.len() != n || hi.len() != n {
            return Err(VerifyError::Dims(format!("box bounds of length {}/{} for dims {dims:?}", lo.len(), hi.len())));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(VerifyError::Property("box lower bound exceeds upper bound".into()));
        }
        Ok(Self { dims, lo, hi })
    }

    pub fn point(x: &Tensor) -> Self {
        let v: Vec<f64> = x.data().iter().map(|&a| a as f64).collect();
        Self { dims: x.dims().to_vec(), lo: v.clone(), hi: v }
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.len() && x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| l <= v && v <= h)
    }

    /// Whether `other` lies inside `self`.
    pub fn encloses(&self, other: &IntervalBox) -> bool {
        self.len() == other.len()
            && (0..self.len()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    pub fn widest(&self) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..self.len() {
            let w = self.hi[i] - self.lo[i];
            if w > best.1 {
                best = (i, w);
            }
        }
        best
    }

    /// Halves along dimension `d`: lower half first.
    pub fn bisect(&self, d: usize) -> (IntervalBox, IntervalBox) {
        let mid = 0.5 * (self.lo[d] + self.hi[d]);
        let mut a = self.clone();
        let mut b = self.clone();
        a.hi[d] = mid;
        b.lo[d] = mid;
        (a, b)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.iter().chain(&self.hi).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutputConstraint {
    /// Every output stays strictly inside `(lo, hi)`.
    Interval { lo: Vec<f64>, hi: Vec<f64> },
    /// The logit of `class` stays strictly above every other logit.
    ClassInvariant(usize),
}

/// Linear form `a . y + b` over the network output.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearForm {
    pub a: Vec<f64>,
    pub b: f64,
}

impl LinearForm {
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.a.iter().zip(y).map(|(a, v)| a * v).sum::<f64>() + self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessProperty {
    pub center: Tensor,
    /// Chebyshev radius in stored input units.
    pub epsilon: f64,
    /// Valid input range; the box is intersected with it.
    pub clamp: Option<IntervalBox>,
    pub constraint: OutputConstraint,
}

/// How a steering-angle label is encoded in the network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleUnits {
    #[default]
    Radians,
    Degrees,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropertyKind {
    /// Output within `label +- bound_degrees`, converted to `units`.
    SteerDelta { label: f64, bound_degrees: f64, units: AngleUnits },
    ClassInvariant(usize),
    Interval { lo: Vec<f64>, hi: Vec<f64> },
}

pub fn make_property(
    center: Tensor,
    epsilon: f64,
    kind: PropertyKind,
    clamp: Option<(f64, f64)>,
) -> Result<RobustnessProperty, VerifyError> {
    if !(epsilon >= 0.0) {
        return Err(VerifyError::Property(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let constraint = match kind {
        PropertyKind::SteerDelta { label, bound_degrees, units } => {
            let b = match units {
                AngleUnits::Radians => bound_degrees.to_radians(),
                AngleUnits::Degrees => bound_degrees,
            };
            OutputConstraint::Interval { lo: vec![label - b], hi: vec![label + b] }
        }
        PropertyKind::ClassInvariant(c) => OutputConstraint::ClassInvariant(c),
        PropertyKind::Interval { lo, hi } => {
            if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
                return Err(VerifyError::Property("interval needs lo <= hi of equal length".into()));
            }
            OutputConstraint::Interval { lo, hi }
        }
    };
    let clamp = clamp
        .map(|(l, h)| IntervalBox::new(center.dims().to_vec(), vec![l; center.len()], vec![h; center.len()]))
        .transpose()?;
    Ok(RobustnessProperty { center, epsilon, clamp, constraint })
}

/// Radius in stored units for a radius measured before normalization, e.g.
/// 2 intensity levels of 0-255 images stored as 0-1 become 2/255.
pub fn normalized_epsilon(raw: f64, input_scale: f64) -> f64 {
    raw / input_scale
}

impl RobustnessProperty {
    pub fn input_box(&self) -> IntervalBox {
        let mut lo: Vec<f64> = self.center.data().iter().map(|&c| c as f64 - self.epsilon).collect();
        let mut hi: Vec<f64> = self.center.data().iter().map(|&c| c as f64 + self.epsilon).collect();
        if self.epsilon == 0.0 {
            lo = self.center.data().iter().map(|&c| c as f64).collect();
            hi = lo.clone();
        }
        if let Some(c) = &self.clamp {
            for i in 0..lo.len() {
                lo[i] = lo[i].max(c.lo[i]).min(c.hi[i]);
                hi[i] = hi[i].min(c.hi[i]).max(c.lo[i]);
            }
        }
        IntervalBox { dims: self.center.dims().to_vec(), lo, hi }
    }

    /// The constraint as forms that must all be negative for it to hold.
    pub fn forms(&self, outputs: usize) -> Result<Vec<LinearForm>, VerifyError> {
        let unit = |i: usize, s: f64| {
            let mut a = vec![0.0; outputs];
            a[i] = s;
            a
        };
        match &self.constraint {
            OutputConstraint::Interval { lo, hi } => {
                if lo.len() != outputs {
                    return Err(VerifyError::Dims(format!("interval over {} outputs, network has {outputs}", lo.len())));
                }
                let mut f = Vec::with_capacity(2 * outputs);
                for i in 0..outputs {
                    f.push(LinearForm { a: unit(i, 1.0), b: -hi[i] });
                    f.push(LinearForm { a: unit(i, -1.0), b: lo[i] });
                }
                Ok(f)
            }
            OutputConstraint::ClassInvariant(c) => {
                if *c >= outputs || outputs < 2 {
                    return Err(VerifyError::Dims(format!("class {c} on a {outputs}-output network")));
                }
                Ok((0..outputs)
                    .filter(|j| j != c)
                    .map(|j| {
                        let mut a = unit(j, 1.0);
                        a[*c] = -1.0;
                        LinearForm { a, b: 0.0 }
                    })
                    .collect())
            }
        }
    }
}

/// Largest form value; the constraint is violated iff this is `>= 0`.
pub fn margin(forms: &[LinearForm], y: &[f64]) -> f64 {
    forms.iter().map(|f| f.eval(y)).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PropertyDoc {
    center: String,
    #[serde(default)]
    epsilon: Option<f64>,
    #[serde(default)]
    epsilon_raw: Option<f64>,
    #[serde(default)]
    input_scale: Option<f64>,
    #[serde(default)]
    clamp: Option<[f64; 2]>,
    constraint: ConstraintDoc,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum ConstraintDoc {
    Interval { lo: Vec<f64>, hi: Vec<f64> },
    ClassInvariant { class: usize },
    SteerDelta { label: f64, degrees: f64, #[serde(default)] units: AngleUnits },
}

/// Parses a property document; `center` is resolved relative to `dir`.
pub fn parse_property(text: &str, dir: &Path) -> Result<RobustnessProperty, VerifyError> {
    let doc: PropertyDoc = toml::from_str(text).map_err(|e| VerifyError::Property(e.to_string()))?;
    let path = dir.join(&doc.center);
    let center = read_blob(&path).map_err(|e| VerifyError::Property(format!("{}: {e}", path.display())))?;
    let epsilon = match (doc.epsilon, doc.epsilon_raw) {
        (Some(e), None) => e,
        (None, Some(r)) => normalized_epsilon(r, doc.input_scale.unwrap_or(1.0)),
        (None, None) => 0.0,
        (Some(_), Some(_)) => return Err(VerifyError::Property("give either epsilon or epsilon_raw".into())),
    };
    let kind = match doc.constraint {
        ConstraintDoc::Interval { lo, hi } => PropertyKind::Interval { lo, hi },
        ConstraintDoc::ClassInvariant { class } => PropertyKind::ClassInvariant(class),
        ConstraintDoc::SteerDelta { label, degrees, units } => PropertyKind::SteerDelta { label, bound_degrees: degrees, units },
    };
    make_property(center, epsilon, kind, doc.clamp.map(|[l, h]| (l, h)))
}

pub fn load_property(path: &Path) -> Result<RobustnessProperty, VerifyError> {
    let text = std::fs::read_to_string(path).map_err(|e| VerifyError::Property(format!("{}: {e}", path.display())))?;
    parse_property(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Renders a property document referring to `center_file`.
pub fn property_document(p: &RobustnessProperty, center_file: &str) -> String {
    let mut s = format!("center = {center_file:?}\nepsilon = {:?}\n", p.epsilon);
    if let Some(c) = &p.clamp {
        let lo = c.lo.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.hi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        s += &format!("clamp = [{lo:?}, {hi:?}]\n");
    }
    match &p.constraint {
        OutputConstraint::Interval { lo, hi } => {
            s += &format!("\n[constraint]\ntype = \"interval\"\nlo = {lo:?}\nhi = {hi:?}\n");
        }
        OutputConstraint::ClassInvariant(c) => {
            s += &format!("\n[constraint]\ntype = \"class_invariant\"\nclass = {c}\n");
        }
    }
    s
}
