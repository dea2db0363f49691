//! Planet-style rlv: one line per neuron, with the input box and the
//! property violation written as assertions.

use std::collections::HashMap;

use super::lower::unsupported;
use super::{num, parse_err, ExportError};
use crate::kernels::Activation;
use crate::netgraph::{LayerId, NetworkGraph, Prepared, Step};
use crate::verify::RobustnessProperty;

struct Writer {
    text: String,
}

impl Writer {
    fn neuron(&mut self, kind: &str, name: &str, bias: f64, terms: impl IntoIterator<Item = (f64, String)>) {
        self.text += &format!("{kind} {name} {}", num(bias));
        for (w, src) in terms {
            if w != 0.0 {
                self.text += &format!(" {} {src}", num(w));
            }
        }
        self.text.push('\n');
    }

    fn kind(id: LayerId, act: Activation) -> Result<&'static str, ExportError> {
        match act {
            Activation::Relu => Ok("ReLU"),
            Activation::None => Ok("Linear"),
            a => Err(unsupported(id, &format!("{a:?} activation"), "rlv supports ReLU and linear neurons only")),
        }
    }

    fn step(&mut self, id: LayerId, s: &Step<f64>, x: Vec<String>, prefix: &str) -> Result<Vec<String>, ExportError> {
        let name = |k: usize| format!("{prefix}_{k}");
        Ok(match s {
            Step::Dense { inf, out, w, b, act } => {
                let kind = Self::kind(id, *act)?;
                for o in 0..*out {
                    self.neuron(kind, &name(o), b[o], (0..*inf).map(|i| (w[o * inf + i], x[i].clone())));
                }
                (0..*out).map(name).collect()
            }
            Step::Conv { geom: g, w, b, act } => {
                let kind = Self::kind(id, *act)?;
                let (oh, ow) = g.out_hw();
                let mut names = Vec::with_capacity(g.out_channels * oh * ow);
                for o in 0..g.out_channels {
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut terms = Vec::new();
                            for ci in 0..g.in_channels {
                                for ki in 0..g.kernel[0] {
                                    for kj in 0..g.kernel[1] {
                                        let ii = (r * g.stride[0] + ki) as isize - g.padding[0] as isize;
                                        let jj = (c * g.stride[1] + kj) as isize - g.padding[1] as isize;
                                        if ii < 0 || jj < 0 || ii >= g.in_h as isize || jj >= g.in_w as isize {
                                            continue;
                                        }
                                        let wi = ((o * g.in_channels + ci) * g.kernel[0] + ki) * g.kernel[1] + kj;
                                        let xi = (ci * g.in_h + ii as usize) * g.in_w + jj as usize;
                                        terms.push((w[wi], x[xi].clone()));
                                    }
                                }
                            }
                            let n = name(names.len());
                            self.neuron(kind, &n, b[o], terms);
                            names.push(n);
                        }
                    }
                }
                names
            }
            Step::Pool { geom: g } => {
                let (oh, ow) = g.out_hw();
                let mut names = Vec::with_capacity(g.channels * oh * ow);
                for ch in 0..g.channels {
                    for r in 0..oh {
                        for c in 0..ow {
                            let n = name(names.len());
                            self.text += &format!("MaxPool {n}");
                            for ki in 0..g.kernel[0] {
                                for kj in 0..g.kernel[1] {
                                    let xi = (ch * g.in_h + r * g.stride[0] + ki) * g.in_w + c * g.stride[1] + kj;
                                    self.text += &format!(" {}", x[xi]);
                                }
                            }
                            self.text.push('\n');
                            names.push(n);
                        }
                    }
                }
                names
            }
            Step::Norm { channels, spatial, stats } => {
                let mut names = Vec::with_capacity(x.len());
                for c in 0..*channels {
                    let s = stats[0][c] / (stats[3][c] + crate::kernels::BN_EPS).sqrt();
                    let t = stats[1][c] - stats[2][c] * s;
                    for k in 0..*spatial {
                        let i = c * spatial + k;
                        self.neuron("Linear", &name(i), t, [(s, x[i].clone())]);
                        names.push(name(i));
                    }
                }
                names
            }
            Step::Permute { map } => map.iter().map(|&m| x[m].clone()).collect(),
            Step::Reshape => x,
            Step::Residual { path, shortcut } => {
                let short = match shortcut {
                    None => x.clone(),
                    Some(sc) => self.step(id, sc, x.clone(), &format!("{prefix}s"))?,
                };
                let mut y = x;
                for (j, s) in path.iter().enumerate() {
                    y = self.step(id, s, y, &format!("{prefix}p{j}"))?;
                }
                let mut names = Vec::with_capacity(y.len());
                for (k, (a, b)) in y.into_iter().zip(short).enumerate() {
                    let n = name(k);
                    self.neuron("Linear", &n, 0.0, [(1.0, a), (1.0, b)]);
                    names.push(n);
                }
                names
            }
        })
    }
}

/// Renders `graph` as rlv. With a property, each input is bounded by its
/// box and a `violation` neuron (the largest constraint form) is asserted
/// non-negative, so the file is satisfiable iff the property is violated.
pub fn rlv_text(graph: &NetworkGraph, prop: Option<&RobustnessProperty>) -> Result<String, ExportError> {
    let p = Prepared::<f64>::new(graph)?;
    let n_in: usize = graph.input_shape.iter().product();
    let bounds = match prop {
        Some(prop) => {
            let b = prop.input_box();
            if let Some(i) = (0..n_in).find(|&i| !b.lo[i].is_finite() || !b.hi[i].is_finite()) {
                return Err(ExportError::UnboundedInput(i));
            }
            Some((b.lo, b.hi))
        }
        None => None,
    };
    let mut w = Writer { text: format!("# {}\n", graph.name) };
    let mut cur: Vec<String> = (0..n_in).map(|i| format!("in_{i}")).collect();
    for name in &cur {
        w.text += &format!("Input {name}\n");
    }
    for (pos, (l, s)) in graph.layers.iter().zip(p.steps()).enumerate() {
        cur = w.step(l.id, s, cur, &format!("l{pos}"))?;
    }
    let outs: Vec<String> = (0..cur.len()).map(|k| format!("out_{k}")).collect();
    for (o, src) in outs.iter().zip(cur) {
        w.neuron("Linear", o, 0.0, [(1.0, src)]);
    }
    if let (Some(prop), Some((lo, hi))) = (prop, bounds) {
        let forms = prop.forms(outs.len()).map_err(|e| ExportError::UnsupportedConstraint(e.to_string()))?;
        for (j, f) in forms.iter().enumerate() {
            w.neuron("Linear", &format!("margin_{j}"), f.b, f.a.iter().copied().zip(outs.iter().cloned()));
        }
        w.text += "MaxPool violation";
        for j in 0..forms.len() {
            w.text += &format!(" margin_{j}");
        }
        w.text.push('\n');
        for i in 0..n_in {
            w.text += &format!("Assert <= {} 1.0 in_{i}\n", num(lo[i]));
            w.text += &format!("Assert >= {} 1.0 in_{i}\n", num(hi[i]));
        }
        w.text += "Assert <= 0.0 1.0 violation\n";
    }
    Ok(w.text)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RlvNode {
    Input,
    Linear { bias: f64, terms: Vec<(f64, usize)> },
    Relu { bias: f64, terms: Vec<(f64, usize)> },
    MaxPool(Vec<usize>),
}

/// `lhs op sum(w * node)`, with `op` one of `<=`, `>=`, `==`.
#[derive(Debug, Clone, PartialEq)]
pub struct RlvAssert {
    pub op: String,
    pub lhs: f64,
    pub terms: Vec<(f64, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlvModel {
    pub names: Vec<String>,
    pub nodes: Vec<RlvNode>,
    pub asserts: Vec<RlvAssert>,
}

impl RlvModel {
    pub fn parse(text: &str) -> Result<Self, ExportError> {
        let mut m = RlvModel { names: Vec::new(), nodes: Vec::new(), asserts: Vec::new() };
        let mut index: HashMap<String, usize> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            let lookup = |t: &str| index.get(t).copied().ok_or_else(|| parse_err(ln, format!("unknown neuron `{t}`")));
            let number = |t: &str| t.parse::<f64>().map_err(|_| parse_err(ln, format!("bad number `{t}`")));
            let terms = |rest: &[&str]| -> Result<Vec<(f64, usize)>, ExportError> {
                if !rest.len().is_multiple_of(2) {
                    return Err(parse_err(ln, "weights and sources must come in pairs".into()));
                }
                rest.chunks(2).map(|c| Ok((number(c[0])?, lookup(c[1])?))).collect()
            };
            let (node, name) = match tok.as_slice() {
                ["Input", name] => (RlvNode::Input, *name),
                ["Linear", name, bias, rest @ ..] => (RlvNode::Linear { bias: number(bias)?, terms: terms(rest)? }, *name),
                ["ReLU", name, bias, rest @ ..] => (RlvNode::Relu { bias: number(bias)?, terms: terms(rest)? }, *name),
                ["MaxPool", name, rest @ ..] if !rest.is_empty() => {
                    (RlvNode::MaxPool(rest.iter().map(|t| lookup(t)).collect::<Result<_, _>>()?), *name)
                }
                ["Assert", op @ ("<=" | ">=" | "=="), lhs, rest @ ..] => {
                    m.asserts.push(RlvAssert { op: op.to_string(), lhs: number(lhs)?, terms: terms(rest)? });
                    continue;
                }
                _ => return Err(parse_err(ln, format!("unrecognized line `{line}`"))),
            };
            if index.insert(name.to_string(), m.nodes.len()).is_some() {
                return Err(parse_err(ln, format!("neuron `{name}` defined twice")));
            }
            m.names.push(name.to_string());
            m.nodes.push(node);
        }
        Ok(m)
    }

    pub fn inputs(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, RlvNode::Input)).count()
    }

    /// Values of every neuron, inputs taken from `x` in declaration order.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, ExportError> {
        if x.len() != self.inputs() {
            return Err(parse_err(0, format!("expected {} inputs, got {}", self.inputs(), x.len())));
        }
        let mut v = Vec::with_capacity(self.nodes.len());
        let mut next_in = 0;
        let affine = |bias: f64, terms: &[(f64, usize)], v: &[f64]| bias + terms.iter().map(|(w, s)| w * v[*s]).sum::<f64>();
        for n in &self.nodes {
            let val = match n {
                RlvNode::Input => {
                    next_in += 1;
                    x[next_in - 1]
                }
                RlvNode::Linear { bias, terms } => affine(*bias, terms, &v),
                RlvNode::Relu { bias, terms } => affine(*bias, terms, &v).max(0.0),
                RlvNode::MaxPool(src) => src.iter().map(|&s| v[s]).fold(f64::NEG_INFINITY, f64::max),
            };
            v.push(val);
        }
        Ok(v)
    }

    pub fn value(&self, values: &[f64], name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| values[i])
    }

    /// The `out_k` values in order.
    pub fn outputs(&self, values: &[f64]) -> Vec<f64> {
        let mut outs: Vec<(usize, f64)> = self
            .names
            .iter()
            .zip(values)
            .filter_map(|(n, v)| n.strip_prefix("out_").and_then(|k| k.parse().ok()).map(|k: usize| (k, *v)))
            .collect();
        outs.sort_by_key(|(k, _)| *k);
        outs.into_iter().map(|(_, v)| v).collect()
    }
}
