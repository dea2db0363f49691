//! The nnet format: comma-separated header and weight rows for a fully
//! connected ReLU network with a linear output layer.

use super::lower::{dense_chain, Affine};
use super::{num, parse_err, ExportError};
use crate::netgraph::NetworkGraph;
use crate::verify::{LinearForm, RobustnessProperty};

/// Appends the affine and ReLU layers that compute the largest constraint
/// form, so the single final output is negative iff the property holds.
/// Pairs are reduced with max(a, b) = relu(a - b) + relu(b) - relu(-b).
pub(crate) fn append_margin(layers: &mut Vec<Affine>, forms: &[LinearForm]) {
    let last = layers.pop().expect("at least one layer");
    let m = last.out;
    let k0 = forms.len();
    let f = Affine { inf: m, out: k0, w: forms.iter().flat_map(|f| f.a.clone()).collect(), b: forms.iter().map(|f| f.b).collect(), relu: false };
    let mut cur = last.then(&f);
    let mut k = k0;
    while k > 1 {
        let pairs = k / 2;
        let odd = k % 2 == 1;
        let units = 3 * pairs + if odd { 2 } else { 0 };
        let mut t = Affine { inf: k, out: units, w: vec![0.0; units * k], b: vec![0.0; units], relu: true };
        let next = pairs + odd as usize;
        let mut c = Affine { inf: units, out: next, w: vec![0.0; next * units], b: vec![0.0; next], relu: false };
        for p in 0..pairs {
            let (a, b) = (2 * p, 2 * p + 1);
            let u = 3 * p;
            t.w[u * k + a] = 1.0;
            t.w[u * k + b] = -1.0;
            t.w[(u + 1) * k + b] = 1.0;
            t.w[(u + 2) * k + b] = -1.0;
            c.w[p * units + u] = 1.0;
            c.w[p * units + u + 1] = 1.0;
            c.w[p * units + u + 2] = -1.0;
        }
        if odd {
            let (a, u) = (k - 1, 3 * pairs);
            t.w[u * k + a] = 1.0;
            t.w[(u + 1) * k + a] = -1.0;
            c.w[pairs * units + u] = 1.0;
            c.w[pairs * units + u + 1] = -1.0;
        }
        layers.push(cur.then(&t));
        cur = c;
        k = next;
    }
    layers.push(cur);
}

pub(crate) fn render(layers: &[Affine], n_in: usize, mins: &[f64], maxs: &[f64], comment: &str) -> String {
    let mut s = String::new();
    for line in comment.lines() {
        s += &format!("// {line}\n");
    }
    let sizes: Vec<usize> = std::iter::once(n_in).chain(layers.iter().map(|l| l.out)).collect();
    let max_size = sizes.iter().copied().max().unwrap_or(0);
    let out = *sizes.last().unwrap_or(&0);
    s += &format!("{},{},{},{},\n", layers.len(), n_in, out, max_size);
    s += &sizes.iter().map(|v| format!("{v},")).collect::<String>();
    s += "\n0,\n";
    let row = |v: &[f64]| v.iter().map(|x| format!("{},", num(*x))).collect::<String>() + "\n";
    s += &row(mins);
    s += &row(maxs);
    s += &row(&vec![0.0; n_in + 1]);
    s += &row(&vec![1.0; n_in + 1]);
    for l in layers {
        for o in 0..l.out {
            s += &row(&l.w[o * l.inf..(o + 1) * l.inf]);
        }
        for o in 0..l.out {
            s += &row(&l.b[o..o + 1]);
        }
    }
    s
}

/// Writes `graph` (fully connected, ReLU) as nnet text. With a property, the
/// header bounds are its input box and margin layers are appended so that
/// the single output is `< 0` exactly where the property holds.
pub fn nnet_text(graph: &NetworkGraph, prop: Option<&RobustnessProperty>) -> Result<String, ExportError> {
    let (n_in, mut layers) = dense_chain(graph)?;
    let (mins, maxs, comment) = match prop {
        Some(p) => {
            let out = layers.last().map(|l| l.out).unwrap_or(0);
            let forms = p.forms(out).map_err(|e| ExportError::UnsupportedConstraint(e.to_string()))?;
            append_margin(&mut layers, &forms);
            let b = p.input_box();
            (b.lo, b.hi, format!("{}\nproperty holds iff the output is negative on the input box", graph.name))
        }
        None => (vec![f64::NEG_INFINITY; n_in], vec![f64::INFINITY; n_in], graph.name.clone()),
    };
    Ok(render(&layers, n_in, &mins, &maxs, &comment))
}

/// Parsed nnet file.
#[derive(Debug, Clone, PartialEq)]
pub struct NnetModel {
    pub input_size: usize,
    pub layer_sizes: Vec<usize>,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub means: Vec<f64>,
    pub ranges: Vec<f64>,
    /// Per layer: row-major weights and biases.
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

fn fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).filter(|t| !t.is_empty()).collect()
}

fn numbers(line: &str, lineno: usize) -> Result<Vec<f64>, ExportError> {
    fields(line).iter().map(|t| t.parse::<f64>().map_err(|_| parse_err(lineno, format!("bad number `{t}`")))).collect()
}

impl NnetModel {
    pub fn parse(text: &str) -> Result<Self, ExportError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim_start().starts_with("//") && !l.trim().is_empty());
        let mut next = |what: &str| -> Result<(usize, &str), ExportError> {
            lines.next().map(|(i, l)| (i + 1, l)).ok_or_else(|| parse_err(0, format!("missing {what}")))
        };
        let (ln, header) = next("header")?;
        let h: Vec<usize> = fields(header)
            .iter()
            .map(|t| t.parse().map_err(|_| parse_err(ln, format!("bad header field `{t}`"))))
            .collect::<Result<_, _>>()?;
        if h.len() < 4 {
            return Err(parse_err(ln, "header needs four fields".into()));
        }
        let (n_layers, n_in) = (h[0], h[1]);
        let (ln, sizes) = next("layer sizes")?;
        let sizes: Vec<usize> = fields(sizes)
            .iter()
            .map(|t| t.parse().map_err(|_| parse_err(ln, format!("bad layer size `{t}`"))))
            .collect::<Result<_, _>>()?;
        if sizes.len() != n_layers + 1 || sizes[0] != n_in || sizes.last() != Some(&h[2]) {
            return Err(parse_err(ln, "layer sizes disagree with the header".into()));
        }
        next("symmetric flag")?;
        let mut vec_line = |what: &str, len: usize| -> Result<Vec<f64>, ExportError> {
            let (ln, l) = next(what)?;
            let v = numbers(l, ln)?;
            if v.len() != len {
                return Err(parse_err(ln, format!("{what}: expected {len} values, got {}", v.len())));
            }
            Ok(v)
        };
        let mins = vec_line("input minimums", n_in)?;
        let maxs = vec_line("input maximums", n_in)?;
        let means = vec_line("means", n_in + 1)?;
        let ranges = vec_line("ranges", n_in + 1)?;
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let (inf, out) = (sizes[k], sizes[k + 1]);
            let mut w = Vec::with_capacity(inf * out);
            for _ in 0..out {
                w.extend(vec_line("weight row", inf)?);
            }
            let mut b = Vec::with_capacity(out);
            for _ in 0..out {
                b.extend(vec_line("bias", 1)?);
            }
            layers.push((w, b));
        }
        Ok(Self { input_size: n_in, layer_sizes: sizes, mins, maxs, means, ranges, layers })
    }

    /// Normalizes, applies every layer (ReLU on all but the last) and
    /// de-normalizes the outputs.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let n = self.input_size;
        let mut cur: Vec<f64> = (0..n).map(|i| (x[i] - self.means[i]) / self.ranges[i]).collect();
        for (k, (w, b)) in self.layers.iter().enumerate() {
            let (inf, out) = (self.layer_sizes[k], self.layer_sizes[k + 1]);
            let last = k + 1 == self.layers.len();
            cur = (0..out)
                .map(|o| {
                    let mut v = b[o];
                    for i in 0..inf {
                        v += w[o * inf + i] * cur[i];
                    }
                    if last {
                        v
                    } else {
                        v.max(0.0)
                    }
                })
                .collect();
        }
        cur.iter().map(|v| v * self.ranges[n] + self.means[n]).collect()
    }
}
