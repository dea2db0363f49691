//! Extended nnet: convolutional and fully-connected layers with ReLU or
//! linear activations, one comma-separated record per line.

use super::lower::{conv_chain, Affine, EnnLayer};
use super::{num, parse_err, ExportError};
use crate::netgraph::NetworkGraph;

fn act(relu: bool) -> &'static str {
    if relu {
        "relu"
    } else {
        "linear"
    }
}

pub fn enn_text(graph: &NetworkGraph) -> Result<String, ExportError> {
    let (input, layers) = conv_chain(graph)?;
    let mut s = format!("// {}\nenn,1,\n", graph.name);
    s += &format!("input,{}\n", input.iter().map(|d| format!("{d},")).collect::<String>());
    s += &format!("layers,{},\n", layers.len());
    let row = |w: &[f64], b: f64| w.iter().map(|x| format!("{},", num(*x))).collect::<String>() + &format!("{},\n", num(b));
    for l in &layers {
        match l {
            EnnLayer::Conv { geom: g, w, b, relu } => {
                s += &format!(
                    "conv,{},{},{},{},{},{},{},{},{},\n",
                    g.out_channels,
                    g.in_channels,
                    g.kernel[0],
                    g.kernel[1],
                    g.stride[0],
                    g.stride[1],
                    g.padding[0],
                    g.padding[1],
                    act(*relu)
                );
                let per = w.len() / g.out_channels;
                for o in 0..g.out_channels {
                    s += &row(&w[o * per..(o + 1) * per], b[o]);
                }
            }
            EnnLayer::Dense(Affine { inf, out, w, b, relu }) => {
                s += &format!("fc,{out},{inf},{},\n", act(*relu));
                for o in 0..*out {
                    s += &row(&w[o * inf..(o + 1) * inf], b[o]);
                }
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnnRecord {
    Conv { out: usize, inc: usize, kernel: [usize; 2], stride: [usize; 2], padding: [usize; 2], relu: bool, w: Vec<f64>, b: Vec<f64> },
    Fc { out: usize, inf: usize, relu: bool, w: Vec<f64>, b: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnnModel {
    pub input: Vec<usize>,
    pub layers: Vec<EnnRecord>,
}

struct Cursor<'a> {
    lines: Box<dyn Iterator<Item = (usize, &'a str)> + 'a>,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        let it = text.lines().enumerate().filter(|(_, l)| !l.trim_start().starts_with("//") && !l.trim().is_empty());
        Self { lines: Box::new(it.map(|(i, l)| (i + 1, l))) }
    }

    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>), ExportError> {
        let (ln, l) = self.lines.next().ok_or_else(|| parse_err(0, format!("missing {what}")))?;
        Ok((ln, l.split(',').map(str::trim).filter(|t| !t.is_empty()).collect()))
    }

    /// `n` rows of `len` weights followed by a bias.
    fn rows(&mut self, n: usize, len: usize) -> Result<(Vec<f64>, Vec<f64>), ExportError> {
        let mut w = Vec::with_capacity(n * len);
        let mut b = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, f) = self.next("weight row")?;
            if f.len() != len + 1 {
                return Err(parse_err(ln, format!("expected {} values, got {}", len + 1, f.len())));
            }
            for t in &f {
                let v: f64 = t.parse().map_err(|_| parse_err(ln, format!("bad number `{t}`")))?;
                w.push(v);
            }
            b.push(w.pop().unwrap());
        }
        Ok((w, b))
    }
}

fn ints(f: &[&str], ln: usize) -> Result<Vec<usize>, ExportError> {
    f.iter().map(|t| t.parse().map_err(|_| parse_err(ln, format!("bad integer `{t}`")))).collect()
}

fn relu_flag(t: &str, ln: usize) -> Result<bool, ExportError> {
    match t {
        "relu" => Ok(true),
        "linear" => Ok(false),
        _ => Err(parse_err(ln, format!("unknown activation `{t}`"))),
    }
}

impl EnnModel {
    pub fn parse(text: &str) -> Result<Self, ExportError> {
        let mut cur = Cursor::new(text);
        let (ln, f) = cur.next("magic line")?;
        if f != ["enn", "1"] {
            return Err(parse_err(ln, "expected `enn,1,`".into()));
        }
        let (ln, f) = cur.next("input record")?;
        if f.first() != Some(&"input") || f.len() < 2 {
            return Err(parse_err(ln, "expected the input record".into()));
        }
        let input = ints(&f[1..], ln)?;
        let (ln, f) = cur.next("layer count")?;
        if f.len() != 2 || f[0] != "layers" {
            return Err(parse_err(ln, "expected the layer count".into()));
        }
        let count = ints(&f[1..], ln)?[0];
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, f) = cur.next("layer record")?;
            let rec = match f.first().copied() {
                Some("conv") if f.len() == 10 => {
                    let v = ints(&f[1..9], ln)?;
                    let relu = relu_flag(f[9], ln)?;
                    let (w, b) = cur.rows(v[0], v[1] * v[2] * v[3])?;
                    EnnRecord::Conv { out: v[0], inc: v[1], kernel: [v[2], v[3]], stride: [v[4], v[5]], padding: [v[6], v[7]], relu, w, b }
                }
                Some("fc") if f.len() == 4 => {
                    let v = ints(&f[1..3], ln)?;
                    let relu = relu_flag(f[3], ln)?;
                    let (w, b) = cur.rows(v[0], v[1])?;
                    EnnRecord::Fc { out: v[0], inf: v[1], relu, w, b }
                }
                _ => return Err(parse_err(ln, "expected a conv or fc record".into())),
            };
            layers.push(rec);
        }
        Ok(Self { input, layers })
    }

    /// Direct loop evaluation. Convolutions read `[C, H, W]`; a fully
    /// connected record reads whatever came before in row-major order.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, ExportError> {
        let mut dims = self.input.clone();
        let mut cur = x.to_vec();
        if cur.len() != dims.iter().product::<usize>() {
            return Err(parse_err(0, format!("input has {} values, file expects {:?}", cur.len(), dims)));
        }
        for rec in &self.layers {
            match rec {
                EnnRecord::Conv { out, inc, kernel, stride, padding, relu, w, b } => {
                    if dims.len() != 3 || dims[0] != *inc {
                        return Err(parse_err(0, format!("conv expects {inc} channels, got {dims:?}")));
                    }
                    let (h, wd) = (dims[1] as isize, dims[2] as isize);
                    let oh = (dims[1] + 2 * padding[0] - kernel[0]) / stride[0] + 1;
                    let ow = (dims[2] + 2 * padding[1] - kernel[1]) / stride[1] + 1;
                    let mut y = vec![0.0; out * oh * ow];
                    for o in 0..*out {
                        for r in 0..oh {
                            for c in 0..ow {
                                let mut acc = b[o];
                                for ci in 0..*inc {
                                    for ki in 0..kernel[0] {
                                        for kj in 0..kernel[1] {
                                            let ii = (r * stride[0] + ki) as isize - padding[0] as isize;
                                            let jj = (c * stride[1] + kj) as isize - padding[1] as isize;
                                            if ii < 0 || jj < 0 || ii >= h || jj >= wd {
                                                continue;
                                            }
                                            let wi = ((o * inc + ci) * kernel[0] + ki) * kernel[1] + kj;
                                            acc += w[wi] * cur[(ci * h as usize + ii as usize) * wd as usize + jj as usize];
                                        }
                                    }
                                }
                                y[(o * oh + r) * ow + c] = if *relu { acc.max(0.0) } else { acc };
                            }
                        }
                    }
                    cur = y;
                    dims = vec![*out, oh, ow];
                }
                EnnRecord::Fc { out, inf, relu, w, b } => {
                    if cur.len() != *inf {
                        return Err(parse_err(0, format!("fc expects {inf} inputs, got {}", cur.len())));
                    }
                    cur = (0..*out)
                        .map(|o| {
                            let v = b[o] + (0..*inf).map(|i| w[o * inf + i] * cur[i]).sum::<f64>();
                            if *relu {
                                v.max(0.0)
                            } else {
                                v
                            }
                        })
                        .collect();
                    dims = vec![*out];
                }
            }
        }
        Ok(cur)
    }
}
