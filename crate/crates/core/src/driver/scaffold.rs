use std::path::{Path, PathBuf};

use super::DriverError;
use crate::distill::{evaluate, init_student};
use crate::netgraph::reference::dronet_toy;
use crate::netgraph::save_network;
use crate::synth::uniform_inputs;
use crate::tensor::{write_blob, Tensor};
use crate::verify::{make_property, normalized_epsilon, property_document, AngleUnits, PropertyKind};

const SAMPLES: usize = 600;
const BASIS: usize = 4;

/// Images mixing a few fixed random patterns, so the inputs lie near a
/// low-dimensional set that a small student can cover.
fn images(dims: &[usize], seed: u64) -> Tensor {
    let per: usize = dims.iter().product();
    let basis = uniform_inputs(&[per], BASIS, 0.0, 1.0, seed);
    let coef = uniform_inputs(&[BASIS], SAMPLES, 0.0, 1.0, seed.wrapping_add(1));
    let mut data = Vec::with_capacity(SAMPLES * per);
    for i in 0..SAMPLES {
        let c = coef.row(i);
        for j in 0..per {
            let v: f32 = (0..BASIS).map(|k| c[k] * basis.row(k)[j]).sum::<f32>() / BASIS as f32 * 2.0;
            data.push(v.min(1.0));
        }
    }
    let mut d = vec![SAMPLES];
    d.extend_from_slice(dims);
    Tensor::new(d, data).expect("sizes match")
}
const PROPERTIES: usize = 2;

fn config_text(seed: u64) -> String {
    format!(
        r#"# Drop two residual blocks, linearize the remaining one and halve the
# stem convolution of the toy residual steering network.
seed = {seed}
output_dir = "out"

[model]
path = "models/teacher.toml"

[[transform.strategy]]
type = "drop"
layers = [2, 3]

[[transform.strategy]]
type = "forall"
predicate = "is_residual"
op = "linearize"

[[transform.strategy]]
type = "scale"
layers = [0]
factor = 0.5

[distillation]
threshold = 1e-4
task = "regression"

[distillation.parameters]
epochs = 20
batch_size = 32
optimizer = "adam"
learning_rate = 1e-2
loss = "mse"

[distillation.data.teacher]
path = "data/inputs.r4vt"

[distillation.data.student]
path = "data/inputs.r4vt"

[verify]
properties = ["props/p0.toml", "props/p1.toml"]
max_regions = 64
falsify_samples = 200

[export]
targets = ["rlv"]

[search]
emax = 0.05
tmax = 30
max_candidates = 8

[report]
time_decimals = 2
"#
    )
}

/// Writes a self-contained scenario (teacher network, dataset, steering
/// properties and a config) under `dir` and returns the config path.
pub fn scaffold(dir: &Path, seed: u64) -> Result<PathBuf, DriverError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| DriverError::Io { path: p, source }
    };
    for sub in ["models", "data", "props"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(io(&dir.join(sub)))?;
    }
    let teacher = init_student(&dronet_toy(), seed, None)?;
    save_network(&teacher, &dir.join("models/teacher.toml"))?;
    let inputs = images(&teacher.input_shape, seed.wrapping_add(1));
    let blob = |p: PathBuf, t: &Tensor| write_blob(&p, t).map_err(|e| DriverError::Config(format!("{}: {e}", p.display())));
    blob(dir.join("data/inputs.r4vt"), &inputs)?;
    let outputs = evaluate(&teacher, &inputs.select_rows(&(0..PROPERTIES).collect::<Vec<_>>()), PROPERTIES)?;
    for i in 0..PROPERTIES {
        let center = Tensor::new(teacher.input_shape.clone(), inputs.row(i).to_vec()).expect("row matches input dims");
        let label = outputs.row(i)[0] as f64;
        let kind = PropertyKind::SteerDelta { label, bound_degrees: 10.0, units: AngleUnits::Radians };
        let p = make_property(center.clone(), normalized_epsilon(1.0, 255.0), kind, Some((0.0, 1.0)))
            .map_err(|e| DriverError::Config(e.to_string()))?;
        let center_file = format!("p{i}.center.r4vt");
        blob(dir.join("props").join(&center_file), &center)?;
        let doc = dir.join(format!("props/p{i}.toml"));
        std::fs::write(&doc, property_document(&p, &center_file)).map_err(io(&doc))?;
    }
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, config_text(seed)).map_err(io(&cfg))?;
    Ok(cfg)
}
