//! First-order optimizers over flat parameter slots.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd { learning_rate: f64, momentum: f64 },
    Adam { learning_rate: f64, beta1: f64, beta2: f64, eps: f64 },
    Adadelta { learning_rate: f64, rho: f64, eps: f64 },
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Self {
        Optimizer::Sgd { learning_rate, momentum: 0.0 }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Optimizer::Adam { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn adadelta() -> Self {
        Optimizer::Adadelta { learning_rate: 1.0, rho: 0.9, eps: 1e-6 }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam(1e-3)
    }
}

/// Optimizer plus its per-slot state.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, slots: &[Vec<f32>]) -> Self {
        let zeros = || slots.iter().map(|s| vec![0.0f32; s.len()]).collect::<Vec<_>>();
        Self { kind, step: 0, first: zeros(), second: zeros() }
    }

    /// Applies one update to every slot flagged trainable.
    pub fn step(&mut self, params: &mut [Vec<f32>], grads: &[Vec<f32>], trainable: &[bool]) {
        self.step += 1;
        let t = self.step as i32;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if !trainable[k] {
                continue;
            }
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            match self.kind {
                Optimizer::Sgd { learning_rate, momentum } => {
                    let (lr, mu) = (learning_rate as f32, momentum as f32);
                    for ((p, &g), m) in p.iter_mut().zip(g).zip(m.iter_mut()) {
                        *m = mu * *m + g;
                        *p -= lr * *m;
                    }
                }
                Optimizer::Adam { learning_rate, beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let (b1, b2) = (beta1 as f32, beta2 as f32);
                    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        let mh = *m as f64 / c1;
                        let vh = *v as f64 / c2;
                        *p -= (learning_rate * mh / (vh.sqrt() + eps)) as f32;
                    }
                }
                Optimizer::Adadelta { learning_rate, rho, eps } => {
                    let (r, e) = (rho as f32, eps as f32);
                    // m: running mean of squared updates, v: of squared gradients
                    for (((p, &g), acc_dx), acc_g) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *acc_g = r * *acc_g + (1.0 - r) * g * g;
                        let dx = ((*acc_dx + e).sqrt() / (*acc_g + e).sqrt()) * g;
                        *acc_dx = r * *acc_dx + (1.0 - r) * dx * dx;
                        *p -= learning_rate as f32 * dx;
                    }
                }
            }
        }
    }
}
