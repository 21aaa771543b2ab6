//! Fully connected network with a softmax output, trained on cross-entropy
//! by mini-batch SGD with momentum.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Classifier, Dataset, LearnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: Activation::Relu,
            epochs: 300,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<Layer>,
    pub class_names: Vec<String>,
    /// Mean training cross-entropy after each epoch.
    pub loss_history: Vec<f64>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(sizes: &[usize], activation: Activation, class_names: Vec<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    inputs: fan_in,
                    outputs: fan_out,
                    weights: (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect(),
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Self {
            sizes: sizes.to_vec(),
            activation,
            layers,
            class_names,
            loss_history: Vec::new(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameters flattened layer by layer: weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend(&l.weights);
            p.extend(&l.biases);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut o = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[o..o + nw]);
            o += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&p[o..o + nb]);
            o += nb;
        }
    }

    /// Pre-activations of every layer.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut a: Vec<f64> = x.to_vec();
        for (li, l) in self.layers.iter().enumerate() {
            let z: Vec<f64> = (0..l.outputs)
                .map(|o| {
                    let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                    row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + l.biases[o]
                })
                .collect();
            if li + 1 < self.layers.len() {
                a = z.iter().map(|&v| self.activation.apply(v)).collect();
            }
            zs.push(z);
        }
        zs
    }

    pub fn proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(self.forward(x).last().expect("at least one layer"))
    }

    /// Mean cross-entropy over the batch and its gradient w.r.t. `params()`.
    pub fn loss_and_grad(&self, x: &[Vec<f64>], y: &[usize]) -> (f64, Vec<f64>) {
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
            .collect();
        let mut loss = 0.0;
        let n = x.len() as f64;
        for (xi, &yi) in x.iter().zip(y) {
            let zs = self.forward(xi);
            let p = softmax(zs.last().expect("layer"));
            loss -= p[yi].max(1e-300).ln();
            let mut delta: Vec<f64> = p.clone();
            delta[yi] -= 1.0;
            for li in (0..self.layers.len()).rev() {
                let l = &self.layers[li];
                let input: Vec<f64> = if li == 0 {
                    xi.clone()
                } else {
                    zs[li - 1].iter().map(|&v| self.activation.apply(v)).collect()
                };
                let (gw, gb) = &mut grads[li];
                for o in 0..l.outputs {
                    gb[o] += delta[o] / n;
                    for i in 0..l.inputs {
                        gw[o * l.inputs + i] += delta[o] * input[i] / n;
                    }
                }
                if li > 0 {
                    let zprev = &zs[li - 1];
                    delta = (0..l.inputs)
                        .map(|i| {
                            let back: f64 = (0..l.outputs).map(|o| l.weights[o * l.inputs + i] * delta[o]).sum();
                            back * self.activation.derivative(zprev[i])
                        })
                        .collect();
                }
            }
        }
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        (loss / n, flat)
    }

    pub fn loss(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        x.iter().zip(y).map(|(xi, &yi)| -self.proba(xi)[yi].max(1e-300).ln()).sum::<f64>() / x.len() as f64
    }

    /// Train on already-standardized features.
    pub fn train(data: &Dataset, cfg: &MlpConfig) -> Result<Self, LearnError> {
        data.require_trainable(2)?;
        if cfg.batch_size == 0 {
            return Err(LearnError::Invalid("batch size must be > 0".into()));
        }
        let mut sizes = vec![data.dim()];
        sizes.extend(&cfg.hidden);
        sizes.push(data.n_classes());
        let mut model = Self::init(&sizes, cfg.activation, data.class_names.clone(), cfg.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546);
        let mut params = model.params();
        let mut velocity = vec![0.0; params.len()];
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let bx: Vec<Vec<f64>> = batch.iter().map(|&i| data.x[i].clone()).collect();
                let by: Vec<usize> = batch.iter().map(|&i| data.y[i]).collect();
                let (_, g) = model.loss_and_grad(&bx, &by);
                for ((p, v), gi) in params.iter_mut().zip(velocity.iter_mut()).zip(&g) {
                    *v = cfg.momentum * *v - cfg.learning_rate * gi;
                    *p += *v;
                }
                model.set_params(&params);
            }
            let loss = model.loss(&data.x, &data.y);
            if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
                return Err(LearnError::Diverged { lr: cfg.learning_rate });
            }
            model.loss_history.push(loss);
        }
        Ok(model)
    }
}

impl Classifier for MlpModel {
    fn n_classes(&self) -> usize {
        *self.sizes.last().expect("sizes")
    }

    fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    fn predict_proba_row(&self, x: &[f64]) -> Vec<f64> {
        self.proba(x)
    }
}
