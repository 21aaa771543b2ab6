//! Classifiers over fused palpation features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsp::SensorMask;

pub mod confusion;
pub mod mlp;
pub mod model;
pub mod pca;
pub mod svm;

pub use confusion::ConfusionMatrix;
pub use mlp::{Activation, MlpConfig, MlpModel};
pub use model::{ModelDoc, ModelParams};
pub use pca::{pca_fit, PcaFit, PcaModel};
pub use svm::{Kernel, SvmConfig, SvmModel};

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("empty data")]
    Empty,
    #[error("need at least {needed} classes, found {found}")]
    TooFewClasses { found: usize, needed: usize },
    #[error("class '{class}' has {count} samples, need at least {needed}")]
    TooFewSamples { class: String, count: usize, needed: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("training diverged (loss is not finite) with learning rate {lr}")]
    Diverged { lr: f64 },
    #[error("k = {k} exceeds dimension {dim}")]
    BadK { k: usize, dim: usize },
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub class_names: Vec<String>,
    pub mask: SensorMask,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<usize>, class_names: Vec<String>, mask: SensorMask) -> Result<Self, LearnError> {
        let d = Self {
            x,
            y,
            class_names,
            mask,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.x.is_empty() || self.x.len() != self.y.len() {
            return Err(LearnError::Empty);
        }
        let dim = self.x[0].len();
        for (r, row) in self.x.iter().enumerate() {
            if row.len() != dim {
                return Err(LearnError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(LearnError::NonFinite { row: r, col: c });
            }
        }
        if let Some(&label) = self.y.iter().find(|&&l| l >= self.class_names.len()) {
            return Err(LearnError::BadLabel {
                label,
                classes: self.class_names.len(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for &l in &self.y {
            c[l] += 1;
        }
        c
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            class_names: self.class_names.clone(),
            mask: self.mask,
        }
    }

    /// Keep only the columns of a full-width dataset selected by `mask`.
    pub fn with_mask(&self, mask: SensorMask) -> Self {
        Self {
            x: self.x.iter().map(|r| mask.select(r)).collect(),
            y: self.y.clone(),
            class_names: self.class_names.clone(),
            mask,
        }
    }

    pub fn map_x(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        Self {
            x: self.x.iter().map(|r| f(r)).collect(),
            ..self.clone()
        }
    }

    /// Enforce the minimum class structure a classifier needs.
    pub fn require_trainable(&self, min_per_class: usize) -> Result<(), LearnError> {
        self.validate()?;
        let counts = self.class_counts();
        let present = counts.iter().filter(|&&c| c > 0).count();
        if present < 2 {
            return Err(LearnError::TooFewClasses { found: present, needed: 2 });
        }
        for (c, &n) in counts.iter().enumerate() {
            if n < min_per_class {
                return Err(LearnError::TooFewSamples {
                    class: self.class_names[c].clone(),
                    count: n,
                    needed: min_per_class,
                });
            }
        }
        Ok(())
    }

    /// SHA-256 over the exact feature bits, labels and class names.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.class_names {
            h.update(name.as_bytes());
            h.update([0]);
        }
        h.update(self.mask.to_string().as_bytes());
        for (row, &label) in self.x.iter().zip(&self.y) {
            h.update((label as u64).to_le_bytes());
            for v in row {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-column affine standardization fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Result<Self, LearnError> {
        let n = x.len();
        if n == 0 {
            return Err(LearnError::Empty);
        }
        let d = x[0].len();
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let sd = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd < 1e-12 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, sd })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            sd: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.sd)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn apply_all(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter().map(|r| self.apply(r)).collect()
    }
}

/// Per-class shuffled split; returns sorted `(train, test)` indices.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
        .0
}

/// Anything that maps a standardized feature row to class probabilities.
pub trait Classifier {
    fn n_classes(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn predict_proba_row(&self, x: &[f64]) -> Vec<f64>;

    fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LearnError> {
        x.iter()
            .map(|r| {
                if r.len() != self.input_dim() {
                    return Err(LearnError::DimensionMismatch {
                        expected: self.input_dim(),
                        got: r.len(),
                    });
                }
                Ok(self.predict_proba_row(r))
            })
            .collect()
    }

    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>, LearnError> {
        Ok(self.predict_proba(x)?.iter().map(|p| argmax(p)).collect())
    }
}

pub fn evaluate(model: &dyn Classifier, test: &Dataset) -> Result<ConfusionMatrix, LearnError> {
    if test.is_empty() {
        return Err(LearnError::Empty);
    }
    let pred = model.predict(&test.x)?;
    ConfusionMatrix::from_predictions(&test.y, &pred, test.class_names.clone())
}
