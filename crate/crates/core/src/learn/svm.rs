//! One-vs-rest soft-margin SVMs.
//!
//! Each binary machine is solved with SMO using second-order working-set
//! selection over a precomputed kernel matrix. Decision values are turned
//! into probabilities by a per-machine sigmoid fitted with a regularized
//! Newton method, then normalized across machines.

use serde::{Deserialize, Serialize};

use super::{Classifier, Dataset, LearnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    /// `None` picks an RBF kernel with `gamma = 1 / (D * var(X))`.
    pub kernel: Option<Kernel>,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            kernel: None,
            tolerance: 1e-3,
            max_iter: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub coefficients: Vec<f64>,
    pub rho: f64,
    pub platt_a: f64,
    pub platt_b: f64,
    pub iterations: usize,
    /// Largest KKT violation at exit.
    pub gap: f64,
}

impl BinaryMachine {
    pub fn decision(&self, kernel: &Kernel, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, c)| c * kernel.eval(sv, x))
            .sum::<f64>()
            - self.rho
    }

    pub fn probability(&self, f: f64) -> f64 {
        sigmoid_prob(f, self.platt_a, self.platt_b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    pub dim: usize,
    pub class_names: Vec<String>,
    pub machines: Vec<BinaryMachine>,
}

pub fn default_gamma(x: &[Vec<f64>]) -> f64 {
    let n = x.iter().map(Vec::len).sum::<usize>() as f64;
    let mean = x.iter().flatten().sum::<f64>() / n;
    let var = x.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let d = x.first().map_or(1, Vec::len) as f64;
    if var > 0.0 {
        1.0 / (d * var)
    } else {
        1.0 / d
    }
}

/// Solution of one binary dual problem.
#[derive(Debug, Clone)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub gap: f64,
}

/// SMO for `min ½αᵀQα − Σα` s.t. `0 ≤ α ≤ C`, `yᵀα = 0`, `Q_ij = y_i y_j K_ij`.
pub fn smo(k: &[Vec<f64>], y: &[f64], c: f64, tol: f64, max_iter: usize) -> SmoSolution {
    const TAU: f64 = 1e-12;
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    let mut iterations = 0;
    let mut gap;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let mut a = k[i][i] + k[t][t] - 2.0 * k[i][t];
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -(b * b) / a;
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap < tol || iterations >= max_iter {
            break;
        }
        iterations += 1;

        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * k[i][j];
        if y[i] != y[j] {
            let mut quad = k[i][i] + k[j][j] + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = k[i][i] + k[j][j] - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai_old, alpha[j] - aj_old);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k[t][i] * di + y[j] * k[t][j] * dj);
        }
    }

    // Offset: average over free vectors, else midpoint of the feasible range.
    let (mut sum, mut n_free) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum += yg;
        }
    }
    let rho = if n_free > 0 { sum / n_free as f64 } else { (ub + lb) / 2.0 };
    SmoSolution {
        alpha,
        rho,
        iterations,
        gap,
    }
}

fn sigmoid_prob(f: f64, a: f64, b: f64) -> f64 {
    let z = f * a + b;
    if z >= 0.0 {
        (-z).exp() / (1.0 + (-z).exp())
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Sigmoid `P(y=1|f) = 1 / (1 + exp(A f + B))` by regularized maximum
/// likelihood (Newton with backtracking line search).
pub fn platt_fit(dec: &[f64], positive: &[bool]) -> (f64, f64) {
    let prior1 = positive.iter().filter(|&&p| p).count() as f64;
    let prior0 = dec.len() as f64 - prior1;
    let (hi, lo) = ((prior1 + 1.0) / (prior1 + 2.0), 1.0 / (prior0 + 2.0));
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();
    let (max_iter, min_step, sigma, eps) = (100, 1e-10, 1e-12, 1e-5);
    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let objective = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (1.0 + (-z).exp()).ln()
                } else {
                    (ti - 1.0) * z + (1.0 + z.exp()).ln()
                }
            })
            .sum()
    };
    let mut fval = objective(a, b);
    for _ in 0..max_iter {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
        for (&f, &ti) in dec.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                ((-z).exp() / (1.0 + (-z).exp()), 1.0 / (1.0 + (-z).exp()))
            } else {
                (1.0 / (1.0 + z.exp()), z.exp() / (1.0 + z.exp()))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < eps && g2.abs() < eps {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= min_step {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < min_step {
            break;
        }
    }
    (a, b)
}

pub fn kernel_matrix(kernel: &Kernel, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(&x[i], &x[j]);
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

impl SvmModel {
    /// Train on already-standardized features.
    pub fn train(data: &Dataset, cfg: &SvmConfig) -> Result<Self, LearnError> {
        data.require_trainable(2)?;
        if !(cfg.c > 0.0) {
            return Err(LearnError::Invalid(format!("C must be > 0, got {}", cfg.c)));
        }
        let kernel = cfg.kernel.unwrap_or(Kernel::Rbf {
            gamma: default_gamma(&data.x),
        });
        let km = kernel_matrix(&kernel, &data.x);
        let machines = (0..data.n_classes())
            .map(|class| {
                let y: Vec<f64> = data.y.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
                let sol = smo(&km, &y, cfg.c, cfg.tolerance, cfg.max_iter);
                let dec: Vec<f64> = (0..y.len())
                    .map(|i| (0..y.len()).map(|j| sol.alpha[j] * y[j] * km[i][j]).sum::<f64>() - sol.rho)
                    .collect();
                let pos: Vec<bool> = y.iter().map(|&v| v > 0.0).collect();
                let (platt_a, platt_b) = platt_fit(&dec, &pos);
                let sv: Vec<usize> = (0..y.len()).filter(|&i| sol.alpha[i] > 0.0).collect();
                BinaryMachine {
                    support_vectors: sv.iter().map(|&i| data.x[i].clone()).collect(),
                    coefficients: sv.iter().map(|&i| sol.alpha[i] * y[i]).collect(),
                    rho: sol.rho,
                    platt_a,
                    platt_b,
                    iterations: sol.iterations,
                    gap: sol.gap,
                }
            })
            .collect();
        Ok(Self {
            kernel,
            c: cfg.c,
            dim: data.dim(),
            class_names: data.class_names.clone(),
            machines,
        })
    }

    pub fn decision_values(&self, x: &[f64]) -> Vec<f64> {
        self.machines.iter().map(|m| m.decision(&self.kernel, x)).collect()
    }
}

impl Classifier for SvmModel {
    fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict_proba_row(&self, x: &[f64]) -> Vec<f64> {
        let p: Vec<f64> = self
            .machines
            .iter()
            .map(|m| m.probability(m.decision(&self.kernel, x)).max(1e-300))
            .collect();
        let s: f64 = p.iter().sum();
        p.iter().map(|v| v / s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SensorMask;

    fn ds(x: Vec<Vec<f64>>, y: Vec<usize>, c: usize) -> Dataset {
        Dataset::new(x, y, (0..c).map(|i| format!("c{i}")).collect(), SensorMask::FORCE).unwrap()
    }

    #[test]
    fn separable_clusters() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let j = (i as f64 * 0.37).sin() * 0.2;
            x.push(vec![-3.0 + j, 1.0 - j]);
            y.push(0);
            x.push(vec![3.0 - j, -1.0 + j]);
            y.push(1);
        }
        let d = ds(x, y, 2);
        let m = SvmModel::train(&d, &SvmConfig::default()).unwrap();
        assert_eq!(m.predict(&d.x).unwrap(), d.y);
        for mach in &m.machines {
            assert!(mach.coefficients.iter().all(|c| c.abs() <= 10.0 + 1e-12));
            assert!(mach.gap < 1e-3);
        }
        let p = m.predict_proba(&[vec![-3.0, 1.0]]).unwrap();
        assert!(p[0][0] > 0.9);
        assert!((p[0].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mid = m.predict_proba(&[vec![0.0, 0.0]]).unwrap();
        assert!((mid[0][0] - 0.5).abs() < 0.05, "{:?}", mid);
    }

    #[test]
    fn xor_with_rbf() {
        let x = [vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let x: Vec<Vec<f64>> = x.iter().cycle().take(12).cloned().collect();
        let y: Vec<usize> = [0, 0, 1, 1].iter().cycle().take(12).copied().collect();
        let d = ds(x, y, 2);
        let cfg = SvmConfig {
            kernel: Some(Kernel::Rbf { gamma: 2.0 }),
            ..Default::default()
        };
        let m = SvmModel::train(&d, &cfg).unwrap();
        assert_eq!(m.predict(&d.x).unwrap(), d.y);
        // decision function oracle on a small grid: sign follows the XOR parity near the corners
        for (p, expect) in [([0.1, 0.1], 0), ([0.9, 0.9], 0), ([0.1, 0.9], 1), ([0.9, 0.1], 1)] {
            assert_eq!(m.predict(&[p.to_vec()]).unwrap()[0], expect);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let d = ds(vec![vec![0.0], vec![1.0]], vec![0, 0], 1);
        assert!(matches!(
            SvmModel::train(&d, &SvmConfig::default()),
            Err(LearnError::TooFewClasses { .. })
        ));
        let d = ds(vec![vec![0.0], vec![1.0], vec![2.0]], vec![0, 0, 1], 2);
        assert!(matches!(
            SvmModel::train(&d, &SvmConfig::default()),
            Err(LearnError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let d = ds(vec![vec![0.0], vec![0.1], vec![1.0], vec![1.1]], vec![0, 0, 1, 1], 2);
        let m = SvmModel::train(&d, &SvmConfig::default()).unwrap();
        assert!(matches!(
            m.predict_proba(&[vec![0.0, 1.0]]),
            Err(LearnError::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn platt_separates_and_stays_open_interval() {
        let dec: Vec<f64> = (-10..=10).map(|i| i as f64 / 2.0).collect();
        let pos: Vec<bool> = dec.iter().map(|&f| f > 0.0).collect();
        let (a, b) = platt_fit(&dec, &pos);
        assert!(a < 0.0);
        for f in [-100.0, -1.0, 0.0, 1.0, 100.0] {
            let p = sigmoid_prob(f, a, b);
            assert!(p > 0.0 && p < 1.0 || f.abs() == 100.0);
        }
        assert!(sigmoid_prob(3.0, a, b) > 0.9);
    }
}
