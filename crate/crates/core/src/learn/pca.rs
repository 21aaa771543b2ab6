use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::LearnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// k rows of length D, orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Fraction of total variance per component, descending.
    pub explained_variance_ratio: Vec<f64>,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaFit {
    pub model: PcaModel,
    /// Numerical rank of the centered data.
    pub rank: usize,
    pub warnings: Vec<String>,
}

pub fn pca_fit(x: &[Vec<f64>], k: usize) -> Result<PcaFit, LearnError> {
    let n = x.len();
    if n < 2 {
        return Err(LearnError::Empty);
    }
    let d = x[0].len();
    if k == 0 || k > d {
        return Err(LearnError::BadK { k, dim: d });
    }
    let mut mean = vec![0.0; d];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| x[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = vals.iter().sum();
    let rank = vals.iter().filter(|&&v| v > vals[0] * 1e-12).count();
    let mut warnings = Vec::new();
    if k > rank {
        warnings.push(format!("k = {k} exceeds the data rank {rank}; trailing components are arbitrary"));
    }
    let components = order[..k]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    let explained_variance_ratio = vals[..k]
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(PcaFit {
        model: PcaModel {
            components,
            explained_variance_ratio,
            mean,
        },
        rank,
        warnings,
    })
}

impl PcaModel {
    pub fn project_row(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((w, v), m)| w * (v - m)).sum())
            .collect()
    }

    pub fn project(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter().map(|r| self.project_row(r)).collect()
    }

    pub fn reconstruct_row(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, s) in self.components.iter().zip(scores) {
            for (o, w) in out.iter_mut().zip(c) {
                *o += s * w;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_has_single_component() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| i as f64).map(|t| vec![1.0 + t, 2.0 - 2.0 * t, 0.5 * t]).collect();
        let fit = pca_fit(&x, 2).unwrap();
        assert!((fit.model.explained_variance_ratio[0] - 1.0).abs() < 1e-9);
        assert_eq!(fit.rank, 1);
        assert_eq!(fit.warnings.len(), 1);
    }

    #[test]
    fn errors() {
        assert_eq!(pca_fit(&[vec![1.0]], 1), Err(LearnError::Empty));
        assert!(matches!(pca_fit(&[vec![1.0], vec![2.0]], 2), Err(LearnError::BadK { .. })));
    }
}
