use serde::{Deserialize, Serialize};

use super::DspError;

/// Readings at or below this are treated as free travel before contact.
pub const CONTACT_THRESHOLD: f64 = 0.05;
/// The loading fit uses readings between these fractions of the peak force.
pub const FIT_LOW: f64 = 0.1;
pub const FIT_HIGH: f64 = 0.9;
const MIN_FIT_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceFeatures {
    /// N/mm
    pub stiffness: f64,
    /// Indentation past the fitted contact point at peak force, mm.
    pub max_displacement: f64,
    /// RMS residual of the loading fit divided by the peak force.
    pub smoothness: f64,
}

impl ForceFeatures {
    pub fn to_array(&self) -> [f64; 3] {
        [self.stiffness, self.max_displacement, self.smoothness]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadingFit {
    pub slope: f64,
    pub intercept: f64,
    pub peak_force: f64,
    pub peak_displacement: f64,
    pub residual_rms: f64,
    pub n_points: usize,
}

impl LoadingFit {
    /// Displacement where the fitted line crosses zero force.
    pub fn contact_displacement(&self) -> f64 {
        -self.intercept / self.slope
    }
}

/// Least-squares line through the trimmed loading segment of a
/// `(displacement, force)` series.
pub fn fit_loading(series: &[(f64, f64)]) -> Result<LoadingFit, DspError> {
    let (peak_idx, peak_force) = series
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p.1 > acc.1 { (i, p.1) } else { acc });
    if series.is_empty() || !(peak_force > CONTACT_THRESHOLD) {
        return Err(DspError::TooFewPoints { found: 0, needed: MIN_FIT_POINTS });
    }
    let loading = &series[..=peak_idx];
    if let Some(i) = loading.windows(2).position(|w| !(w[1].0 > w[0].0)) {
        return Err(DspError::NonMonotonic { index: i + 1 });
    }
    let (lo, hi) = (FIT_LOW * peak_force, FIT_HIGH * peak_force);
    let pts: Vec<(f64, f64)> = loading
        .iter()
        .copied()
        .filter(|&(_, f)| f > CONTACT_THRESHOLD && f >= lo && f <= hi)
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(DspError::TooFewPoints {
            found: pts.len(),
            needed: MIN_FIT_POINTS,
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(DspError::TooFewPoints {
            found: 1,
            needed: MIN_FIT_POINTS,
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = pts.iter().map(|p| (p.1 - (slope * p.0 + intercept)).powi(2)).sum();
    Ok(LoadingFit {
        slope,
        intercept,
        peak_force,
        peak_displacement: series[peak_idx].0,
        residual_rms: (ss / n).sqrt(),
        n_points: pts.len(),
    })
}

pub fn estimate_stiffness(series: &[(f64, f64)]) -> Result<f64, DspError> {
    fit_loading(series).map(|f| f.slope)
}

pub fn force_features(series: &[(f64, f64)]) -> Result<ForceFeatures, DspError> {
    let fit = fit_loading(series)?;
    Ok(ForceFeatures {
        stiffness: fit.slope,
        max_displacement: (fit.peak_displacement - fit.contact_displacement()).max(0.0),
        smoothness: fit.residual_rms / fit.peak_force,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(k: f64, offset: f64, depth: f64, step: f64) -> Vec<(f64, f64)> {
        let n = (depth / step).round() as usize;
        let mut s: Vec<(f64, f64)> = (1..=n).map(|i| i as f64 * step).map(|d| (d, k * (d - offset).max(0.0))).collect();
        s.extend((0..n).rev().map(|i| i as f64 * step).map(|d| (d, 0.9 * k * (d - offset).max(0.0))));
        s
    }

    #[test]
    fn noiseless_ramp_slope() {
        let k = estimate_stiffness(&ramp(23.7667, 0.0, 2.0, 0.004)).unwrap();
        assert!((k - 23.7667).abs() < 1e-9);
    }

    #[test]
    fn contact_offset_does_not_change_slope() {
        let a = estimate_stiffness(&ramp(7.8982, 0.0, 3.0, 0.004)).unwrap();
        let b = estimate_stiffness(&ramp(7.8982, 0.3, 3.0, 0.004)).unwrap();
        assert!((a - b).abs() < 1e-9);
        let f = force_features(&ramp(7.8982, 0.3, 3.0, 0.004)).unwrap();
        assert!((f.max_displacement - 2.7).abs() < 1e-9);
        assert!(f.smoothness < 1e-12);
    }

    #[test]
    fn ripple_smoothness_matches_rms() {
        let (k, a) = (10.0, 0.2);
        let series: Vec<(f64, f64)> = (1..=1000)
            .map(|i| i as f64 * 0.004)
            .map(|d| (d, k * d + a * (2.0 * std::f64::consts::PI * d / 0.1).sin()))
            .collect();
        let f = force_features(&series).unwrap();
        let peak = series.iter().map(|p| p.1).fold(0.0, f64::max);
        let expect = (a / 2f64.sqrt()) / peak;
        assert!((f.smoothness - expect).abs() / expect < 0.02, "{} vs {}", f.smoothness, expect);
    }

    #[test]
    fn errors() {
        assert!(matches!(estimate_stiffness(&[]), Err(DspError::TooFewPoints { .. })));
        let short = ramp(10.0, 0.0, 0.012, 0.004);
        assert!(matches!(estimate_stiffness(&short), Err(DspError::TooFewPoints { .. })));
        let mut bad = ramp(10.0, 0.0, 1.0, 0.004);
        bad[10].0 = 0.0;
        assert!(matches!(estimate_stiffness(&bad), Err(DspError::NonMonotonic { index: 10 })));
    }

    #[test]
    fn shift_invariance_and_gain_equivariance() {
        let base = ramp(5.0, 0.1, 2.0, 0.004);
        let k = estimate_stiffness(&base).unwrap();
        let shifted: Vec<_> = base.iter().map(|&(d, f)| (d + 3.25, f)).collect();
        assert!((estimate_stiffness(&shifted).unwrap() - k).abs() < 1e-9);
        let scaled: Vec<_> = base.iter().map(|&(d, f)| (d, 2.5 * f)).collect();
        assert!((estimate_stiffness(&scaled).unwrap() - 2.5 * k).abs() < 1e-9);
    }
}
