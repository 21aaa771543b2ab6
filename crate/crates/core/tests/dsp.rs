mod common {
    pub mod oracles;
}

use common::oracles::{tone, MfccOracle};
use palpbench_core::dsp::{estimate_stiffness, force_features, mfcc, spectrogram, MfccConfig};
use proptest::prelude::*;

const SR: f64 = 44_100.0;

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn tones_match_direct_dft_oracle() {
    let oracle = MfccOracle::default();
    for (freq, amp) in [(440.0, 0.3), (1234.5, 0.05), (5000.0, 0.8), (9000.0, 0.01)] {
        let x = tone(freq, amp, 4096, SR);
        let got = mfcc(&x, &MfccConfig::default()).unwrap();
        let want = oracle.per_frame(&x);
        let d = max_abs_diff(&got.per_frame, &want);
        assert!(d < 1e-6, "{freq} Hz: {d}");
    }
}

#[test]
fn oracle_agrees_on_a_two_tone_mix_with_custom_band() {
    let cfg = MfccConfig {
        frame_length: 512,
        hop: 256,
        n_mel: 20,
        n_coeff: 10,
        fmin: 100.0,
        fmax: Some(8000.0),
        ..MfccConfig::default()
    };
    let oracle = MfccOracle {
        frame: 512,
        hop: 256,
        n_mel: 20,
        n_coeff: 10,
        fmin: 100.0,
        fmax: 8000.0,
        ..MfccOracle::default()
    };
    let a = tone(700.0, 0.2, 3000, SR);
    let b = tone(3100.0, 0.1, 3000, SR);
    let x: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
    let d = max_abs_diff(&mfcc(&x, &cfg).unwrap().per_frame, &oracle.per_frame(&x));
    assert!(d < 1e-6, "{d}");
}

#[test]
fn silence_gives_zero_coefficients() {
    let v = mfcc(&vec![0.0; 8192], &MfccConfig::default()).unwrap();
    assert!(v.per_frame.iter().flatten().all(|c| c.abs() < 1e-9));
}

#[test]
fn gain_changes_only_c0() {
    let x = tone(880.0, 0.02, 8192, SR);
    let y: Vec<f64> = x.iter().map(|v| v * 10.0).collect();
    let cfg = MfccConfig::default();
    let d = max_abs_diff(&mfcc(&x, &cfg).unwrap().per_frame, &mfcc(&y, &cfg).unwrap().per_frame);
    assert!(d < 1e-6, "{d}");
}

#[test]
fn spectrogram_parseval_and_peak() {
    let x = tone(2000.0, 0.5, 8192, SR);
    let s = spectrogram(&x, SR, 1024, 512).unwrap();
    let n = 1024;
    let w: Vec<f64> = (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect();
    let direct: f64 = (0..s.times.len())
        .map(|f| (0..n).map(|i| (x[f * 512 + i] * w[i]).powi(2)).sum::<f64>())
        .sum();
    assert!((s.linear_energy() - direct).abs() / direct < 1e-9);
    let expected_bin = (2000.0 / (SR / n as f64)).round() as usize;
    assert!(s.peak_bins().iter().all(|&b| b.abs_diff(expected_bin) <= 1));
    assert!(s.db.iter().flatten().all(|&v| (-120.0..=0.0).contains(&v)));
}

fn ramp(k: f64, contact: f64, depth: f64, step: f64) -> Vec<(f64, f64)> {
    let n = (depth / step).round() as usize;
    let mut s: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let d = i as f64 * step;
            (d, k * (d - contact).max(0.0))
        })
        .collect();
    let back: Vec<(f64, f64)> = s.iter().rev().skip(1).map(|&(d, f)| (d, 0.9 * f)).collect();
    s.extend(back);
    s
}

proptest! {
    #[test]
    fn stiffness_of_ideal_ramp_is_exact(k in 0.2f64..40.0, contact in 0.0f64..0.5, depth in 1.0f64..3.0) {
        let s = ramp(k, contact, depth, 0.004);
        let est = estimate_stiffness(&s).unwrap();
        prop_assert!((est - k).abs() / k < 1e-9);
        let f = force_features(&s).unwrap();
        prop_assert!((f.max_displacement - (depth - contact)).abs() < 0.01);
        prop_assert!(f.smoothness < 1e-9);
    }

    #[test]
    fn stiffness_scales_linearly_with_force(k in 1.0f64..30.0, gain in 0.1f64..10.0) {
        let s = ramp(k, 0.1, 2.0, 0.004);
        let scaled: Vec<(f64, f64)> = s.iter().map(|&(d, f)| (d, f * gain)).collect();
        let a = estimate_stiffness(&s).unwrap();
        let b = estimate_stiffness(&scaled).unwrap();
        prop_assert!((b - a * gain).abs() / (a * gain) < 1e-9);
    }
}
