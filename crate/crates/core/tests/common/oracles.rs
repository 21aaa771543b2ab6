//! Independent reference computations used by tests. Nothing here calls
//! into the library's numeric code.
#![allow(dead_code)]

use std::f64::consts::PI;

/// MFCCs computed the slow way: direct DFT per frame, triangular filters
/// built from the mel formula, DCT-II by its definition.
pub struct MfccOracle {
    pub sample_rate: f64,
    pub frame: usize,
    pub hop: usize,
    pub n_mel: usize,
    pub n_coeff: usize,
    pub pre_emphasis: f64,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MfccOracle {
    fn default() -> Self {
        Self {
            sample_rate: 44100.0,
            frame: 1024,
            hop: 512,
            n_mel: 26,
            n_coeff: 12,
            pre_emphasis: 0.97,
            fmin: 20.0,
            fmax: 22050.0,
        }
    }
}

fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn inv_mel(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl MfccOracle {
    fn filter_weight(&self, band: usize, f: f64) -> f64 {
        let step = (mel(self.fmax) - mel(self.fmin)) / (self.n_mel + 1) as f64;
        let lo = inv_mel(mel(self.fmin) + step * band as f64);
        let mid = inv_mel(mel(self.fmin) + step * (band + 1) as f64);
        let hi = inv_mel(mel(self.fmin) + step * (band + 2) as f64);
        if f > lo && f <= mid {
            (f - lo) / (mid - lo)
        } else if f > mid && f < hi {
            (hi - f) / (hi - mid)
        } else {
            0.0
        }
    }

    pub fn per_frame(&self, audio: &[f64]) -> Vec<Vec<f64>> {
        let n = self.frame;
        let emph: Vec<f64> = (0..audio.len())
            .map(|i| if i == 0 { audio[0] } else { audio[i] - self.pre_emphasis * audio[i - 1] })
            .collect();
        let frames = 1 + (audio.len() - n) / self.hop;
        let mut out = Vec::new();
        for fr in 0..frames {
            let x: Vec<f64> = (0..n)
                .map(|i| {
                    let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
                    emph[fr * self.hop + i] * w
                })
                .collect();
            let mag: Vec<f64> = (0..=n / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (i, v) in x.iter().enumerate() {
                        let a = -2.0 * PI * ((k * i) % n) as f64 / n as f64;
                        re += v * a.cos();
                        im += v * a.sin();
                    }
                    re.hypot(im)
                })
                .collect();
            let logmel: Vec<f64> = (0..self.n_mel)
                .map(|b| {
                    let e: f64 = mag
                        .iter()
                        .enumerate()
                        .map(|(k, m)| m * self.filter_weight(b, k as f64 * self.sample_rate / n as f64))
                        .sum();
                    e.max(1e-10).ln()
                })
                .collect();
            let m = self.n_mel as f64;
            let coeffs: Vec<f64> = (1..=self.n_coeff)
                .map(|q| {
                    (2.0 / m).sqrt()
                        * logmel
                            .iter()
                            .enumerate()
                            .map(|(i, v)| v * (PI * q as f64 * (i as f64 + 0.5) / m).cos())
                            .sum::<f64>()
                })
                .collect();
            out.push(coeffs);
        }
        out
    }
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn tone(freq: f64, amp: f64, n: usize, sr: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / sr).sin()).collect()
}
