use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::DspError;

pub const N_COEFF: usize = 12;
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub sample_rate: f64,
    pub frame_length: usize,
    pub hop: usize,
    pub n_mel: usize,
    pub n_coeff: usize,
    pub pre_emphasis: f64,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44_100.0,
            frame_length: 1024,
            hop: 512,
            n_mel: 26,
            n_coeff: N_COEFF,
            pre_emphasis: 0.97,
            fmin: 20.0,
            fmax: None,
        }
    }
}

impl MfccConfig {
    pub fn fmax(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate / 2.0)
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let bad = |m: &str| Err(DspError::Config(m.to_string()));
        if !(self.sample_rate > 0.0) {
            return bad("sample_rate must be > 0");
        }
        if !(self.n_coeff > 0 && self.n_coeff < self.n_mel && self.n_mel <= self.frame_length / 2) {
            return bad("need 0 < n_coeff < n_mel <= frame_length/2");
        }
        if !(self.hop > 0 && self.hop <= self.frame_length) {
            return bad("need 0 < hop <= frame_length");
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax() && self.fmax() <= self.sample_rate / 2.0) {
            return bad("need 0 <= fmin < fmax <= Nyquist");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccVector {
    /// Per-frame mean of `per_frame`.
    pub coeffs: Vec<f64>,
    pub per_frame: Vec<Vec<f64>>,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Triangular filters, one row per mel band, over bins `0..=frame_length/2`.
pub fn mel_filterbank(cfg: &MfccConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.frame_length / 2 + 1;
    let (m_lo, m_hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax()));
    let edges: Vec<f64> = (0..cfg.n_mel + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (cfg.n_mel + 1) as f64))
        .collect();
    (0..cfg.n_mel)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * cfg.sample_rate / cfg.frame_length as f64;
                    if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II.
pub fn dct2_ortho(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            s * scale
        })
        .collect()
}

pub fn pre_emphasize(x: &[f64], coeff: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    for (i, &v) in x.iter().enumerate() {
        y.push(if i == 0 { v } else { v - coeff * x[i - 1] });
    }
    y
}

pub fn pcm_to_f64(x: &[i16]) -> Vec<f64> {
    x.iter().map(|&s| s as f64 / 32768.0).collect()
}

/// Reusable MFCC extractor with a planned FFT and a cached filterbank.
pub struct Mfcc {
    cfg: MfccConfig,
    window: Vec<f64>,
    /// Non-zero span of each filter: first bin and weights.
    bank: Vec<(usize, Vec<f64>)>,
    /// DCT-II cosine rows for the kept coefficients.
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl Mfcc {
    pub fn new(cfg: MfccConfig) -> Result<Self, DspError> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.frame_length);
        Ok(Self {
            window: hamming(cfg.frame_length),
            bank: mel_filterbank(&cfg)
                .into_iter()
                .map(|f| {
                    let lo = f.iter().position(|&w| w != 0.0).unwrap_or(0);
                    let hi = f.iter().rposition(|&w| w != 0.0).map_or(lo, |i| i + 1);
                    (lo, f[lo..hi].to_vec())
                })
                .collect(),
            dct: (1..=cfg.n_coeff)
                .map(|k| {
                    let n = cfg.n_mel as f64;
                    (0..cfg.n_mel).map(|i| (PI * k as f64 * (i as f64 + 0.5) / n).cos()).collect()
                })
                .collect(),
            fft,
            cfg,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn compute(&self, audio: &[f64]) -> Result<MfccVector, DspError> {
        let n = self.cfg.frame_length;
        if audio.len() < n {
            return Err(DspError::TooShort { len: audio.len(), needed: n });
        }
        let x = pre_emphasize(audio, self.cfg.pre_emphasis);
        let n_frames = 1 + (x.len() - n) / self.cfg.hop;
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut mag = vec![0.0; n / 2 + 1];
        let mut per_frame = Vec::with_capacity(n_frames);
        for f in 0..n_frames {
            let start = f * self.cfg.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(x[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (m, c) in mag.iter_mut().zip(&buf) {
                *m = (c.re * c.re + c.im * c.im).sqrt();
            }
            let logmel: Vec<f64> = self
                .bank
                .iter()
                .map(|(lo, w)| {
                    let e: f64 = w.iter().zip(&mag[*lo..]).map(|(w, m)| w * m).sum();
                    e.max(LOG_FLOOR).ln()
                })
                .collect();
            let scale = (2.0 / self.cfg.n_mel as f64).sqrt();
            per_frame.push(
                self.dct
                    .iter()
                    .map(|row| row.iter().zip(&logmel).map(|(c, v)| v * c).sum::<f64>() * scale)
                    .collect(),
            );
        }
        let mut coeffs = vec![0.0; self.cfg.n_coeff];
        for row in &per_frame {
            for (a, v) in coeffs.iter_mut().zip(row) {
                *a += v;
            }
        }
        for a in &mut coeffs {
            *a /= n_frames as f64;
        }
        Ok(MfccVector { coeffs, per_frame })
    }
}

pub fn mfcc(audio: &[f64], cfg: &MfccConfig) -> Result<MfccVector, DspError> {
    Mfcc::new(cfg.clone())?.compute(audio)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trip() {
        for f in [0.0, 20.0, 700.0, 1000.0, 22050.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn dct_is_orthonormal() {
        let n = 8;
        for a in 0..n {
            let mut e = vec![0.0; n];
            e[a] = 1.0;
            let ca = dct2_ortho(&e);
            assert!((ca.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn silence_gives_zero_coefficients() {
        let v = mfcc(&vec![0.0; 44100 / 4], &MfccConfig::default()).unwrap();
        assert!(v.coeffs.iter().all(|c| c.abs() < 1e-9));
        assert_eq!(v.coeffs.len(), 12);
    }

    #[test]
    fn gain_only_moves_c0() {
        let cfg = MfccConfig::default();
        let tone: Vec<f64> = (0..8192)
            .map(|i| 0.01 * (2.0 * PI * 1000.0 * i as f64 / 44100.0).sin() + 0.003 * (2.0 * PI * 5300.0 * i as f64 / 44100.0).sin())
            .collect();
        let loud: Vec<f64> = tone.iter().map(|v| v * 10.0).collect();
        let (a, b) = (mfcc(&tone, &cfg).unwrap(), mfcc(&loud, &cfg).unwrap());
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn aggregate_is_frame_mean_and_frame_count() {
        let cfg = MfccConfig::default();
        let x: Vec<f64> = (0..5000).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        let v = mfcc(&x, &cfg).unwrap();
        assert_eq!(v.per_frame.len(), 1 + (5000 - 1024) / 512);
        for k in 0..12 {
            let m = v.per_frame.iter().map(|r| r[k]).sum::<f64>() / v.per_frame.len() as f64;
            assert_eq!(m, v.coeffs[k]);
        }
    }

    #[test]
    fn rejects_short_audio_and_bad_config() {
        assert!(matches!(mfcc(&[0.0; 100], &MfccConfig::default()), Err(DspError::TooShort { .. })));
        let cfg = MfccConfig {
            n_mel: 10,
            ..Default::default()
        };
        assert!(matches!(mfcc(&[0.0; 2048], &cfg), Err(DspError::Config(_))));
    }
}
