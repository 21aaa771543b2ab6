use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::mfcc::hamming;
use super::DspError;

pub const DB_FLOOR: f64 = -120.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub sample_rate: f64,
    pub frame: usize,
    pub hop: usize,
    /// Frame start times, s.
    pub times: Vec<f64>,
    /// Bin centre frequencies `0..=Nyquist`, Hz.
    pub freqs: Vec<f64>,
    /// `|X|²` per frame and one-sided bin.
    pub power: Vec<Vec<f64>>,
    /// Power in dB relative to the loudest cell, floored.
    pub db: Vec<Vec<f64>>,
}

impl Spectrogram {
    /// Total energy of the windowed frames recovered from the one-sided
    /// spectrum (Parseval).
    pub fn linear_energy(&self) -> f64 {
        let n = self.frame;
        let last = n / 2;
        self.power
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(k, p)| if k == 0 || (n.is_multiple_of(2) && k == last) { *p } else { 2.0 * p })
                    .sum::<f64>()
                    / n as f64
            })
            .sum()
    }

    /// Index of the strongest bin in each frame.
    pub fn peak_bins(&self) -> Vec<usize> {
        self.power
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc })
                    .0
            })
            .collect()
    }
}

pub fn spectrogram(audio: &[f64], sample_rate: f64, frame: usize, hop: usize) -> Result<Spectrogram, DspError> {
    if frame == 0 || hop == 0 {
        return Err(DspError::Config("frame and hop must be > 0".into()));
    }
    if audio.len() < frame {
        return Err(DspError::TooShort {
            len: audio.len(),
            needed: frame,
        });
    }
    let window = hamming(frame);
    let fft = FftPlanner::new().plan_fft_forward(frame);
    let n_frames = 1 + (audio.len() - frame) / hop;
    let n_bins = frame / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); frame];
    let mut power = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let s = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(audio[s + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        power.push(buf[..n_bins].iter().map(|c| c.norm_sqr()).collect::<Vec<f64>>());
    }
    let max = power.iter().flatten().copied().fold(0.0, f64::max);
    let db = power
        .iter()
        .map(|row| {
            row.iter()
                .map(|&p| {
                    if max > 0.0 && p > 0.0 {
                        (10.0 * (p / max).log10()).max(DB_FLOOR)
                    } else {
                        DB_FLOOR
                    }
                })
                .collect()
        })
        .collect();
    Ok(Spectrogram {
        sample_rate,
        frame,
        hop,
        times: (0..n_frames).map(|f| (f * hop) as f64 / sample_rate).collect(),
        freqs: (0..n_bins).map(|k| k as f64 * sample_rate / frame as f64).collect(),
        power,
        db,
    })
}
