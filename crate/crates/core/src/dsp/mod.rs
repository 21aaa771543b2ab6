//! Per-palpation features: force-curve fit, MFCCs per microphone,
//! spectrograms for display and fixed-order fusion.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::PalpationRecord;

pub mod force;
pub mod fuse;
pub mod mfcc;
pub mod spectrogram;

pub use force::{estimate_stiffness, fit_loading, force_features, ForceFeatures, LoadingFit};
pub use fuse::{all_columns, fuse, FeatureVector, SensorMask, FORCE_DIM, FULL_DIM};
pub use mfcc::{mfcc, pcm_to_f64, Mfcc, MfccConfig, MfccVector, N_COEFF};
pub use spectrogram::{spectrogram, Spectrogram};

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("loading segment has {found} usable points, need {needed}")]
    TooFewPoints { found: usize, needed: usize },
    #[error("displacement not increasing at sample {index}")]
    NonMonotonic { index: usize },
    #[error("audio has {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sensor mask selects nothing")]
    EmptyMask,
    #[error("{0} sensor data missing")]
    MissingSensor(&'static str),
    #[error("feature table line {line}: {message}")]
    Table { line: usize, message: String },
}

/// All three sensors' features for one palpation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFeatures {
    pub force: ForceFeatures,
    pub left: MfccVector,
    pub right: MfccVector,
}

impl RecordFeatures {
    pub fn full_vector(&self) -> Vec<f64> {
        fuse(Some(&self.force), Some(&self.left), Some(&self.right), SensorMask::ALL)
            .expect("all sensors present")
            .values
    }
}

pub fn extract_features(record: &PalpationRecord, mfcc: &Mfcc) -> Result<RecordFeatures, DspError> {
    Ok(RecordFeatures {
        force: force_features(&record.force_series)?,
        left: mfcc.compute(&pcm_to_f64(&record.audio_left))?,
        right: mfcc.compute(&pcm_to_f64(&record.audio_right))?,
    })
}

/// One row of the exported feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    /// Ground-truth or operator label; empty when unknown.
    pub material: String,
    pub mask: SensorMask,
    /// Full-width vector; columns outside `mask` are NaN.
    pub features: Vec<f64>,
}

const META_COLUMNS: [&str; 5] = ["index", "x", "y", "material", "mask"];

pub fn write_feature_table(rows: &[FeatureRow], w: impl Write) -> Result<(), std::io::Error> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = META_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(all_columns());
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.index.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.material.clone(),
            r.mask.to_string(),
        ];
        rec.extend(r.features.iter().enumerate().map(|(i, v)| {
            if r.mask.keeps(i) {
                v.to_string()
            } else {
                String::new()
            }
        }));
        out.write_record(&rec)?;
    }
    out.flush()
}

pub fn read_feature_table(r: impl Read) -> Result<Vec<FeatureRow>, DspError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let mut expect: Vec<String> = META_COLUMNS.iter().map(|s| s.to_string()).collect();
    expect.extend(all_columns());
    let header = rdr.headers().map_err(|e| DspError::Table {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != expect.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(DspError::Table {
            line: 1,
            message: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let err = |message: String| DspError::Table { line, message };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let num = |j: usize| -> Result<f64, DspError> {
            rec[j]
                .parse::<f64>()
                .map_err(|_| err(format!("column '{}' is not a number: '{}'", expect[j], &rec[j])))
        };
        let mask: SensorMask = rec[4].parse().map_err(|e: DspError| err(e.to_string()))?;
        let mut features = Vec::with_capacity(FULL_DIM);
        for j in 0..FULL_DIM {
            features.push(if mask.keeps(j) { num(5 + j)? } else { f64::NAN });
        }
        rows.push(FeatureRow {
            index: rec[0].parse().map_err(|_| err(format!("bad index '{}'", &rec[0])))?,
            x: num(1)?,
            y: num(2)?,
            material: rec[3].to_string(),
            mask,
            features,
        });
    }
    Ok(rows)
}
