//! Record → feature row → class probabilities. Shared by live runs and
//! replay so both produce identical tables.

use palpbench_core::dsp::{force_features, fuse, pcm_to_f64, FeatureRow, Mfcc, SensorMask, FULL_DIM};
use palpbench_core::learn::ModelDoc;
use palpbench_core::PalpationRecord;

use crate::persist::Prediction;

pub fn feature_row(index: usize, material: &str, rec: &PalpationRecord, mfcc: &Mfcc) -> FeatureRow {
    let force = force_features(&rec.force_series).ok();
    let left = mfcc.compute(&pcm_to_f64(&rec.audio_left)).ok();
    let right = mfcc.compute(&pcm_to_f64(&rec.audio_right)).ok();
    let mask = SensorMask {
        force: force.is_some(),
        left: left.is_some(),
        right: right.is_some(),
    };
    let features = if mask.is_empty() {
        vec![f64::NAN; FULL_DIM]
    } else {
        let v = fuse(force.as_ref(), left.as_ref(), right.as_ref(), mask).expect("mask matches available sensors");
        let mut full = vec![f64::NAN; FULL_DIM];
        let mut it = v.values.into_iter();
        for (i, slot) in full.iter_mut().enumerate() {
            if mask.keeps(i) {
                *slot = it.next().expect("fused length matches mask");
            }
        }
        full
    };
    FeatureRow {
        index,
        x: rec.pose.x,
        y: rec.pose.y,
        material: material.to_string(),
        mask,
        features,
    }
}

fn covers(have: SensorMask, need: SensorMask) -> bool {
    (have.force || !need.force) && (have.left || !need.left) && (have.right || !need.right)
}

/// `None` when the row lacks a sensor the model needs.
pub fn classify(row: &FeatureRow, model: &ModelDoc) -> Option<Vec<f64>> {
    if row.mask.is_empty() || !covers(row.mask, model.mask) {
        return None;
    }
    model.predict_proba_full(std::slice::from_ref(&row.features)).ok()?.pop()
}

pub fn prediction(row: &FeatureRow, model: &ModelDoc) -> Prediction {
    Prediction {
        index: row.index,
        x: row.x,
        y: row.y,
        probs: classify(row, model),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use palpbench_core::dsp::MfccConfig;
    use palpbench_core::sim::presets;
    use palpbench_core::{Phantom, RigSim, SimConfig};

    #[test]
    fn row_matches_direct_extraction() {
        let ph = Phantom::uniform(presets::pla5(), 4, 4, 1.0, [98.0, 98.0]).unwrap();
        let mut sim = RigSim::new(ph, SimConfig::default()).unwrap();
        sim.move_to(100.0, 100.0).unwrap();
        let rec = sim.palpate(2.0, 45.0).unwrap();
        let mfcc = Mfcc::new(MfccConfig::default()).unwrap();
        let row = feature_row(7, "PLA5", &rec, &mfcc);
        let direct = palpbench_core::dsp::extract_features(&rec, &mfcc).unwrap().full_vector();
        assert_eq!(row.features, direct);
        assert_eq!(row.mask, SensorMask::ALL);
        assert_eq!((row.index, row.x, row.y), (7, 100.0, 100.0));
    }

    #[test]
    fn missing_force_masks_force_columns() {
        let mfcc = Mfcc::new(MfccConfig::default()).unwrap();
        let rec = PalpationRecord {
            pose: palpbench_core::StagePose { x: 0.0, y: 0.0, z: 0.0 },
            force_series: vec![(0.004, 0.0), (0.008, 0.0)],
            audio_left: vec![0; 4096],
            audio_right: vec![0; 4096],
            sample_rate: 44100.0,
            t_start_ns: 0,
            t_end_ns: 1,
            saturated: false,
        };
        let row = feature_row(0, "", &rec, &mfcc);
        assert_eq!(row.mask, SensorMask::MICS);
        assert!(row.features[..3].iter().all(|v| v.is_nan()));
        assert!(row.features[3..].iter().all(|v| v.is_finite()));
    }
}
