//! Recompute a session's tables from its stored raw records.

use palpbench_core::dsp::Mfcc;

use crate::persist::{encode_features, encode_predictions, SessionDir};
use crate::pipeline::{feature_row, prediction};
use crate::session::SessionError;
use crate::store::{read_file, sha256_hex, DataRoot, StoreError};

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub records: usize,
    pub features: Vec<u8>,
    pub predictions: Option<Vec<u8>>,
    pub features_match: bool,
    pub predictions_match: Option<bool>,
}

impl ReplayOutcome {
    pub fn identical(&self) -> bool {
        self.features_match && self.predictions_match.unwrap_or(true)
    }
}

pub fn replay_session(root: &DataRoot, id: &str) -> Result<ReplayOutcome, SessionError> {
    let dir = SessionDir::new(root.session_dir(id)?);
    if !dir.manifest_path().exists() {
        return Err(StoreError::NotFound {
            kind: "session",
            id: id.to_string(),
        }
        .into());
    }
    let m = dir.load_manifest()?;
    dir.verify(&m)?;
    let mfcc = Mfcc::new(m.config.mfcc.clone())?;
    let model = match (&m.config.model, &m.model_sha256) {
        (Some(mid), Some(expected)) => {
            let actual = sha256_hex(&root.model_bytes(mid)?);
            if &actual != expected {
                return Err(StoreError::Integrity {
                    what: format!("model '{mid}'"),
                    expected: expected.clone(),
                    actual,
                }
                .into());
            }
            Some(root.load_model(mid)?)
        }
        _ => None,
    };
    let mut rows = Vec::with_capacity(m.records.len());
    for e in &m.records {
        let rec = dir.read_record(e)?;
        rows.push(feature_row(e.index, &e.material, &rec, &mfcc));
    }
    let features = encode_features(&rows);
    let predictions = model.map(|md| {
        let preds: Vec<_> = rows.iter().map(|r| prediction(r, &md)).collect();
        encode_predictions(&preds, &m.class_names)
    });
    let features_match = features == read_file(&dir.features_path())?;
    let predictions_match = match &predictions {
        Some(p) => Some(*p == read_file(&dir.predictions_path())?),
        None => None,
    };
    Ok(ReplayOutcome {
        records: rows.len(),
        features,
        predictions,
        features_match,
        predictions_match,
    })
}
