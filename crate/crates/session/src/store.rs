//! Data root layout and crash-safe file writes.
//!
//! ```text
//! <root>/phantoms/<id>.phantom
//! <root>/calibrations/<id>.json
//! <root>/models/<id>.json
//! <root>/sessions/<id>/...
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use palpbench_core::calibration::{CalibrationError, ResidualStats, TransformDoc};
use palpbench_core::dsp::DspError;
use palpbench_core::learn::{LearnError, ModelDoc};
use palpbench_core::sim::{load_phantom, PhantomError};
use palpbench_core::{Intrinsics, Phantom, SimilarityTransform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::valid_id;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown {kind} '{id}'")]
    NotFound { kind: &'static str, id: String },
    #[error("{kind} '{id}' already exists")]
    Exists { kind: &'static str, id: String },
    #[error("invalid id '{0}': use 1-64 of [A-Za-z0-9_-]")]
    BadId(String),
    #[error("integrity check failed for {what}: expected sha256 {expected}, found {actual}")]
    Integrity { what: String, expected: String, actual: String },
    #[error("{what} has unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { what: String, found: u64, supported: u32 },
    #[error("{what} is corrupt: {message}")]
    Corrupt { what: String, message: String },
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Write via a temporary sibling and rename, so readers and a later crash
/// see either the old or the new contents.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".into(),
    });
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, StoreError> {
    fs::read(path).map_err(io_err(path))
}

pub const CALIBRATION_FORMAT_VERSION: u32 = 1;

/// A stored camera-to-stage calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDoc {
    pub format_version: u32,
    pub intrinsics: Intrinsics,
    pub transform: TransformDoc,
    pub residuals: ResidualStats,
    pub n_pairs: usize,
    pub z_levels: Vec<f64>,
    /// X by Y laser positions per Z level.
    #[serde(default)]
    pub grid: [usize; 2],
}

impl CalibrationDoc {
    pub fn transform(&self) -> Result<SimilarityTransform, StoreError> {
        Ok(SimilarityTransform::try_from(&self.transform)?)
    }
}

#[derive(Debug, Clone)]
pub struct DataRoot {
    root: PathBuf,
}

impl DataRoot {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["phantoms", "calibrations", "models", "sessions"] {
            let d = root.join(sub);
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    fn checked(id: &str) -> Result<&str, StoreError> {
        if valid_id(id) {
            Ok(id)
        } else {
            Err(StoreError::BadId(id.to_string()))
        }
    }

    pub fn phantom_path(&self, id: &str) -> Result<PathBuf, StoreError> {
        Ok(self.root.join("phantoms").join(format!("{}.phantom", Self::checked(id)?)))
    }

    pub fn calibration_path(&self, id: &str) -> Result<PathBuf, StoreError> {
        Ok(self.root.join("calibrations").join(format!("{}.json", Self::checked(id)?)))
    }

    pub fn model_path(&self, id: &str) -> Result<PathBuf, StoreError> {
        Ok(self.root.join("models").join(format!("{}.json", Self::checked(id)?)))
    }

    pub fn session_dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        Ok(self.root.join("sessions").join(Self::checked(id)?))
    }

    fn read_ref(path: &Path, kind: &'static str, id: &str) -> Result<Vec<u8>, StoreError> {
        match fs::read(path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::NotFound {
                kind,
                id: id.to_string(),
            }),
            Err(e) => Err(io_err(path)(e)),
        }
    }

    pub fn phantom_bytes(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        Self::read_ref(&self.phantom_path(id)?, "phantom", id)
    }

    pub fn load_phantom(&self, id: &str) -> Result<Phantom, StoreError> {
        let bytes = self.phantom_bytes(id)?;
        let text = String::from_utf8(bytes).map_err(|e| StoreError::Corrupt {
            what: format!("phantom '{id}'"),
            message: e.to_string(),
        })?;
        Ok(load_phantom(&text)?)
    }

    pub fn save_phantom(&self, id: &str, phantom: &Phantom) -> Result<(), StoreError> {
        write_atomic(&self.phantom_path(id)?, phantom.to_document().as_bytes())
    }

    pub fn calibration_bytes(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        Self::read_ref(&self.calibration_path(id)?, "calibration", id)
    }

    pub fn load_calibration(&self, id: &str) -> Result<CalibrationDoc, StoreError> {
        let bytes = self.calibration_bytes(id)?;
        let what = format!("calibration '{id}'");
        let v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
            what: what.clone(),
            message: e.to_string(),
        })?;
        let found = v.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0);
        if found != CALIBRATION_FORMAT_VERSION as u64 {
            return Err(StoreError::UnsupportedVersion {
                what,
                found,
                supported: CALIBRATION_FORMAT_VERSION,
            });
        }
        let doc: CalibrationDoc = serde_json::from_value(v).map_err(|e| StoreError::Corrupt {
            what,
            message: e.to_string(),
        })?;
        doc.transform()?;
        Ok(doc)
    }

    pub fn save_calibration(&self, id: &str, doc: &CalibrationDoc) -> Result<(), StoreError> {
        let json = serde_json::to_string_pretty(doc).expect("calibration serializes");
        write_atomic(&self.calibration_path(id)?, json.as_bytes())
    }

    pub fn model_bytes(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        Self::read_ref(&self.model_path(id)?, "model", id)
    }

    pub fn load_model(&self, id: &str) -> Result<ModelDoc, StoreError> {
        let bytes = self.model_bytes(id)?;
        let text = String::from_utf8(bytes).map_err(|e| StoreError::Corrupt {
            what: format!("model '{id}'"),
            message: e.to_string(),
        })?;
        Ok(ModelDoc::from_json(&text)?)
    }

    pub fn save_model(&self, id: &str, model: &ModelDoc) -> Result<(), StoreError> {
        write_atomic(&self.model_path(id)?, model.to_json().as_bytes())
    }

    /// Ids present in one of `phantoms`, `calibrations`, `models`, `sessions`.
    pub fn list(&self, kind: &str) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join(kind);
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let p = e.path();
                let name = if kind == "sessions" {
                    p.is_dir().then(|| p.file_name()?.to_str().map(str::to_string)).flatten()
                } else {
                    let ext = p.extension()?.to_str()?;
                    (ext == "json" || ext == "phantom").then(|| p.file_stem()?.to_str().map(str::to_string)).flatten()
                }?;
                valid_id(&name).then_some(name)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }
}
