//! Session configuration documents and the rig parameter file.

use std::path::PathBuf;

use palpbench_core::dsp::MfccConfig;
use palpbench_core::scan::SpokeParams;
use palpbench_core::SimConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::store::hex;

/// Environment variable naming the data root.
pub const DATA_ENV: &str = "PALPBENCH_DATA";
pub const DEFAULT_DATA_DIR: &str = "palpbench-data";

pub fn data_root_from_env() -> PathBuf {
    std::env::var_os(DATA_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

/// Ids name files on disk, so they are kept to a safe alphabet.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PalpationSettings {
    /// Indentation past the nominal surface, mm.
    pub depth: f64,
    /// Abort the press once the reading reaches this, N.
    pub force_limit: f64,
}

impl Default for PalpationSettings {
    fn default() -> Self {
        Self {
            depth: 2.0,
            force_limit: 45.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "lowercase")]
pub enum PlanSpec {
    Raster {
        origin: [f64; 2],
        nx: usize,
        ny: usize,
        step: f64,
    },
    /// ROI outline in camera pixels; needs a calibration.
    Spokes {
        roi_px: Vec<[f64; 2]>,
        #[serde(default)]
        params: SpokeParams,
    },
    /// Open polyline in camera pixels; needs a calibration.
    Polyline { vertices_px: Vec<[f64; 2]>, spacing: f64 },
}

fn default_resolution() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub id: String,
    /// Phantom id in the data root.
    pub phantom: String,
    #[serde(default)]
    pub calibration: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    pub plan: PlanSpec,
    #[serde(default)]
    pub palpation: PalpationSettings,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub mfcc: MfccConfig,
    /// Probability map cell size, mm.
    #[serde(default = "default_resolution")]
    pub map_resolution: f64,
    /// Real-time delay after each plan point, ms.
    #[serde(default)]
    pub pace_ms: u64,
}

impl SessionConfig {
    pub fn new(id: impl Into<String>, phantom: impl Into<String>, plan: PlanSpec) -> Self {
        Self {
            id: id.into(),
            phantom: phantom.into(),
            calibration: None,
            model: None,
            plan,
            palpation: PalpationSettings::default(),
            sim: SimConfig::default(),
            mfcc: MfccConfig::default(),
            map_resolution: default_resolution(),
            pace_ms: 0,
        }
    }

    /// SHA-256 of the canonical JSON encoding, ignoring pacing.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.pace_ms = 0;
        hex(&Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }
}

/// Rig and simulator parameters loaded from a TOML file; every field is
/// optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigFile {
    pub sim: SimConfig,
    pub palpation: PalpationSettings,
    pub mfcc: MfccConfig,
}

impl RigFile {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("rig file serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids() {
        assert!(valid_id("raster-01_b"));
        for bad in ["", "../x", "a b", "é", &"x".repeat(65)] {
            assert!(!valid_id(bad), "{bad}");
        }
    }

    #[test]
    fn rig_file_accepts_partial_documents() {
        let f = RigFile::parse("[sim]\nseed = 9\n[sim.force]\nnoise_sd = 0.0\n[palpation]\ndepth = 5.0\n").unwrap();
        assert_eq!(f.sim.seed, 9);
        assert_eq!(f.sim.force.noise_sd, 0.0);
        assert_eq!(f.sim.force.sample_rate, 500.0);
        assert_eq!(f.palpation.depth, 5.0);
        assert_eq!(f.palpation.force_limit, 45.0);
        assert_eq!(RigFile::parse(&f.to_toml()).unwrap(), f);
    }

    #[test]
    fn hash_ignores_pacing_only() {
        let plan = PlanSpec::Raster {
            origin: [0.0, 0.0],
            nx: 2,
            ny: 2,
            step: 1.0,
        };
        let a = SessionConfig::new("s", "p", plan);
        let mut b = a.clone();
        b.pace_ms = 50;
        assert_eq!(a.hash(), b.hash());
        b.sim.seed = 1;
        assert_ne!(a.hash(), b.hash());
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.contains("\"pattern\":\"raster\""));
        let back: SessionConfig = serde_json::from_str(r#"{"id":"s","phantom":"p","plan":{"pattern":"raster","origin":[0,0],"nx":2,"ny":2,"step":1}}"#).unwrap();
        assert_eq!(back, a);
    }
}
