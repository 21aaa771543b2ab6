//! Session directory: manifest, per-point records, feature and prediction
//! tables, map exports.
//!
//! ```text
//! manifest.json        versioned, self-checksummed, hashes of every file below
//! records/NNN.csv      displacement_mm,force_n
//! records/NNN_L.wav    16-bit mono PCM
//! records/NNN_R.wav
//! features.csv
//! predictions.csv      only when a model is attached
//! events.jsonl         STATE and POINT_RESULT log
//! map.png, map.json    on completion
//! ```
//!
//! The manifest is the commit point: a point counts as recorded once the
//! manifest listing it has been renamed into place.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use palpbench_core::dsp::{read_feature_table, write_feature_table, FeatureRow};
use palpbench_core::learn::argmax;
use palpbench_core::scan::ScanPlan;
use palpbench_core::sim::{SimState, StagePose};
use palpbench_core::PalpationRecord;
use serde::{Deserialize, Serialize};

use crate::config::SessionConfig;
use crate::store::{io_err, read_file, sha256_hex, write_atomic, StoreError};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SessionState {
    Idle,
    Running,
    Paused,
    Done,
    Fault,
}

impl SessionState {
    /// Allowed transitions. FAULT → RUNNING is the resume path.
    pub fn can_become(self, next: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, next),
            (Idle, Running) | (Running, Paused) | (Paused, Running) | (Running, Done) | (Running, Fault) | (Fault, Running)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Idle => "IDLE",
            SessionState::Running => "RUNNING",
            SessionState::Paused => "PAUSED",
            SessionState::Done => "DONE",
            SessionState::Fault => "FAULT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub index: usize,
    pub pose: StagePose,
    /// Ground-truth material under the tool.
    pub material: String,
    pub sample_rate: f64,
    pub t_start_ns: u64,
    pub t_end_ns: u64,
    pub saturated: bool,
    pub force_sha256: String,
    pub left_sha256: String,
    pub right_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub png_sha256: String,
    pub json_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub id: String,
    pub config: SessionConfig,
    pub config_hash: String,
    pub phantom_sha256: String,
    pub calibration_sha256: Option<String>,
    pub model_sha256: Option<String>,
    pub class_names: Vec<String>,
    pub plan: ScanPlan,
    pub state: SessionState,
    pub fault: Option<String>,
    /// Simulator state right after the last recorded point.
    pub sim_state: Option<SimState>,
    pub records: Vec<RecordEntry>,
    pub features_sha256: String,
    pub predictions_sha256: Option<String>,
    pub map: Option<MapEntry>,
    /// SHA-256 of this document serialized with an empty `checksum`.
    #[serde(default)]
    pub checksum: String,
}

impl Manifest {
    pub fn completed(&self) -> usize {
        self.records.len()
    }

    fn body_hash(&self) -> String {
        let mut m = self.clone();
        m.checksum.clear();
        sha256_hex(&serde_json::to_vec(&m).expect("manifest serializes"))
    }
}

/// Handle on one session directory.
#[derive(Debug, Clone)]
pub struct SessionDir {
    pub path: PathBuf,
}

fn bad(what: impl Into<String>, message: impl ToString) -> StoreError {
    StoreError::Corrupt {
        what: what.into(),
        message: message.to_string(),
    }
}

fn check_hash(what: String, bytes: &[u8], expected: &str) -> Result<(), StoreError> {
    let actual = sha256_hex(bytes);
    if actual != expected {
        return Err(StoreError::Integrity {
            what,
            expected: expected.to_string(),
            actual,
        });
    }
    Ok(())
}

pub fn encode_force_csv(series: &[(f64, f64)]) -> Vec<u8> {
    let mut s = String::from("displacement_mm,force_n\n");
    for (d, f) in series {
        s.push_str(&format!("{d},{f}\n"));
    }
    s.into_bytes()
}

pub fn decode_force_csv(bytes: &[u8], what: &str) -> Result<Vec<(f64, f64)>, StoreError> {
    let text = std::str::from_utf8(bytes).map_err(|e| bad(what, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("displacement_mm,force_n") {
        return Err(bad(what, "missing header"));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let (d, f) = l.split_once(',').ok_or_else(|| bad(what, format!("line {}: expected two fields", i + 2)))?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(what, format!("line {}: bad number '{s}'", i + 2)));
            Ok((num(d)?, num(f)?))
        })
        .collect()
}

pub fn encode_wav(samples: &[i16], sample_rate: f64) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate.round() as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut buf, spec).expect("in-memory wav");
        for &s in samples {
            w.write_sample(s).expect("in-memory wav");
        }
        w.finalize().expect("in-memory wav");
    }
    buf.into_inner()
}

pub fn decode_wav(bytes: &[u8], what: &str) -> Result<(Vec<i16>, u32), StoreError> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| bad(what, e))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(bad(what, "expected 16-bit mono PCM"));
    }
    let expected = reader.duration() as usize;
    let samples: Vec<i16> = reader.into_samples::<i16>().collect::<Result<_, _>>().map_err(|e| bad(what, e))?;
    if samples.len() != expected {
        return Err(bad(what, format!("{} of {expected} samples present", samples.len())));
    }
    Ok((samples, spec.sample_rate))
}

/// One classified point as stored in `predictions.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub probs: Option<Vec<f64>>,
}

pub fn encode_predictions(rows: &[Prediction], class_names: &[String]) -> Vec<u8> {
    let mut s = String::from("index,x,y,predicted");
    for c in class_names {
        s.push_str(&format!(",p_{c}"));
    }
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{}", r.index, r.x, r.y));
        match &r.probs {
            Some(p) => {
                s.push(',');
                s.push_str(&class_names[argmax(p)]);
                for v in p {
                    s.push_str(&format!(",{v}"));
                }
            }
            None => s.push_str(&",".repeat(class_names.len() + 1)),
        }
        s.push('\n');
    }
    s.into_bytes()
}

pub fn decode_predictions(bytes: &[u8], n_classes: usize) -> Result<Vec<Prediction>, StoreError> {
    let what = "predictions.csv";
    let text = std::str::from_utf8(bytes).map_err(|e| bad(what, e))?;
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 + n_classes {
                return Err(bad(what, format!("line {}: {} fields", i + 2, f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(what, format!("line {}: bad number '{s}'", i + 2)));
            let probs = if f[3].is_empty() {
                None
            } else {
                Some(f[4..].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?)
            };
            Ok(Prediction {
                index: f[0].parse().map_err(|_| bad(what, format!("line {}: bad index", i + 2)))?,
                x: num(f[1])?,
                y: num(f[2])?,
                probs,
            })
        })
        .collect()
}

pub fn encode_features(rows: &[FeatureRow]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_feature_table(rows, &mut buf).expect("in-memory csv");
    buf
}

/// Keep the header plus the first `n` lines.
fn truncate_lines(bytes: &[u8], n: usize) -> &[u8] {
    let mut seen = 0;
    for (i, b) in bytes.iter().enumerate() {
        if *b == b'\n' {
            if seen == n {
                return &bytes[..=i];
            }
            seen += 1;
        }
    }
    bytes
}

impl SessionDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.path.join("manifest.json")
    }

    pub fn records_dir(&self) -> PathBuf {
        self.path.join("records")
    }

    pub fn force_path(&self, index: usize) -> PathBuf {
        self.records_dir().join(format!("{index:03}.csv"))
    }

    pub fn wav_path(&self, index: usize, side: char) -> PathBuf {
        self.records_dir().join(format!("{index:03}_{side}.wav"))
    }

    pub fn features_path(&self) -> PathBuf {
        self.path.join("features.csv")
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.path.join("predictions.csv")
    }

    pub fn events_path(&self) -> PathBuf {
        self.path.join("events.jsonl")
    }

    pub fn map_png_path(&self) -> PathBuf {
        self.path.join("map.png")
    }

    pub fn map_json_path(&self) -> PathBuf {
        self.path.join("map.json")
    }

    pub fn create_dirs(&self) -> Result<(), StoreError> {
        let r = self.records_dir();
        fs::create_dir_all(&r).map_err(io_err(&r))
    }

    pub fn save_manifest(&self, m: &mut Manifest) -> Result<(), StoreError> {
        m.checksum = m.body_hash();
        let json = serde_json::to_string_pretty(m).expect("manifest serializes");
        write_atomic(&self.manifest_path(), json.as_bytes())
    }

    /// Parse and verify the manifest document itself (version, checksum).
    pub fn load_manifest(&self) -> Result<Manifest, StoreError> {
        let path = self.manifest_path();
        let bytes = read_file(&path)?;
        let v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| bad("manifest.json", e))?;
        let found = v.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0);
        if found != MANIFEST_VERSION as u64 {
            return Err(StoreError::UnsupportedVersion {
                what: "manifest.json".into(),
                found,
                supported: MANIFEST_VERSION,
            });
        }
        let m: Manifest = serde_json::from_value(v).map_err(|e| bad("manifest.json", e))?;
        let actual = m.body_hash();
        if actual != m.checksum {
            return Err(StoreError::Integrity {
                what: "manifest.json".into(),
                expected: m.checksum.clone(),
                actual,
            });
        }
        Ok(m)
    }

    /// Write one point's files; returns the entry to list in the manifest.
    pub fn write_record(&self, index: usize, rec: &PalpationRecord, material: &str) -> Result<RecordEntry, StoreError> {
        let force = encode_force_csv(&rec.force_series);
        let left = encode_wav(&rec.audio_left, rec.sample_rate);
        let right = encode_wav(&rec.audio_right, rec.sample_rate);
        write_atomic(&self.force_path(index), &force)?;
        write_atomic(&self.wav_path(index, 'L'), &left)?;
        write_atomic(&self.wav_path(index, 'R'), &right)?;
        Ok(RecordEntry {
            index,
            pose: rec.pose,
            material: material.to_string(),
            sample_rate: rec.sample_rate,
            t_start_ns: rec.t_start_ns,
            t_end_ns: rec.t_end_ns,
            saturated: rec.saturated,
            force_sha256: sha256_hex(&force),
            left_sha256: sha256_hex(&left),
            right_sha256: sha256_hex(&right),
        })
    }

    pub fn read_record(&self, e: &RecordEntry) -> Result<PalpationRecord, StoreError> {
        let fp = self.force_path(e.index);
        let force = read_file(&fp)?;
        check_hash(fp.display().to_string(), &force, &e.force_sha256)?;
        let mut audio = Vec::new();
        for (side, hash) in [('L', &e.left_sha256), ('R', &e.right_sha256)] {
            let p = self.wav_path(e.index, side);
            let bytes = read_file(&p)?;
            check_hash(p.display().to_string(), &bytes, hash)?;
            let (samples, sr) = decode_wav(&bytes, &p.display().to_string())?;
            if sr as f64 != e.sample_rate.round() {
                return Err(bad(p.display().to_string(), format!("sample rate {sr}, manifest says {}", e.sample_rate)));
            }
            audio.push(samples);
        }
        let right = audio.pop().expect("two channels");
        let left = audio.pop().expect("two channels");
        Ok(PalpationRecord {
            pose: e.pose,
            force_series: decode_force_csv(&force, &fp.display().to_string())?,
            audio_left: left,
            audio_right: right,
            sample_rate: e.sample_rate,
            t_start_ns: e.t_start_ns,
            t_end_ns: e.t_end_ns,
            saturated: e.saturated,
        })
    }

    pub fn write_features(&self, rows: &[FeatureRow]) -> Result<String, StoreError> {
        let bytes = encode_features(rows);
        write_atomic(&self.features_path(), &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn write_predictions(&self, rows: &[Prediction], class_names: &[String]) -> Result<String, StoreError> {
        let bytes = encode_predictions(rows, class_names);
        write_atomic(&self.predictions_path(), &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn read_features(&self, m: &Manifest) -> Result<Vec<FeatureRow>, StoreError> {
        let p = self.features_path();
        let bytes = read_file(&p)?;
        check_hash("features.csv".into(), &bytes, &m.features_sha256)?;
        Ok(read_feature_table(bytes.as_slice())?)
    }

    pub fn read_predictions(&self, m: &Manifest) -> Result<Vec<Prediction>, StoreError> {
        let Some(expected) = &m.predictions_sha256 else {
            return Ok(Vec::new());
        };
        let bytes = read_file(&self.predictions_path())?;
        check_hash("predictions.csv".into(), &bytes, expected)?;
        decode_predictions(&bytes, m.class_names.len())
    }

    /// Verify every file the manifest lists.
    pub fn verify(&self, m: &Manifest) -> Result<(), StoreError> {
        for e in &m.records {
            self.read_record(e)?;
        }
        self.read_features(m)?;
        self.read_predictions(m)?;
        if let Some(map) = &m.map {
            check_hash("map.png".into(), &read_file(&self.map_png_path())?, &map.png_sha256)?;
            check_hash("map.json".into(), &read_file(&self.map_json_path())?, &map.json_sha256)?;
        }
        Ok(())
    }

    /// After an interrupted run the tables may hold one row the manifest
    /// never committed; cut them back to the committed prefix.
    pub fn roll_back_tables(&self, m: &Manifest) -> Result<(), StoreError> {
        let n = m.completed();
        let mut paths = vec![self.features_path()];
        if m.predictions_sha256.is_some() {
            paths.push(self.predictions_path());
        }
        for p in paths {
            if !p.exists() {
                continue;
            }
            let bytes = read_file(&p)?;
            let kept = truncate_lines(&bytes, n);
            if kept.len() != bytes.len() {
                write_atomic(&p, kept)?;
            }
        }
        Ok(())
    }
}

/// Open and fully verify a session directory.
pub fn load(dir: &Path) -> Result<Manifest, StoreError> {
    let d = SessionDir::new(dir);
    let m = d.load_manifest()?;
    d.verify(&m)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transitions() {
        use SessionState::*;
        assert!(Idle.can_become(Running));
        assert!(Paused.can_become(Running));
        assert!(Fault.can_become(Running));
        assert!(!Done.can_become(Running));
        assert!(!Idle.can_become(Done));
        assert!(!Paused.can_become(Done));
    }

    #[test]
    fn force_csv_round_trips_exactly() {
        let s = vec![(0.004, 0.1 + 0.2), (1e-300, 49.999999999), (2.0, 0.0)];
        assert_eq!(decode_force_csv(&encode_force_csv(&s), "x").unwrap(), s);
        assert!(decode_force_csv(b"displacement_mm,force_n\n1,abc\n", "x").is_err());
    }

    #[test]
    fn wav_round_trip_and_truncation() {
        let s: Vec<i16> = (0..5000).map(|i| (i * 13 % 65536 - 32768) as i16).collect();
        let bytes = encode_wav(&s, 44100.0);
        assert_eq!(decode_wav(&bytes, "w").unwrap(), (s, 44100));
        let cut = &bytes[..bytes.len() - 101];
        assert!(matches!(decode_wav(cut, "w"), Err(StoreError::Corrupt { .. })));
    }

    #[test]
    fn predictions_round_trip() {
        let names = vec!["a".to_string(), "b".to_string()];
        let rows = vec![
            Prediction {
                index: 0,
                x: 1.5,
                y: 2.0,
                probs: Some(vec![0.25, 0.75]),
            },
            Prediction {
                index: 1,
                x: 2.5,
                y: 2.0,
                probs: None,
            },
        ];
        let bytes = encode_predictions(&rows, &names);
        assert!(String::from_utf8_lossy(&bytes).starts_with("index,x,y,predicted,p_a,p_b\n0,1.5,2,b,0.25,0.75\n1,2.5,2,,,\n"));
        assert_eq!(decode_predictions(&bytes, 2).unwrap(), rows);
    }

    #[test]
    fn truncation_keeps_header_and_prefix() {
        let t = b"h\n1\n2\n3\n";
        assert_eq!(truncate_lines(t, 0), b"h\n");
        assert_eq!(truncate_lines(t, 2), b"h\n1\n2\n");
        assert_eq!(truncate_lines(t, 5), t);
    }
}
