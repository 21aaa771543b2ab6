use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::force::ForceFeatures;
use super::mfcc::{MfccVector, N_COEFF};
use super::DspError;

pub const FORCE_DIM: usize = 3;
pub const FULL_DIM: usize = FORCE_DIM + 2 * N_COEFF;

/// Which sensors contribute to a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorMask {
    pub force: bool,
    pub left: bool,
    pub right: bool,
}

impl SensorMask {
    pub const ALL: Self = Self {
        force: true,
        left: true,
        right: true,
    };
    pub const FORCE: Self = Self {
        force: true,
        left: false,
        right: false,
    };
    pub const MICS: Self = Self {
        force: false,
        left: true,
        right: true,
    };
    pub const LEFT: Self = Self {
        force: false,
        left: true,
        right: false,
    };
    pub const RIGHT: Self = Self {
        force: false,
        left: false,
        right: true,
    };

    pub fn is_empty(&self) -> bool {
        !(self.force || self.left || self.right)
    }

    pub fn dim(&self) -> usize {
        self.force as usize * FORCE_DIM + (self.left as usize + self.right as usize) * N_COEFF
    }

    /// Column names in fused order.
    pub fn columns(&self) -> Vec<String> {
        all_columns()
            .into_iter()
            .enumerate()
            .filter(|(i, _)| self.keeps(*i))
            .map(|(_, c)| c)
            .collect()
    }

    /// Whether column `i` of the full vector survives the mask.
    pub fn keeps(&self, i: usize) -> bool {
        if i < FORCE_DIM {
            self.force
        } else if i < FORCE_DIM + N_COEFF {
            self.left
        } else {
            self.right
        }
    }

    /// Select the masked columns from a full-width vector.
    pub fn select(&self, full: &[f64]) -> Vec<f64> {
        full.iter()
            .enumerate()
            .filter(|(i, _)| self.keeps(*i))
            .map(|(_, v)| *v)
            .collect()
    }
}

impl fmt::Display for SensorMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.force {
            parts.push("force");
        }
        if self.left {
            parts.push("left");
        }
        if self.right {
            parts.push("right");
        }
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for SensorMask {
    type Err = DspError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut m = Self {
            force: false,
            left: false,
            right: false,
        };
        match s {
            "all" => return Ok(Self::ALL),
            "mics" => return Ok(Self::MICS),
            _ => {}
        }
        for part in s.split('+').filter(|p| !p.is_empty()) {
            match part {
                "force" => m.force = true,
                "left" => m.left = true,
                "right" => m.right = true,
                other => return Err(DspError::Config(format!("unknown sensor '{other}'"))),
            }
        }
        if m.is_empty() {
            return Err(DspError::EmptyMask);
        }
        Ok(m)
    }
}

pub fn all_columns() -> Vec<String> {
    let mut c = vec!["stiffness".to_string(), "max_displacement".into(), "smoothness".into()];
    c.extend((1..=N_COEFF).map(|i| format!("mfcc_l{i}")));
    c.extend((1..=N_COEFF).map(|i| format!("mfcc_r{i}")));
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub mask: SensorMask,
}

/// `[force(3) | left(12) | right(12)]`, masked sensors omitted.
pub fn fuse(
    force: Option<&ForceFeatures>,
    left: Option<&MfccVector>,
    right: Option<&MfccVector>,
    mask: SensorMask,
) -> Result<FeatureVector, DspError> {
    if mask.is_empty() {
        return Err(DspError::EmptyMask);
    }
    let mut values = Vec::with_capacity(mask.dim());
    if mask.force {
        values.extend(force.ok_or(DspError::MissingSensor("force"))?.to_array());
    }
    for (on, mic, name) in [(mask.left, left, "left"), (mask.right, right, "right")] {
        if on {
            let m = mic.ok_or(DspError::MissingSensor(name))?;
            if m.coeffs.len() != N_COEFF {
                return Err(DspError::Config(format!("{name} MFCC has {} coefficients", m.coeffs.len())));
            }
            values.extend(&m.coeffs);
        }
    }
    Ok(FeatureVector { values, mask })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mf(base: f64) -> MfccVector {
        MfccVector {
            coeffs: (0..12).map(|i| base + i as f64).collect(),
            per_frame: vec![],
        }
    }

    const F: ForceFeatures = ForceFeatures {
        stiffness: 7.0,
        max_displacement: 1.5,
        smoothness: 0.01,
    };

    #[test]
    fn arity_and_order() {
        let (l, r) = (mf(100.0), mf(200.0));
        let all = fuse(Some(&F), Some(&l), Some(&r), SensorMask::ALL).unwrap();
        assert_eq!(all.values.len(), 27);
        assert_eq!(&all.values[..4], &[7.0, 1.5, 0.01, 100.0]);
        assert_eq!(all.values[15], 200.0);
        assert_eq!(fuse(Some(&F), None, None, SensorMask::FORCE).unwrap().values.len(), 3);
        assert_eq!(fuse(None, Some(&l), None, SensorMask::LEFT).unwrap().values.len(), 12);
        assert_eq!(SensorMask::ALL.select(&all.values), all.values);
        assert_eq!(SensorMask::RIGHT.select(&all.values), r.coeffs);
        assert_eq!(SensorMask::ALL.columns(), all_columns());
    }

    #[test]
    fn errors() {
        let none = SensorMask {
            force: false,
            left: false,
            right: false,
        };
        assert_eq!(fuse(Some(&F), None, None, none), Err(DspError::EmptyMask));
        assert_eq!(fuse(None, None, None, SensorMask::FORCE), Err(DspError::MissingSensor("force")));
    }

    #[test]
    fn mask_text_round_trip() {
        for m in [SensorMask::ALL, SensorMask::FORCE, SensorMask::MICS, SensorMask::LEFT] {
            assert_eq!(m.to_string().parse::<SensorMask>().unwrap(), m);
        }
        assert_eq!("all".parse::<SensorMask>().unwrap(), SensorMask::ALL);
        assert!("".parse::<SensorMask>().is_err());
        assert!("force+nose".parse::<SensorMask>().is_err());
    }
}
