//! Figures and tables derived from feature tables and models.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use palpbench_core::dsp::{FeatureRow, SensorMask};
use palpbench_core::learn::{pca_fit, ConfusionMatrix, Dataset, ModelDoc, Standardizer};
use palpbench_core::scan::map::PALETTE;
use serde::Serialize;

use crate::config::PalpationSettings;
use crate::scenarios::{confusion, ScenarioError, StiffnessStats};
use crate::store::{io_err, write_atomic, StoreError};

/// Scatter of the first two principal components of the standardized
/// features, coloured by class.
pub fn pca_scatter(data: &Dataset, size: u32) -> Result<(RgbImage, Vec<f64>), ScenarioError> {
    let std = Standardizer::fit(&data.x)?;
    let z = std.apply_all(&data.x);
    let fit = pca_fit(&z, 2)?;
    let pts = fit.model.project(&z);
    let lim = pts
        .iter()
        .flat_map(|p| p.iter().map(|v| v.abs()))
        .fold(1e-12, f64::max)
        * 1.05;
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    let half = size as f64 / 2.0;
    for i in 0..size {
        img.put_pixel(i, size / 2, Rgb([210, 210, 210]));
        img.put_pixel(size / 2, i, Rgb([210, 210, 210]));
    }
    for (p, &label) in pts.iter().zip(&data.y) {
        let cx = (half + p[0] / lim * (half - 4.0)).round() as i64;
        let cy = (half - p[1] / lim * (half - 4.0)).round() as i64;
        let c = PALETTE[label % PALETTE.len()];
        for dy in -2..=2i64 {
            for dx in -2..=2i64 {
                let (x, y) = (cx + dx, cy + dy);
                if dx * dx + dy * dy <= 5 && x >= 0 && y >= 0 && x < size as i64 && y < size as i64 {
                    img.put_pixel(x as u32, y as u32, Rgb(c));
                }
            }
        }
    }
    Ok((img, fit.model.explained_variance_ratio))
}

/// Per-material stiffness from the `stiffness` column of a feature table.
pub fn stiffness_by_material(rows: &[FeatureRow]) -> Vec<StiffnessStats> {
    let mut names: Vec<String> = Vec::new();
    for r in rows {
        if !r.material.is_empty() && !names.contains(&r.material) {
            names.push(r.material.clone());
        }
    }
    names
        .into_iter()
        .filter_map(|name| {
            let k: Vec<f64> = rows
                .iter()
                .filter(|r| r.material == name && r.mask.force)
                .map(|r| r.features[0])
                .collect();
            if k.is_empty() {
                return None;
            }
            let n = k.len() as f64;
            let mean = k.iter().sum::<f64>() / n;
            let sd = (k.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
            Some(StiffnessStats {
                material: name,
                n: k.len(),
                mean,
                sd,
                reference_mean: f64::NAN,
                reference_sd: f64::NAN,
            })
        })
        .collect()
}

pub fn stiffness_csv(stats: &[StiffnessStats]) -> String {
    let mut s = String::from("material,n,mean_n_per_mm,sd_n_per_mm,reference_mean,reference_sd\n");
    for st in stats {
        s.push_str(&format!(
            "{},{},{:.4},{:.4},{},{}\n",
            st.material, st.n, st.mean, st.sd, st.reference_mean, st.reference_sd
        ));
    }
    s
}

#[derive(Debug, Serialize)]
pub struct ReportSummary {
    pub rows: usize,
    pub labelled: usize,
    pub pca_explained_variance: Option<Vec<f64>>,
    /// Same projection on each sensor's columns alone.
    pub pca_per_sensor: BTreeMap<String, Vec<f64>>,
    pub stiffness: Vec<StiffnessStats>,
    pub accuracy: Option<f64>,
    pub confusion: Option<ConfusionMatrix>,
    /// Settings the tables were produced under that are defaults rather
    /// than measured facts.
    pub assumptions: Vec<String>,
}

pub fn assumptions() -> Vec<String> {
    let p = PalpationSettings::default();
    vec![
        format!("palpation depth {} mm and force limit {} N per point are configuration defaults", p.depth, p.force_limit),
        "audio features are the per-frame mean of MFCC coefficients 1..12".into(),
        "smoothness is the normalized residual of a linear fit to the loading curve".into(),
    ]
}

fn save_png(img: &RgbImage, path: &Path) -> Result<(), StoreError> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).expect("in-memory png");
    write_atomic(path, &buf.into_inner())
}

/// Write `pca.png` (all features), `pca_<sensor>.png`, `stiffness.csv`, `summary.json` and, given a model,
/// `confusion.png` and `confusion.csv` into `out`.
pub fn write_report(rows: &[FeatureRow], model: Option<&ModelDoc>, out: &Path) -> Result<ReportSummary, ScenarioError> {
    std::fs::create_dir_all(out).map_err(io_err(out)).map_err(|e| ScenarioError::Other(e.to_string()))?;
    let store = |e: StoreError| ScenarioError::Other(e.to_string());
    let labelled: Vec<&FeatureRow> = rows
        .iter()
        .filter(|r| !r.material.is_empty() && r.mask == SensorMask::ALL)
        .collect();
    let mut class_names: Vec<String> = model.map(|m| m.class_names.clone()).unwrap_or_default();
    for r in &labelled {
        if model.is_none() && !class_names.contains(&r.material) {
            class_names.push(r.material.clone());
        }
    }
    let known: Vec<&FeatureRow> = labelled.into_iter().filter(|r| class_names.contains(&r.material)).collect();
    let data = if known.len() >= 3 {
        let x = known.iter().map(|r| r.features.clone()).collect();
        let y = known
            .iter()
            .map(|r| class_names.iter().position(|c| *c == r.material).expect("filtered"))
            .collect();
        Some(Dataset::new(x, y, class_names.clone(), SensorMask::ALL)?)
    } else {
        None
    };
    let mut pca_var = None;
    let mut pca_per_sensor = BTreeMap::new();
    if let Some(d) = &data {
        let (img, var) = pca_scatter(d, 480)?;
        save_png(&img, &out.join("pca.png")).map_err(store)?;
        pca_var = Some(var);
        for (name, mask) in [("force", SensorMask::FORCE), ("left", SensorMask::LEFT), ("right", SensorMask::RIGHT)] {
            let (img, var) = pca_scatter(&d.with_mask(mask), 480)?;
            save_png(&img, &out.join(format!("pca_{name}.png"))).map_err(store)?;
            pca_per_sensor.insert(name.to_string(), var);
        }
    }
    let stiffness = stiffness_by_material(rows);
    write_atomic(&out.join("stiffness.csv"), stiffness_csv(&stiffness).as_bytes()).map_err(store)?;
    let mut cm = None;
    if let (Some(m), Some(d)) = (model, &data) {
        let c = confusion(m, d)?;
        save_png(&c.render(), &out.join("confusion.png")).map_err(store)?;
        let mut csv = Vec::new();
        c.write_csv(&mut csv).expect("in-memory csv");
        write_atomic(&out.join("confusion.csv"), &csv).map_err(store)?;
        cm = Some(c);
    }
    let summary = ReportSummary {
        rows: rows.len(),
        labelled: known.len(),
        pca_explained_variance: pca_var,
        pca_per_sensor,
        stiffness,
        accuracy: cm.as_ref().map(ConfusionMatrix::accuracy),
        confusion: cm,
        assumptions: assumptions(),
    };
    let json = serde_json::to_vec_pretty(&summary).expect("summary json");
    write_atomic(&out.join("summary.json"), &json).map_err(store)?;
    Ok(summary)
}
