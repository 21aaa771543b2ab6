//! Reference experiments driven straight against the simulator: stiffness
//! characterization, multimodal classification and boundary recovery.
//! The CLI and the acceptance suite both run these.

use std::f64::consts::PI;

use palpbench_core::calibration::{run_calibration, CalibrationPlan, CalibrationResult, SpotLocalization};
use palpbench_core::dsp::{estimate_stiffness, FeatureRow, Mfcc, SensorMask};
use palpbench_core::learn::{argmax, stratified_split, ConfusionMatrix, Dataset, LearnError, MlpConfig, ModelDoc, SvmConfig};
use palpbench_core::scan::{spoke_plan, PixelMapper, Provenance, RoiPolygon, ScanError, ScanPlan, SpokeParams};
use palpbench_core::sim::{presets, MaterialSpec, PhantomError, SimError};
use palpbench_core::{Phantom, PalpationRecord, RigSim, SimConfig};
use serde::Serialize;
use thiserror::Error;

use crate::config::PalpationSettings;
use crate::pipeline::{classify, feature_row};
use crate::store::CalibrationDoc;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("simulator: {0}")]
    Sim(#[from] SimError),
    #[error("phantom: {0}")]
    Phantom(#[from] PhantomError),
    #[error("learning: {0}")]
    Learn(#[from] LearnError),
    #[error("plan: {0}")]
    Scan(#[from] ScanError),
    #[error("calibration: {0}")]
    Calibration(#[from] palpbench_core::calibration::CalibrationError),
    #[error("{0}")]
    Other(String),
}

/// Centre of the phantoms built here, stage mm.
pub const CENTER: [f64; 2] = [100.0, 100.0];

/// Soft tissue needs a deeper press to get a usable loading curve.
pub fn settings_for(m: &MaterialSpec) -> PalpationSettings {
    if m.stiffness_mean < 1.0 {
        PalpationSettings { depth: 5.0, force_limit: 45.0 }
    } else {
        PalpationSettings::default()
    }
}

/// Palpate each point once, in order.
pub fn palpate_points(
    sim: &mut RigSim,
    points: &[[f64; 2]],
    settings: impl Fn(&MaterialSpec) -> PalpationSettings,
    mfcc: &Mfcc,
) -> Result<Vec<(PalpationRecord, FeatureRow)>, ScenarioError> {
    let mut out = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let m = sim
            .phantom()
            .material_at(p[0], p[1])
            .ok_or(SimError::NoPhantom { x: p[0], y: p[1] })?
            .clone();
        let s = settings(&m);
        sim.move_to(p[0], p[1])?;
        let rec = sim.palpate(s.depth, s.force_limit)?;
        let row = feature_row(i, &m.name, &rec, mfcc);
        out.push((rec, row));
    }
    Ok(out)
}

/// Cell centres of an `n × n` block starting at `origin`.
pub fn cell_centers(origin: [f64; 2], n: usize, cell: f64) -> Vec<[f64; 2]> {
    (0..n)
        .flat_map(|r| (0..n).map(move |c| [origin[0] + (c as f64 + 0.5) * cell, origin[1] + (r as f64 + 0.5) * cell]))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct StiffnessStats {
    pub material: String,
    pub n: usize,
    pub mean: f64,
    /// Sample SD (n − 1).
    pub sd: f64,
    pub reference_mean: f64,
    pub reference_sd: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// `n_side²` palpations on a uniform block of one material, one per cell.
pub fn stiffness_trial(material: MaterialSpec, n_side: usize, cfg: &SimConfig) -> Result<StiffnessStats, ScenarioError> {
    let origin = [CENTER[0] - n_side as f64 / 2.0, CENTER[1] - n_side as f64 / 2.0];
    let phantom = Phantom::uniform(material.clone(), n_side, n_side, 1.0, origin)?;
    let mut sim = RigSim::new(phantom, cfg.clone())?;
    let s = settings_for(&material);
    let mut k = Vec::new();
    for p in cell_centers(origin, n_side, 1.0) {
        sim.move_to(p[0], p[1])?;
        let rec = sim.palpate(s.depth, s.force_limit)?;
        k.push(estimate_stiffness(&rec.force_series).map_err(|e| ScenarioError::Other(e.to_string()))?);
    }
    let (mean, sd) = mean_sd(&k);
    Ok(StiffnessStats {
        material: material.name,
        n: k.len(),
        mean,
        sd,
        reference_mean: material.stiffness_mean,
        reference_sd: material.stiffness_sd,
    })
}

/// PLA 15% re-tuned so its stiffness distribution overlaps PLA 5%; its
/// acoustic modes are unchanged. Force alone cannot separate the two.
pub fn pla15_overlapping() -> MaterialSpec {
    MaterialSpec {
        stiffness_mean: 24.3,
        stiffness_sd: 1.2,
        ..presets::pla15()
    }
}

/// 2 × 2 blocks of 10 × 10 one-millimetre cells centred on [`CENTER`].
pub fn block_phantom(materials: Vec<MaterialSpec>) -> Result<Phantom, ScenarioError> {
    Ok(Phantom::blocks(materials, 10, 1.0, [CENTER[0] - 10.0, CENTER[1] - 10.0])?)
}

pub fn multimodal_phantom() -> Result<Phantom, ScenarioError> {
    block_phantom(vec![pla15_overlapping(), presets::pla5(), presets::tpu(), presets::porcine()])
}

/// Every cell of the phantom palpated once; rows labelled by the material
/// under the tool.
pub fn collect_dataset(
    phantom: &Phantom,
    cfg: &SimConfig,
    settings: impl Fn(&MaterialSpec) -> PalpationSettings,
    mfcc: &Mfcc,
) -> Result<(Dataset, Vec<FeatureRow>), ScenarioError> {
    let class_names: Vec<String> = phantom.materials().iter().map(|m| m.name.clone()).collect();
    let points: Vec<[f64; 2]> = (0..phantom.ny())
        .flat_map(|r| (0..phantom.nx()).map(move |c| (c, r)))
        .map(|(c, r)| phantom.cell_center(c, r))
        .collect();
    let mut sim = RigSim::new(phantom.clone(), cfg.clone())?;
    let rows: Vec<FeatureRow> = palpate_points(&mut sim, &points, settings, mfcc)?.into_iter().map(|(_, r)| r).collect();
    dataset_from_rows(&rows, &class_names).map(|d| (d, rows))
}

pub fn dataset_from_rows(rows: &[FeatureRow], class_names: &[String]) -> Result<Dataset, ScenarioError> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for r in rows {
        if r.mask != SensorMask::ALL {
            return Err(ScenarioError::Other(format!("row {} has only {} features", r.index, r.mask)));
        }
        let label = class_names
            .iter()
            .position(|c| *c == r.material)
            .ok_or_else(|| ScenarioError::Other(format!("row {} has unknown label '{}'", r.index, r.material)))?;
        x.push(r.features.clone());
        y.push(label);
    }
    Ok(Dataset::new(x, y, class_names.to_vec(), SensorMask::ALL)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct MultimodalTrial {
    pub seed: u64,
    pub force: ConfusionMatrix,
    pub left: ConfusionMatrix,
    pub right: ConfusionMatrix,
    pub fused_svm: ConfusionMatrix,
    pub fused_mlp: ConfusionMatrix,
}

impl MultimodalTrial {
    pub fn best_single(&self) -> f64 {
        [&self.force, &self.left, &self.right].iter().map(|c| c.accuracy()).fold(f64::MIN, f64::max)
    }
}

pub fn confusion(model: &ModelDoc, test: &Dataset) -> Result<ConfusionMatrix, ScenarioError> {
    let probs = model.predict_proba_full(&test.x)?;
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    Ok(ConfusionMatrix::from_predictions(&test.y, &pred, test.class_names.clone())?)
}

/// 70/30 stratified split, then one SVM per sensor subset and a fused MLP.
pub fn multimodal_trial(data: &Dataset, seed: u64) -> Result<MultimodalTrial, ScenarioError> {
    let (train_idx, test_idx) = stratified_split(&data.y, 0.3, seed);
    let train = data.subset(&train_idx);
    let test = data.subset(&test_idx);
    let svm = |mask: SensorMask| -> Result<ConfusionMatrix, ScenarioError> {
        let model = ModelDoc::train_svm(&train.with_mask(mask), &SvmConfig::default())?;
        confusion(&model, &test)
    };
    let mlp_cfg = MlpConfig {
        seed,
        ..MlpConfig::default()
    };
    let mlp = ModelDoc::train_mlp(&train.with_mask(SensorMask::ALL), &mlp_cfg)?;
    Ok(MultimodalTrial {
        seed,
        force: svm(SensorMask::FORCE)?,
        left: svm(SensorMask::LEFT)?,
        right: svm(SensorMask::RIGHT)?,
        fused_svm: svm(SensorMask::ALL)?,
        fused_mlp: confusion(&mlp, &test)?,
    })
}

/// Laser-grid calibration against the simulated rig.
pub fn calibrate(sim: &mut RigSim, plan: &CalibrationPlan) -> Result<(CalibrationDoc, CalibrationResult), ScenarioError> {
    let result = run_calibration(sim, plan)?;
    let doc = CalibrationDoc {
        format_version: 1,
        intrinsics: sim.camera().intrinsics,
        transform: (&result.fit.transform).into(),
        residuals: result.fit.stats,
        n_pairs: result.correspondences.pairs.len(),
        z_levels: plan.z_levels.clone(),
        grid: [plan.nx, plan.ny],
    };
    Ok((doc, result))
}

/// TPU core, PLA 5% ring, PLA 15% outside.
pub fn concentric_phantom(radii: [f64; 2]) -> Result<Phantom, ScenarioError> {
    Ok(Phantom::concentric(
        vec![presets::tpu(), presets::pla5(), presets::pla15()],
        &radii,
        0.5,
        CENTER,
        40.0,
    )?)
}

/// Pixel polygon of a stage-frame circle lying on the surface plane.
pub fn circle_roi_px(sim: &RigSim, center: [f64; 2], radius: f64, height: f64, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .filter_map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            let (u, v, _) = sim
                .camera()
                .project([center[0] + radius * t.cos(), center[1] + radius * t.sin(), height])?;
            Some([u, v])
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SpokeOutcome {
    pub spoke: usize,
    /// First radius at which each outer material appears, true and predicted.
    pub truth: Vec<Option<f64>>,
    pub found: Vec<Option<f64>>,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryTrial {
    pub seed: u64,
    pub step: f64,
    pub spokes: Vec<SpokeOutcome>,
}

impl BoundaryTrial {
    pub fn fraction_ok(&self) -> f64 {
        self.spokes.iter().filter(|s| s.ok).count() as f64 / self.spokes.len() as f64
    }
}

fn first_radius(seq: &[(f64, usize)], class: usize) -> Option<f64> {
    seq.iter().find(|(_, c)| *c == class).map(|(r, _)| *r)
}

/// Per-spoke transition radii, predicted against ground truth.
pub fn spoke_transitions(plan: &ScanPlan, truth: &[usize], predicted: &[usize], inner_classes: &[usize]) -> Result<Vec<SpokeOutcome>, ScenarioError> {
    let Provenance::Spokes { n_spokes, step, nodes, .. } = &plan.provenance else {
        return Err(ScenarioError::Other("not a spoke plan".into()));
    };
    let mut out = Vec::new();
    for j in 0..*n_spokes {
        let along: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].0 == 0 || nodes[i].1 == j).collect();
        let seq = |labels: &[usize]| -> Vec<(f64, usize)> { along.iter().map(|&i| (nodes[i].0 as f64 * step, labels[i])).collect() };
        let (ts, ps) = (seq(truth), seq(predicted));
        let truth_r: Vec<Option<f64>> = inner_classes.iter().map(|&c| first_radius(&ts, c)).collect();
        let found_r: Vec<Option<f64>> = inner_classes.iter().map(|&c| first_radius(&ps, c)).collect();
        let ok = truth_r.iter().zip(&found_r).all(|(t, f)| match (t, f) {
            (Some(t), Some(f)) => (t - f).abs() <= step + 1e-9,
            (None, None) => true,
            _ => false,
        });
        out.push(SpokeOutcome {
            spoke: j,
            truth: truth_r,
            found: found_r,
            ok,
        });
    }
    Ok(out)
}

/// Train on a block phantom of the three ring materials, calibrate, plan
/// spokes over the concentric phantom from a pixel ROI, palpate and locate
/// the ring boundaries.
pub fn boundary_trial(seed: u64, mfcc: &Mfcc) -> Result<BoundaryTrial, ScenarioError> {
    let cfg = SimConfig::default().with_seed(seed);
    let train_phantom = block_phantom(vec![presets::tpu(), presets::pla5(), presets::pla15()])?;
    let (data, _) = collect_dataset(&train_phantom, &cfg, settings_for, mfcc)?;
    let model = ModelDoc::train_svm(&data, &SvmConfig::default())?;

    let phantom = concentric_phantom([4.0, 8.0])?;
    let height = phantom.materials()[0].surface_height;
    let mut sim = RigSim::new(phantom, cfg.with_seed(seed ^ 0x5eed))?;
    let cal_plan = CalibrationPlan {
        localization: SpotLocalization::Reported,
        ..CalibrationPlan::default()
    };
    let (doc, _) = calibrate(&mut sim, &cal_plan)?;
    sim.move_z(0.0)?;
    let t = doc.transform().map_err(|e| ScenarioError::Other(e.to_string()))?;
    let frame = sim.render_frame();
    let depth = |u: f64, v: f64| frame.depth_at(u, v);
    let mapper = PixelMapper {
        intrinsics: doc.intrinsics,
        transform: &t,
        depth: &depth,
    };
    let roi = RoiPolygon::new(circle_roi_px(&sim, CENTER, 11.0, height, 32))?;
    let params = SpokeParams {
        n_spokes: 8,
        step: 1.0,
        max_radius: 12.0,
    };
    let plan = spoke_plan(&roi, &mapper, params, &sim.config().limits)?;

    let visits = palpate_points(&mut sim, &plan.points, settings_for, mfcc)?;
    let truth: Vec<usize> = plan
        .points
        .iter()
        .map(|p| sim.material_index_at(p[0], p[1]).ok_or(SimError::NoPhantom { x: p[0], y: p[1] }))
        .collect::<Result<_, _>>()?;
    let predicted: Vec<usize> = visits
        .iter()
        .map(|(_, row)| classify(row, &model).map(|p| argmax(&p)).unwrap_or(usize::MAX))
        .collect();
    Ok(BoundaryTrial {
        seed,
        step: params.step,
        spokes: spoke_transitions(&plan, &truth, &predicted, &[1, 2])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use palpbench_core::scan::Pattern;

    #[test]
    fn transitions_compare_first_occurrence() {
        let nodes = vec![(0, 0), (1, 0), (2, 0), (3, 0), (1, 1), (2, 1), (3, 1)];
        let plan = ScanPlan {
            pattern: Pattern::Spokes,
            points: vec![[0.0; 2]; nodes.len()],
            provenance: Provenance::Spokes {
                roi: vec![],
                center: [0.0; 2],
                n_spokes: 2,
                step: 1.0,
                max_radius: 3.0,
                nodes,
            },
        };
        let truth = [0, 1, 1, 2, 0, 1, 2];
        let pred = [0, 0, 1, 2, 0, 0, 0];
        let out = spoke_transitions(&plan, &truth, &pred, &[1, 2]).unwrap();
        assert!(out[0].ok);
        assert_eq!(out[0].found, vec![Some(2.0), Some(3.0)]);
        assert!(!out[1].ok);
        assert_eq!(out[1].truth, vec![Some(2.0), Some(3.0)]);
    }

    #[test]
    fn overlapping_pla_keeps_distinct_modes() {
        let a = pla15_overlapping();
        let b = presets::pla5();
        assert!((a.stiffness_mean - b.stiffness_mean).abs() < a.stiffness_sd);
        assert_ne!(a.resonance_modes[0].frequency_hz, b.resonance_modes[0].frequency_hz);
    }
}
