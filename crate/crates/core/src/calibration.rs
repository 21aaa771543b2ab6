//! Eye-to-hand calibration between the fixed camera and the stage.
//!
//! A laser concentric with the tool shaft marks known stage points; each spot
//! is segmented in the image, deprojected with the pinhole intrinsics and
//! paired with the commanded stage position. A uniform-scale rigid
//! transform is then fitted in closed form (centroids + SVD of the
//! cross-covariance, with a determinant correction so the result is a
//! proper rotation).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{CameraFrame, RigSim, SimError};

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("no laser blob found")]
    NoBlob,
    #[error("{0} laser blobs of equal size; cannot pick one")]
    AmbiguousBlob(usize),
    #[error("depth must be > 0, got {0}")]
    NonPositiveDepth(f64),
    #[error("degenerate correspondences: {0}")]
    Degenerate(String),
    #[error("not a rotation matrix: {0}")]
    NotRotation(String),
    #[error("scale must be > 0, got {0}")]
    BadScale(f64),
    #[error("invalid intrinsics: {0}")]
    BadIntrinsics(String),
    #[error(transparent)]
    Rig(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self, width: usize, height: usize) -> Result<(), CalibrationError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CalibrationError::BadIntrinsics("focal lengths must be > 0".into()));
        }
        if !(self.cx >= 0.0 && self.cy >= 0.0 && self.cx < width as f64 && self.cy < height as f64) {
            return Err(CalibrationError::BadIntrinsics(format!(
                "principal point ({}, {}) outside {width}x{height}",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }
}

/// Pixel plus z-depth to a camera-frame point.
pub fn deproject(pixel: (f64, f64), depth: f64, k: &Intrinsics) -> Result<[f64; 3], CalibrationError> {
    if !(depth > 0.0) {
        return Err(CalibrationError::NonPositiveDepth(depth));
    }
    Ok([
        (pixel.0 - k.cx) * depth / k.fx,
        (pixel.1 - k.cy) * depth / k.fy,
        depth,
    ])
}

/// `p_stage = s·R·p_camera + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    scale: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ROTATION_TOL: f64 = 1e-9;

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, CalibrationError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(CalibrationError::BadScale(scale));
        }
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(orth <= ROTATION_TOL) {
            return Err(CalibrationError::NotRotation(format!("|RᵀR - I| = {orth:e}")));
        }
        let det = rotation.determinant();
        if !((det - 1.0).abs() <= ROTATION_TOL) {
            return Err(CalibrationError::NotRotation(format!("det = {det}")));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.scale * (self.rotation * Vector3::from(p)) + self.translation;
        [q.x, q.y, q.z]
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    /// Homogeneous 4×4 matrix, row-major.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let sr = self.rotation * self.scale;
        let t = self.translation;
        [
            [sr[(0, 0)], sr[(0, 1)], sr[(0, 2)], t.x],
            [sr[(1, 0)], sr[(1, 1)], sr[(1, 2)], t.y],
            [sr[(2, 0)], sr[(2, 1)], sr[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// Largest absolute difference of the homogeneous matrices.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let (a, b) = (self.to_matrix(), other.to_matrix());
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// Persisted form: rotation row-major, translation, scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformDoc {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub scale: f64,
}

impl From<&SimilarityTransform> for TransformDoc {
    fn from(t: &SimilarityTransform) -> Self {
        let r = &t.rotation;
        Self {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
            scale: t.scale,
        }
    }
}

impl TryFrom<&TransformDoc> for SimilarityTransform {
    type Error = CalibrationError;

    fn try_from(d: &TransformDoc) -> Result<Self, Self::Error> {
        // Re-orthonormalize away the text round-off before validating.
        let r = Matrix3::from_row_slice(&d.rotation);
        let svd = r.svd(true, true);
        let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
        let r = u * vt;
        Self::new(d.scale, r, Vector3::from(d.translation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub camera: [f64; 3],
    pub stage: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
    pub z_levels: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean: f64,
    pub sd: f64,
    pub max: f64,
}

impl ResidualStats {
    pub fn from_residuals(r: &[f64]) -> Self {
        let n = r.len().max(1) as f64;
        let mean = r.iter().sum::<f64>() / n;
        let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            sd: var.sqrt(),
            max: r.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityFit {
    pub transform: SimilarityTransform,
    /// Per-pair Euclidean distance `|T·p_camera - p_stage|`, mm.
    pub residuals: Vec<f64>,
    pub stats: ResidualStats,
}

/// Least-squares uniform-scale rigid fit camera → stage.
pub fn fit_similarity(set: &CorrespondenceSet) -> Result<SimilarityFit, CalibrationError> {
    let n = set.pairs.len();
    if n < 3 {
        return Err(CalibrationError::Degenerate(format!("{n} pairs, need at least 3")));
    }
    let nf = n as f64;
    let cam: Vec<Vector3<f64>> = set.pairs.iter().map(|p| Vector3::from(p.camera)).collect();
    let stage: Vec<Vector3<f64>> = set.pairs.iter().map(|p| Vector3::from(p.stage)).collect();
    let mu_c = cam.iter().sum::<Vector3<f64>>() / nf;
    let mu_s = stage.iter().sum::<Vector3<f64>>() / nf;

    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_c = 0.0;
    for (c, s) in cam.iter().zip(&stage) {
        let (dc, ds) = (c - mu_c, s - mu_s);
        cov += ds * dc.transpose();
        scatter += dc * dc.transpose();
        var_c += dc.norm_squared();
    }
    cov /= nf;
    var_c /= nf;

    // Collinear or coincident camera points leave the rotation about the
    // line undetermined.
    let mut ev: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= ev[0] * 1e-12 {
        return Err(CalibrationError::Degenerate(
            "camera points are coincident or collinear".into(),
        ));
    }

    fit_sorted(&cov, mu_c, mu_s, var_c, &cam, &stage)
}

/// SVD with singular values in descending order so the determinant
/// correction always lands on the weakest axis.
fn fit_sorted(
    cov: &Matrix3<f64>,
    mu_c: Vector3<f64>,
    mu_s: Vector3<f64>,
    var_c: f64,
    cam: &[Vector3<f64>],
    stage: &[Vector3<f64>],
) -> Result<SimilarityFit, CalibrationError> {
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = Matrix3::from_columns(&[u.column(order[0]), u.column(order[1]), u.column(order[2])]);
    let vt = Matrix3::from_rows(&[vt.row(order[0]), vt.row(order[1]), vt.row(order[2])]);
    let sv = Vector3::new(
        svd.singular_values[order[0]],
        svd.singular_values[order[1]],
        svd.singular_values[order[2]],
    );
    let d = (u * vt).determinant().signum();
    let rotation = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt;
    let scale = (sv[0] + sv[1] + d * sv[2]) / var_c;
    let translation = mu_s - scale * (rotation * mu_c);
    finish(scale, rotation, translation, cam, stage)
}

fn finish(
    scale: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    cam: &[Vector3<f64>],
    stage: &[Vector3<f64>],
) -> Result<SimilarityFit, CalibrationError> {
    let transform = SimilarityTransform::new(scale, rotation, translation)?;
    let residuals: Vec<f64> = cam
        .iter()
        .zip(stage)
        .map(|(c, s)| (Vector3::from(transform.apply([c.x, c.y, c.z])) - s).norm())
        .collect();
    let stats = ResidualStats::from_residuals(&residuals);
    Ok(SimilarityFit {
        transform,
        residuals,
        stats,
    })
}

/// Minimum green level and green dominance for a laser pixel.
const LASER_GREEN_MIN: u8 = 200;
const LASER_DOMINANCE_MIN: i32 = 100;
/// Pixels around the detected blob that still count towards the centroid,
/// so the faint rim of the spot is not clipped away.
const SPOT_MARGIN: usize = 3;

fn dominance(c: [u8; 3]) -> i32 {
    c[1] as i32 - c[0].max(c[2]) as i32
}

fn is_laser(c: [u8; 3]) -> bool {
    c[1] >= LASER_GREEN_MIN && dominance(c) >= LASER_DOMINANCE_MIN
}

/// Sub-pixel centre of the laser spot.
///
/// The largest 4-connected blob of green-dominant pixels locates the spot;
/// the centroid is then taken over a margin around it, weighting each pixel
/// by its green dominance above the window's background level.
pub fn segment_laser_centroid(frame: &CameraFrame) -> Result<(f64, f64), CalibrationError> {
    let (w, h) = (frame.width, frame.height);
    let mut label = vec![false; w * h];
    // (pixel count, bbox)
    let mut blobs: Vec<(usize, [usize; 4])> = Vec::new();
    let mut stack = Vec::new();
    for (start, c) in frame.rgb.chunks_exact(3).enumerate() {
        if c[1] < LASER_GREEN_MIN || label[start] || !is_laser([c[0], c[1], c[2]]) {
            continue;
        }
        label[start] = true;
        stack.push(start);
        let mut count = 0usize;
        let mut bbox = [usize::MAX, usize::MAX, 0, 0];
        while let Some(i) = stack.pop() {
            let (u, v) = (i % w, i / w);
            count += 1;
            bbox = [bbox[0].min(u), bbox[1].min(v), bbox[2].max(u), bbox[3].max(v)];
            let mut visit = |j: usize| {
                if !label[j] && is_laser(frame.rgb_at(j % w, j / w)) {
                    label[j] = true;
                    stack.push(j);
                }
            };
            if u > 0 {
                visit(i - 1);
            }
            if u + 1 < w {
                visit(i + 1);
            }
            if v > 0 {
                visit(i - w);
            }
            if v + 1 < h {
                visit(i + w);
            }
        }
        blobs.push((count, bbox));
    }
    let largest = blobs.iter().map(|b| b.0).max().ok_or(CalibrationError::NoBlob)?;
    let winners: Vec<_> = blobs.iter().filter(|b| b.0 == largest).collect();
    if winners.len() > 1 {
        return Err(CalibrationError::AmbiguousBlob(winners.len()));
    }
    let bbox = winners[0].1;
    let u0 = bbox[0].saturating_sub(SPOT_MARGIN);
    let v0 = bbox[1].saturating_sub(SPOT_MARGIN);
    let u1 = (bbox[2] + SPOT_MARGIN).min(w - 1);
    let v1 = (bbox[3] + SPOT_MARGIN).min(h - 1);
    let mut background = i32::MAX;
    for v in v0..=v1 {
        for u in u0..=u1 {
            background = background.min(dominance(frame.rgb_at(u, v)));
        }
    }
    let (mut m0, mut mu, mut mv) = (0.0, 0.0, 0.0);
    for v in v0..=v1 {
        for u in u0..=u1 {
            let wt = (dominance(frame.rgb_at(u, v)) - background) as f64;
            m0 += wt;
            mu += wt * u as f64;
            mv += wt * v as f64;
        }
    }
    Ok((mu / m0, mv / m0))
}

/// How a laser spot's pixel is obtained during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpotLocalization {
    /// Render a frame and segment the spot; depth read from the depth map.
    Segmented,
    /// Use the rig's reported spot pixel and depth reading directly.
    Reported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub z_levels: Vec<f64>,
    pub localization: SpotLocalization,
}

impl Default for CalibrationPlan {
    fn default() -> Self {
        Self {
            x_range: (60.0, 140.0),
            y_range: (60.0, 140.0),
            nx: 3,
            ny: 3,
            z_levels: vec![0.0, 15.0, 30.0],
            localization: SpotLocalization::Segmented,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub fit: SimilarityFit,
    pub correspondences: CorrespondenceSet,
}

fn linspace(range: (f64, f64), n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![(range.0 + range.1) / 2.0];
    }
    (0..n)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Drive the rig over the grid at every Z level, localize the laser,
/// deproject, and fit.
pub fn run_calibration(sim: &mut RigSim, plan: &CalibrationPlan) -> Result<CalibrationResult, CalibrationError> {
    let k = sim.camera().intrinsics;
    let mut set = CorrespondenceSet {
        pairs: Vec::new(),
        z_levels: plan.z_levels.clone(),
    };
    for &z in &plan.z_levels {
        sim.move_z(z)?;
        for y in linspace(plan.y_range, plan.ny) {
            for x in linspace(plan.x_range, plan.nx) {
                sim.move_to(x, y)?;
                let spot = sim.project_laser()?;
                let (pixel, depth) = match plan.localization {
                    SpotLocalization::Reported => ((spot.u, spot.v), spot.depth),
                    SpotLocalization::Segmented => {
                        let frame = sim.render_frame();
                        let px = segment_laser_centroid(&frame)?;
                        let depth = frame.depth_at(px.0, px.1).ok_or(CalibrationError::NonPositiveDepth(0.0))?;
                        (px, depth)
                    }
                };
                set.pairs.push(Correspondence {
                    camera: deproject(pixel, depth, &k)?,
                    stage: [x, y, z],
                });
            }
        }
    }
    let fit = fit_similarity(&set)?;
    Ok(CalibrationResult {
        fit,
        correspondences: set,
    })
}
