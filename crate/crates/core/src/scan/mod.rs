//! Probe-point plans and interpolated probability maps.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{deproject, Intrinsics, SimilarityTransform};
use crate::sim::TravelLimits;

pub mod map;

pub use map::{build_probability_map, MapGrid, MapSample, ProbabilityMap};

#[derive(Debug, Error, PartialEq)]
pub enum ScanError {
    #[error("point {index} ({x:.3}, {y:.3}) is outside the stage travel")]
    OutOfLimits { index: usize, x: f64, y: f64 },
    #[error("invalid plan parameters: {0}")]
    BadParams(String),
    #[error("invalid region of interest: {0}")]
    BadRoi(String),
    #[error("no valid depth at pixel ({u:.1}, {v:.1})")]
    NoDepth { u: f64, v: f64 },
    #[error("spoke {spoke} lies entirely outside the stage travel")]
    SpokeOutOfLimits { spoke: usize },
    #[error("polyline has zero length")]
    ZeroLength,
    #[error("no samples")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pattern {
    Raster,
    Spokes,
    Polyline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Provenance {
    Raster {
        origin: [f64; 2],
        nx: usize,
        ny: usize,
        step: f64,
    },
    Spokes {
        roi: Vec<[f64; 2]>,
        center: [f64; 2],
        n_spokes: usize,
        step: f64,
        max_radius: f64,
        /// `(ring, spoke)` lattice node of every plan point; ring 0 is the centre.
        nodes: Vec<(usize, usize)>,
    },
    Polyline {
        vertices_px: Vec<[f64; 2]>,
        vertices: Vec<[f64; 2]>,
        /// Actual arc-length spacing after rounding to a whole number of segments.
        spacing: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub pattern: Pattern,
    pub points: Vec<[f64; 2]>,
    pub provenance: Provenance,
}

impl ScanPlan {
    /// Sample spacing used for interpolation.
    pub fn spacing(&self) -> f64 {
        match &self.provenance {
            Provenance::Raster { step, .. } | Provenance::Spokes { step, .. } => *step,
            Provenance::Polyline { spacing, .. } => *spacing,
        }
    }

    pub fn travel(&self) -> f64 {
        path_length(&self.points)
    }

    pub fn check_limits(&self, limits: &TravelLimits) -> Result<(), ScanError> {
        for (index, p) in self.points.iter().enumerate() {
            if !limits.contains_xy(p[0], p[1]) {
                return Err(ScanError::OutOfLimits { index, x: p[0], y: p[1] });
            }
        }
        Ok(())
    }
}

pub fn path_length(pts: &[[f64; 2]]) -> f64 {
    pts.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum()
}

/// Serpentine grid: even rows left to right, odd rows right to left.
pub fn raster_plan(origin: [f64; 2], nx: usize, ny: usize, step: f64, limits: &TravelLimits) -> Result<ScanPlan, ScanError> {
    if nx == 0 || ny == 0 {
        return Err(ScanError::BadParams("grid must be at least 1x1".into()));
    }
    if !(step > 0.0) && nx * ny > 1 {
        return Err(ScanError::BadParams(format!("step must be > 0, got {step}")));
    }
    let mut points = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for k in 0..nx {
            let i = if j % 2 == 0 { k } else { nx - 1 - k };
            points.push([origin[0] + i as f64 * step, origin[1] + j as f64 * step]);
        }
    }
    let plan = ScanPlan {
        pattern: Pattern::Raster,
        points,
        provenance: Provenance::Raster { origin, nx, ny, step },
    };
    plan.check_limits(limits)?;
    Ok(plan)
}

/// Region of interest drawn in the camera image, pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiPolygon {
    pub vertices: Vec<[f64; 2]>,
}

fn signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

fn segments_cross(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let (d1, d2) = (orient(q1, q2, p1), orient(q1, q2, p2));
    let (d3, d4) = (orient(p1, p2, q1), orient(p1, p2, q2));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

impl RoiPolygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, ScanError> {
        let roi = Self { vertices };
        roi.validate()?;
        Ok(roi)
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        let v = &self.vertices;
        let n = v.len();
        if n < 3 {
            return Err(ScanError::BadRoi(format!("{n} vertices, need at least 3")));
        }
        if v.iter().flatten().any(|c| !c.is_finite()) {
            return Err(ScanError::BadRoi("non-finite vertex".into()));
        }
        if signed_area(v).abs() < 1e-9 {
            return Err(ScanError::BadRoi("zero area".into()));
        }
        for i in 0..n {
            for j in i + 1..n {
                // adjacent edges share a vertex
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                    return Err(ScanError::BadRoi(format!("edges {i} and {j} cross")));
                }
            }
        }
        Ok(())
    }

    /// Area centroid.
    pub fn centroid(&self) -> [f64; 2] {
        let v = &self.vertices;
        let n = v.len();
        let a = signed_area(v);
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..n {
            let (p, q) = (v[i], v[(i + 1) % n]);
            let cross = p[0] * q[1] - q[0] * p[1];
            cx += (p[0] + q[0]) * cross;
            cy += (p[1] + q[1]) * cross;
        }
        [cx / (6.0 * a), cy / (6.0 * a)]
    }
}

/// Pixel plus depth lookup to stage coordinates.
pub struct PixelMapper<'a> {
    pub intrinsics: Intrinsics,
    pub transform: &'a SimilarityTransform,
    pub depth: &'a dyn Fn(f64, f64) -> Option<f64>,
}

impl PixelMapper<'_> {
    pub fn depth_at(&self, px: [f64; 2]) -> Result<f64, ScanError> {
        (self.depth)(px[0], px[1])
            .filter(|d| *d > 0.0)
            .ok_or(ScanError::NoDepth { u: px[0], v: px[1] })
    }

    pub fn to_stage_with_depth(&self, px: [f64; 2], depth: f64) -> [f64; 3] {
        let cam = deproject((px[0], px[1]), depth, &self.intrinsics).expect("depth checked positive");
        self.transform.apply(cam)
    }

    pub fn to_stage(&self, px: [f64; 2]) -> Result<[f64; 3], ScanError> {
        Ok(self.to_stage_with_depth(px, self.depth_at(px)?))
    }
}

/// Distance from `c` along `dir` to the nearest polygon edge, if any.
fn ray_exit(c: [f64; 2], dir: [f64; 2], poly: &[[f64; 2]]) -> Option<f64> {
    let n = poly.len();
    let mut best: Option<f64> = None;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let e = [b[0] - a[0], b[1] - a[1]];
        let den = dir[0] * e[1] - dir[1] * e[0];
        if den.abs() < 1e-15 {
            continue;
        }
        let w = [a[0] - c[0], a[1] - c[1]];
        let t = (w[0] * e[1] - w[1] * e[0]) / den;
        let s = (w[0] * dir[1] - w[1] * dir[0]) / den;
        if t > 1e-12 && (-1e-12..=1.0 + 1e-12).contains(&s) {
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpokeParams {
    pub n_spokes: usize,
    pub step: f64,
    pub max_radius: f64,
}

impl Default for SpokeParams {
    fn default() -> Self {
        Self {
            n_spokes: 8,
            step: 1.0,
            max_radius: 10.0,
        }
    }
}

/// Centre plus rays outward from the ROI centroid, spoke by spoke.
///
/// The ROI outline is mapped to the stage assuming it lies at the centroid's
/// depth; each spoke stops at `max_radius` or one step past the outline,
/// whichever comes first.
pub fn spoke_plan(roi: &RoiPolygon, mapper: &PixelMapper, params: SpokeParams, limits: &TravelLimits) -> Result<ScanPlan, ScanError> {
    roi.validate()?;
    let SpokeParams {
        n_spokes,
        step,
        max_radius,
    } = params;
    if n_spokes == 0 || !(step > 0.0) || !(max_radius >= step) {
        return Err(ScanError::BadParams(format!(
            "need n_spokes >= 1 and 0 < step <= max_radius (got {n_spokes}, {step}, {max_radius})"
        )));
    }
    let c_px = roi.centroid();
    let depth = mapper.depth_at(c_px)?;
    let c3 = mapper.to_stage_with_depth(c_px, depth);
    let center = [c3[0], c3[1]];
    let outline: Vec<[f64; 2]> = roi
        .vertices
        .iter()
        .map(|&v| {
            let p = mapper.to_stage_with_depth(v, depth);
            [p[0], p[1]]
        })
        .collect();
    if !limits.contains_xy(center[0], center[1]) {
        return Err(ScanError::OutOfLimits {
            index: 0,
            x: center[0],
            y: center[1],
        });
    }
    let mut points = vec![center];
    let mut nodes = vec![(0, 0)];
    let n_max = (max_radius / step + 1e-9).floor() as usize;
    for j in 0..n_spokes {
        let theta = 2.0 * PI * j as f64 / n_spokes as f64;
        let dir = [theta.cos(), theta.sin()];
        let reach = ray_exit(center, dir, &outline).map_or(max_radius, |b| max_radius.min(b + step));
        let mut kept = 0;
        let mut total = 0;
        for i in 1..=n_max {
            let r = i as f64 * step;
            if r > reach + 1e-9 {
                break;
            }
            total += 1;
            let p = [center[0] + r * dir[0], center[1] + r * dir[1]];
            if limits.contains_xy(p[0], p[1]) {
                points.push(p);
                nodes.push((i, j));
                kept += 1;
            }
        }
        if total > 0 && kept == 0 {
            return Err(ScanError::SpokeOutOfLimits { spoke: j });
        }
    }
    Ok(ScanPlan {
        pattern: Pattern::Spokes,
        points,
        provenance: Provenance::Spokes {
            roi: roi.vertices.clone(),
            center,
            n_spokes,
            step,
            max_radius,
            nodes,
        },
    })
}

/// Uniform arc-length samples along a stage-frame polyline, endpoints kept.
pub fn resample_polyline(vertices: &[[f64; 2]], spacing: f64) -> Result<(Vec<[f64; 2]>, f64), ScanError> {
    if vertices.len() < 2 {
        return Err(ScanError::BadParams("polyline needs at least 2 vertices".into()));
    }
    if !(spacing > 0.0) {
        return Err(ScanError::BadParams(format!("spacing must be > 0, got {spacing}")));
    }
    let total = path_length(vertices);
    if !(total > 1e-12) {
        return Err(ScanError::ZeroLength);
    }
    let n_seg = ((total / spacing) - 1e-9).ceil().max(1.0) as usize;
    let delta = total / n_seg as f64;
    let mut cum = vec![0.0];
    for w in vertices.windows(2) {
        cum.push(cum.last().unwrap() + (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
    }
    let mut out = Vec::with_capacity(n_seg + 1);
    let mut seg = 0;
    for k in 0..=n_seg {
        let s = if k == n_seg { total } else { k as f64 * delta };
        while seg + 1 < vertices.len() - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (vertices[seg], vertices[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    Ok((out, delta))
}

pub fn polyline_plan(vertices_px: &[[f64; 2]], mapper: &PixelMapper, spacing: f64, limits: &TravelLimits) -> Result<ScanPlan, ScanError> {
    if vertices_px.len() < 2 {
        return Err(ScanError::BadParams("polyline needs at least 2 vertices".into()));
    }
    let vertices = vertices_px
        .iter()
        .map(|&v| mapper.to_stage(v).map(|p| [p[0], p[1]]))
        .collect::<Result<Vec<_>, _>>()?;
    let (points, delta) = resample_polyline(&vertices, spacing)?;
    let plan = ScanPlan {
        pattern: Pattern::Polyline,
        points,
        provenance: Provenance::Polyline {
            vertices_px: vertices_px.to_vec(),
            vertices,
            spacing: delta,
        },
    };
    plan.check_limits(limits)?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limits() -> TravelLimits {
        TravelLimits::default()
    }

    #[test]
    fn raster_examples() {
        let p = raster_plan([0.0, 0.0], 10, 10, 1.0, &limits()).unwrap();
        assert_eq!(p.points.len(), 100);
        let xs: Vec<f64> = p.points.iter().map(|q| q[0]).collect();
        assert_eq!(xs.iter().cloned().fold(0.0, f64::max), 9.0);
        let p = raster_plan([0.0, 0.0], 2, 2, 1.0, &limits()).unwrap();
        assert_eq!(p.points, vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        assert_eq!(raster_plan([5.0, 5.0], 1, 1, 1.0, &limits()).unwrap().points, vec![[5.0, 5.0]]);
        assert_eq!(
            raster_plan([195.0, 0.0], 10, 1, 1.0, &limits()),
            Err(ScanError::OutOfLimits { index: 6, x: 201.0, y: 0.0 })
        );
    }

    #[test]
    fn roi_validation_and_centroid() {
        let sq = RoiPolygon::new(vec![[0.0, 0.0], [4.0, 0.0], [4.0, 2.0], [0.0, 2.0]]).unwrap();
        assert_eq!(sq.centroid(), [2.0, 1.0]);
        assert!(RoiPolygon::new(vec![[0.0, 0.0], [1.0, 1.0]]).is_err());
        assert!(RoiPolygon::new(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).is_err());
        let bowtie = vec![[0.0, 0.0], [4.0, 4.0], [4.0, 0.0], [0.0, 1.0]];
        assert!(matches!(RoiPolygon::new(bowtie), Err(ScanError::BadRoi(m)) if m.contains("cross")));
    }

    #[test]
    fn polyline_examples() {
        let (pts, d) = resample_polyline(&[[0.0, 0.0], [10.0, 0.0]], 1.0).unwrap();
        assert_eq!(pts.len(), 11);
        assert_eq!(d, 1.0);
        let (pts, _) = resample_polyline(&[[0.0, 0.0], [5.0, 0.0], [5.0, 5.0]], 1.0).unwrap();
        assert_eq!(pts.len(), 11);
        assert!(pts.contains(&[5.0, 0.0]));
        assert_eq!(*pts.last().unwrap(), [5.0, 5.0]);
        let (pts, _) = resample_polyline(&[[0.0, 0.0], [3.0, 4.0]], 50.0).unwrap();
        assert_eq!(pts, vec![[0.0, 0.0], [3.0, 4.0]]);
        assert_eq!(resample_polyline(&[[1.0, 1.0], [1.0, 1.0]], 1.0), Err(ScanError::ZeroLength));
    }
}
