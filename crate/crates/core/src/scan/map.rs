use std::collections::HashMap;
use std::f64::consts::PI;

use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use super::{Pattern, Provenance, ScanError, ScanPlan};

const MAX_CELLS_PER_SIDE: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSample {
    pub x: f64,
    pub y: f64,
    pub probs: Vec<f64>,
}

/// Regular stage-frame grid; cell `(row, col)` is centred at
/// `(x_min + (col + ½)·res, y_min + (row + ½)·res)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapGrid {
    pub x_min: f64,
    pub y_min: f64,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
}

impl MapGrid {
    fn covering(x0: f64, x1: f64, y0: f64, y1: f64, resolution: f64) -> Self {
        let cells = |span: f64| ((span / resolution).ceil() as usize).clamp(1, MAX_CELLS_PER_SIDE);
        Self {
            x_min: x0,
            y_min: y0,
            resolution,
            width: cells(x1 - x0),
            height: cells(y1 - y0),
        }
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_min + (col as f64 + 0.5) * self.resolution,
            self.y_min + (row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + self.width as f64 * self.resolution
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + self.height as f64 * self.resolution
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMap {
    pub pattern: Pattern,
    pub class_names: Vec<String>,
    pub samples: Vec<MapSample>,
    pub grid: MapGrid,
    /// One layer per class, row-major; `None` where undefined.
    pub layers: Vec<Vec<Option<f64>>>,
}

/// Polar lattice of spoke samples.
struct PolarLattice {
    center: [f64; 2],
    n_spokes: usize,
    step: f64,
    max_ring: usize,
    nodes: HashMap<(usize, usize), Vec<f64>>,
}

impl PolarLattice {
    fn node(&self, ring: usize, spoke: usize) -> Option<&Vec<f64>> {
        if ring == 0 {
            self.nodes.get(&(0, 0))
        } else {
            self.nodes.get(&(ring, spoke % self.n_spokes))
        }
    }

    /// Bilinear in (ring, angle) with angular wraparound; missing nodes are
    /// dropped and the remaining weights renormalized.
    fn value_at(&self, x: f64, y: f64) -> Option<Vec<f64>> {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let rho = dx.hypot(dy) / self.step;
        if rho > self.max_ring as f64 + 1e-9 {
            return None;
        }
        let i0 = (rho.floor() as usize).min(self.max_ring);
        let t = (rho - i0 as f64).clamp(0.0, 1.0);
        let sector = 2.0 * PI / self.n_spokes as f64;
        let phi = dy.atan2(dx).rem_euclid(2.0 * PI) / sector;
        let j0 = (phi.floor() as usize) % self.n_spokes;
        let u = (phi - phi.floor()).clamp(0.0, 1.0);
        let j1 = (j0 + 1) % self.n_spokes;
        let corners = [
            (i0, j0, (1.0 - t) * (1.0 - u)),
            (i0, j1, (1.0 - t) * u),
            (i0 + 1, j0, t * (1.0 - u)),
            (i0 + 1, j1, t * u),
        ];
        blend(corners.iter().filter_map(|&(i, j, w)| self.node(i, j).map(|v| (v, w))))
    }
}

fn blend<'a>(items: impl Iterator<Item = (&'a Vec<f64>, f64)>) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut wsum = 0.0;
    for (v, w) in items {
        if w <= 0.0 {
            continue;
        }
        let a = acc.get_or_insert_with(|| vec![0.0; v.len()]);
        for (x, p) in a.iter_mut().zip(v) {
            *x += w * p;
        }
        wsum += w;
    }
    let mut a = acc?;
    if wsum <= 1e-12 {
        return None;
    }
    a.iter_mut().for_each(|x| *x /= wsum);
    let s: f64 = a.iter().sum();
    if s > 0.0 {
        a.iter_mut().for_each(|x| *x = (*x / s).clamp(0.0, 1.0));
    }
    Some(a)
}

/// Inverse-distance weighting (power 2) within `radius`.
pub fn idw_at(samples: &[MapSample], x: f64, y: f64, radius: f64) -> Option<Vec<f64>> {
    let mut near = Vec::new();
    for s in samples {
        let d = (s.x - x).hypot(s.y - y);
        if d < 1e-12 {
            return blend(std::iter::once((&s.probs, 1.0)));
        }
        if d <= radius {
            near.push((&s.probs, 1.0 / (d * d)));
        }
    }
    blend(near.into_iter())
}

/// Interpolate per-point class probabilities over the plan's footprint.
/// `probs[i]` belongs to `plan.points[i]`; `None` marks a point without a
/// classification.
pub fn build_probability_map(
    plan: &ScanPlan,
    probs: &[Option<Vec<f64>>],
    class_names: Vec<String>,
    resolution: f64,
) -> Result<ProbabilityMap, ScanError> {
    if !(resolution > 0.0) {
        return Err(ScanError::BadParams(format!("resolution must be > 0, got {resolution}")));
    }
    let samples: Vec<MapSample> = plan
        .points
        .iter()
        .zip(probs)
        .filter_map(|(p, pr)| {
            pr.as_ref().map(|v| MapSample {
                x: p[0],
                y: p[1],
                probs: v.clone(),
            })
        })
        .collect();
    if samples.is_empty() {
        return Err(ScanError::Empty);
    }
    let eval: Box<dyn Fn(f64, f64) -> Option<Vec<f64>>>;
    let grid;
    match &plan.provenance {
        Provenance::Spokes {
            center,
            n_spokes,
            step,
            nodes,
            ..
        } => {
            let mut lattice = PolarLattice {
                center: *center,
                n_spokes: *n_spokes,
                step: *step,
                max_ring: 0,
                nodes: HashMap::new(),
            };
            for ((&node, _), pr) in nodes.iter().zip(&plan.points).zip(probs) {
                if let Some(v) = pr {
                    lattice.nodes.insert(node, v.clone());
                    lattice.max_ring = lattice.max_ring.max(node.0);
                }
            }
            let r = (lattice.max_ring as f64 * step).max(resolution / 2.0);
            grid = MapGrid::covering(center[0] - r, center[0] + r, center[1] - r, center[1] + r, resolution);
            eval = Box::new(move |x, y| lattice.value_at(x, y));
        }
        _ => {
            let radius = 2.0 * plan.spacing().max(resolution / 2.0);
            let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            for s in &samples {
                x0 = x0.min(s.x);
                x1 = x1.max(s.x);
                y0 = y0.min(s.y);
                y1 = y1.max(s.y);
            }
            grid = MapGrid::covering(x0 - radius, x1 + radius, y0 - radius, y1 + radius, resolution);
            let s2 = samples.clone();
            eval = Box::new(move |x, y| idw_at(&s2, x, y, radius));
        }
    }
    let n_classes = class_names.len();
    let mut layers = vec![vec![None; grid.width * grid.height]; n_classes];
    for row in 0..grid.height {
        for col in 0..grid.width {
            let (x, y) = grid.cell_center(row, col);
            if let Some(v) = eval(x, y) {
                for (c, p) in v.iter().enumerate().take(n_classes) {
                    layers[c][row * grid.width + col] = Some(*p);
                }
            }
        }
    }
    Ok(ProbabilityMap {
        pattern: plan.pattern,
        class_names,
        samples,
        grid,
        layers,
    })
}

pub const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

fn ramp(p: f64) -> [u8; 3] {
    // dark blue → yellow
    let p = p.clamp(0.0, 1.0);
    [(255.0 * p) as u8, (40.0 + 180.0 * p) as u8, (160.0 * (1.0 - p)) as u8]
}

impl ProbabilityMap {
    pub fn value(&self, class: usize, row: usize, col: usize) -> Option<f64> {
        self.layers[class][row * self.grid.width + col]
    }

    fn image(&self, color: impl Fn(usize) -> Option<[u8; 3]>) -> RgbaImage {
        let g = &self.grid;
        let mut img = RgbaImage::new(g.width as u32, g.height as u32);
        for row in 0..g.height {
            for col in 0..g.width {
                // north-up: image row 0 is the largest y
                let px = match color(row * g.width + col) {
                    Some(c) => Rgba([c[0], c[1], c[2], 255]),
                    None => Rgba([0, 0, 0, 0]),
                };
                img.put_pixel(col as u32, (g.height - 1 - row) as u32, px);
            }
        }
        img
    }

    /// Class colours mixed by probability; undefined cells transparent.
    pub fn render_blend(&self) -> RgbaImage {
        self.image(|i| {
            self.layers[0][i]?;
            let mut c = [0.0; 3];
            for (k, layer) in self.layers.iter().enumerate() {
                let p = layer[i].unwrap_or(0.0);
                for (ch, pal) in c.iter_mut().zip(PALETTE[k % PALETTE.len()]) {
                    *ch += p * pal as f64;
                }
            }
            Some([c[0].round() as u8, c[1].round() as u8, c[2].round() as u8])
        })
    }

    /// Single-class probability heatmap.
    pub fn render_layer(&self, class: usize) -> RgbaImage {
        self.image(|i| self.layers[class][i].map(ramp))
    }

    /// Sidecar describing where the PNG sits in the stage frame.
    pub fn georeference(&self) -> serde_json::Value {
        let g = &self.grid;
        serde_json::json!({
            "frame": "stage",
            "units": "mm",
            "x_min": g.x_min,
            "x_max": g.x_max(),
            "y_min": g.y_min,
            "y_max": g.y_max(),
            "resolution": g.resolution,
            "width": g.width,
            "height": g.height,
            "image_row0": "y_max",
            "class_names": self.class_names,
            "pattern": self.pattern,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::raster_plan;
    use crate::sim::TravelLimits;

    fn spoke_plan_manual(n_spokes: usize, rings: usize) -> ScanPlan {
        let mut points = vec![[50.0, 50.0]];
        let mut nodes = vec![(0, 0)];
        for j in 0..n_spokes {
            let th = 2.0 * PI * j as f64 / n_spokes as f64;
            for i in 1..=rings {
                points.push([50.0 + i as f64 * th.cos(), 50.0 + i as f64 * th.sin()]);
                nodes.push((i, j));
            }
        }
        ScanPlan {
            pattern: Pattern::Spokes,
            points,
            provenance: Provenance::Spokes {
                roi: vec![],
                center: [50.0, 50.0],
                n_spokes,
                step: 1.0,
                max_radius: rings as f64,
                nodes,
            },
        }
    }

    #[test]
    fn constant_field_is_uniform() {
        let plan = raster_plan([10.0, 10.0], 5, 5, 1.0, &TravelLimits::default()).unwrap();
        let probs = vec![Some(vec![1.0, 0.0]); 25];
        let m = build_probability_map(&plan, &probs, vec!["a".into(), "b".into()], 0.25).unwrap();
        for v in m.layers[0].iter().flatten() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(m.layers[0].iter().any(Option::is_none));
    }

    #[test]
    fn single_sample_disk() {
        let plan = raster_plan([10.0, 10.0], 1, 1, 1.0, &TravelLimits::default()).unwrap();
        let m = build_probability_map(&plan, &[Some(vec![0.3, 0.7])], vec!["a".into(), "b".into()], 0.1).unwrap();
        for row in 0..m.grid.height {
            for col in 0..m.grid.width {
                let (x, y) = m.grid.cell_center(row, col);
                let d = (x - 10.0).hypot(y - 10.0);
                let v = m.value(1, row, col);
                if d <= 2.0 - 1e-9 {
                    assert!((v.unwrap() - 0.7).abs() < 1e-12);
                } else if d > 2.0 + 1e-9 {
                    assert!(v.is_none());
                }
            }
        }
    }

    #[test]
    fn concentric_rings_decay_radially() {
        let plan = spoke_plan_manual(8, 2);
        let Provenance::Spokes { nodes, .. } = &plan.provenance else {
            unreachable!()
        };
        let probs: Vec<Option<Vec<f64>>> = nodes
            .iter()
            .map(|&(i, _)| Some(if i <= 1 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }))
            .collect();
        let m = build_probability_map(&plan, &probs, vec!["in".into(), "out".into()], 0.05).unwrap();
        let lattice_value = |r: f64, th: f64| {
            let (x, y) = (50.0 + r * th.cos(), 50.0 + r * th.sin());
            idx(&m, x, y)
        };
        for th in [0.0, 0.3, 1.0, 2.5, 5.9] {
            let mid = lattice_value(1.5, th).unwrap();
            assert!((mid - 0.5).abs() < 0.05, "theta {th}: {mid}");
            let mut last = 1.0 + 1e-9;
            for k in 0..10 {
                let v = lattice_value(1.0 + k as f64 * 0.1, th).unwrap();
                assert!(v <= last + 0.02);
                last = v;
            }
        }
    }

    fn idx(m: &ProbabilityMap, x: f64, y: f64) -> Option<f64> {
        let col = ((x - m.grid.x_min) / m.grid.resolution).floor() as usize;
        let row = ((y - m.grid.y_min) / m.grid.resolution).floor() as usize;
        m.value(0, row, col)
    }

    #[test]
    fn png_alpha_and_sidecar() {
        let plan = raster_plan([10.0, 10.0], 3, 1, 1.0, &TravelLimits::default()).unwrap();
        let probs = vec![Some(vec![1.0, 0.0]), None, Some(vec![0.0, 1.0])];
        let m = build_probability_map(&plan, &probs, vec!["a".into(), "b".into()], 0.5).unwrap();
        let img = m.render_blend();
        assert_eq!(img.width() as usize, m.grid.width);
        assert!(img.pixels().any(|p| p[3] == 0));
        assert!(img.pixels().any(|p| p[3] == 255));
        let geo = m.georeference();
        assert_eq!(geo["width"], m.grid.width);
        assert!(build_probability_map(&plan, &[None, None, None], vec!["a".into()], 0.5).is_err());
    }
}
