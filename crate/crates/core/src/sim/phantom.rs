//! Phantom specimens and their text document format.
//!
//! A phantom document is line oriented:
//!
//! ```text
//! format: 1
//! name: quadrants
//! cell_size: 1.0
//! origin: 80.0 80.0
//!
//! material PLA15
//!   stiffness_mean: 30.3875
//!   stiffness_sd: 0.2283
//!   contact_offset: 0.05
//!   surface_height: 10.0
//!   color: 128 128 128
//!   mode: 2900 60 1.0
//! end
//!
//! grid 2 2
//! 0 0
//! 0 0
//! end
//! ```
//!
//! Materials are indexed in definition order. Grid row `r` covers stage
//! `y ∈ [origin.y + r·cell, origin.y + (r+1)·cell)`; column `c` likewise in x.
//! `#` starts a comment.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nyquist reference used when a document is validated without a simulator.
pub const DEFAULT_AUDIO_RATE: f64 = 44_100.0;

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid {field}: {message}")]
    Invariant { field: String, message: String },
    #[error("grid cell (row {row}, col {col}) references material {index}, but only {defined} defined")]
    UnknownMaterial {
        row: usize,
        col: usize,
        index: usize,
        defined: usize,
    },
}

fn invariant(field: impl Into<String>, message: impl Into<String>) -> PhantomError {
    PhantomError::Invariant {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceMode {
    pub frequency_hz: f64,
    /// Exponential decay rate of the envelope, 1/s.
    pub damping: f64,
    pub amplitude: f64,
}

impl ResonanceMode {
    pub const fn new(frequency_hz: f64, damping: f64, amplitude: f64) -> Self {
        Self {
            frequency_hz,
            damping,
            amplitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub name: String,
    /// N/mm
    pub stiffness_mean: f64,
    /// N/mm
    pub stiffness_sd: f64,
    /// Indentation (mm) before the force starts to rise.
    pub contact_offset: f64,
    pub resonance_modes: Vec<ResonanceMode>,
    pub color: [u8; 3],
    /// Height of the top surface above the stage bed, mm.
    pub surface_height: f64,
}

impl MaterialSpec {
    pub fn validate(&self, sample_rate: f64) -> Result<(), PhantomError> {
        let field = |f: &str| format!("{}.{}", self.name, f);
        if self.name.is_empty() || self.name.contains(char::is_whitespace) {
            return Err(invariant("name", format!("{:?} must be a non-empty token", self.name)));
        }
        if !(self.stiffness_mean.is_finite() && self.stiffness_mean > 0.0) {
            return Err(invariant(field("stiffness_mean"), "must be > 0"));
        }
        if !(self.stiffness_sd.is_finite() && self.stiffness_sd >= 0.0) {
            return Err(invariant(field("stiffness_sd"), "must be >= 0"));
        }
        if !(self.contact_offset.is_finite() && self.contact_offset >= 0.0) {
            return Err(invariant(field("contact_offset"), "must be >= 0"));
        }
        if !self.surface_height.is_finite() {
            return Err(invariant(field("surface_height"), "must be finite"));
        }
        if self.resonance_modes.is_empty() {
            return Err(invariant(field("mode"), "at least one resonance mode is required"));
        }
        let nyquist = sample_rate / 2.0;
        for (i, m) in self.resonance_modes.iter().enumerate() {
            if !(m.frequency_hz > 0.0 && m.frequency_hz < nyquist) {
                return Err(invariant(
                    format!("{}.mode[{i}].frequency", self.name),
                    format!("{} Hz outside (0, {nyquist})", m.frequency_hz),
                ));
            }
            if !(m.amplitude.is_finite() && m.amplitude >= 0.0) {
                return Err(invariant(format!("{}.mode[{i}].amplitude", self.name), "must be >= 0"));
            }
            if !(m.damping.is_finite() && m.damping >= 0.0) {
                return Err(invariant(format!("{}.mode[{i}].damping", self.name), "must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Material presets. Stiffness statistics are the measured averages for the
/// 3D-printed and tissue samples; acoustic modes are this simulator's own.
pub mod presets {
    use super::{MaterialSpec, ResonanceMode};

    fn material(
        name: &str,
        stiffness: (f64, f64),
        contact_offset: f64,
        modes: &[ResonanceMode],
        color: [u8; 3],
        surface_height: f64,
    ) -> MaterialSpec {
        MaterialSpec {
            name: name.to_string(),
            stiffness_mean: stiffness.0,
            stiffness_sd: stiffness.1,
            contact_offset,
            resonance_modes: modes.to_vec(),
            color,
            surface_height,
        }
    }

    pub fn pla15() -> MaterialSpec {
        material(
            "PLA15",
            (30.3875, 0.2283),
            0.05,
            &[
                ResonanceMode::new(3400.0, 70.0, 1.0),
                ResonanceMode::new(7300.0, 110.0, 0.6),
                ResonanceMode::new(11800.0, 160.0, 0.3),
            ],
            [128, 128, 128],
            10.0,
        )
    }

    pub fn pla5() -> MaterialSpec {
        material(
            "PLA5",
            (23.7667, 0.2767),
            0.05,
            &[
                ResonanceMode::new(2300.0, 80.0, 1.0),
                ResonanceMode::new(5200.0, 120.0, 0.5),
                ResonanceMode::new(8700.0, 180.0, 0.25),
            ],
            [40, 150, 60],
            10.0,
        )
    }

    pub fn tpu() -> MaterialSpec {
        material(
            "TPU",
            (7.8982, 0.2870),
            0.05,
            &[
                ResonanceMode::new(2150.0, 95.0, 1.0),
                ResonanceMode::new(4900.0, 140.0, 0.5),
                ResonanceMode::new(8300.0, 200.0, 0.2),
            ],
            [25, 25, 25],
            10.0,
        )
    }

    pub fn porcine() -> MaterialSpec {
        material(
            "Porcine",
            (0.3286, 0.0343),
            0.3,
            &[
                ResonanceMode::new(450.0, 40.0, 1.0),
                ResonanceMode::new(1300.0, 70.0, 0.4),
            ],
            [190, 90, 95],
            10.0,
        )
    }

    /// PLA 15%, PLA 5%, TPU, porcine, in that order.
    pub fn reference_materials() -> Vec<MaterialSpec> {
        vec![pla15(), pla5(), tpu(), porcine()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub name: String,
    nx: usize,
    ny: usize,
    /// Row-major, `ny` rows of `nx` material indices.
    grid: Vec<u16>,
    cell_size: f64,
    origin: [f64; 2],
    materials: Vec<MaterialSpec>,
}

impl Phantom {
    pub fn new(
        name: impl Into<String>,
        nx: usize,
        ny: usize,
        grid: Vec<u16>,
        cell_size: f64,
        origin: [f64; 2],
        materials: Vec<MaterialSpec>,
    ) -> Result<Self, PhantomError> {
        let phantom = Self {
            name: name.into(),
            nx,
            ny,
            grid,
            cell_size,
            origin,
            materials,
        };
        phantom.validate(DEFAULT_AUDIO_RATE)?;
        Ok(phantom)
    }

    pub fn validate(&self, sample_rate: f64) -> Result<(), PhantomError> {
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(invariant("cell_size", "must be > 0"));
        }
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(invariant("origin", "must be finite"));
        }
        if self.nx == 0 || self.ny == 0 || self.grid.len() != self.nx * self.ny {
            return Err(invariant(
                "grid",
                format!("{}x{} grid with {} cells", self.nx, self.ny, self.grid.len()),
            ));
        }
        if self.materials.is_empty() {
            return Err(invariant("material", "at least one material is required"));
        }
        for m in &self.materials {
            m.validate(sample_rate)?;
        }
        for (i, &index) in self.grid.iter().enumerate() {
            if index as usize >= self.materials.len() {
                return Err(PhantomError::UnknownMaterial {
                    row: i / self.nx,
                    col: i % self.nx,
                    index: index as usize,
                    defined: self.materials.len(),
                });
            }
        }
        Ok(())
    }

    /// One material covering an `nx × ny` grid.
    pub fn uniform(
        material: MaterialSpec,
        nx: usize,
        ny: usize,
        cell_size: f64,
        origin: [f64; 2],
    ) -> Result<Self, PhantomError> {
        let name = format!("uniform-{}", material.name);
        Self::new(name, nx, ny, vec![0; nx * ny], cell_size, origin, vec![material])
    }

    /// Side-by-side square blocks, one per material, each `block × block` cells.
    pub fn blocks(
        materials: Vec<MaterialSpec>,
        block: usize,
        cell_size: f64,
        origin: [f64; 2],
    ) -> Result<Self, PhantomError> {
        let n = materials.len();
        let cols = (n as f64).sqrt().ceil() as usize;
        let rows = n.div_ceil(cols.max(1));
        let nx = cols * block;
        let ny = rows * block;
        let mut grid = vec![0u16; nx * ny];
        for r in 0..ny {
            for c in 0..nx {
                let b = (r / block) * cols + c / block;
                grid[r * nx + c] = b.min(n - 1) as u16;
            }
        }
        Self::new("blocks", nx, ny, grid, cell_size, origin, materials)
    }

    /// Concentric disks. `radii[i]` is the outer radius of `materials[i]`;
    /// the last material fills the rest of the square `extent × extent` mm
    /// area centred on `center`.
    pub fn concentric(
        materials: Vec<MaterialSpec>,
        radii: &[f64],
        cell_size: f64,
        center: [f64; 2],
        extent: f64,
    ) -> Result<Self, PhantomError> {
        if radii.len() + 1 != materials.len() {
            return Err(invariant(
                "radii",
                format!("{} radii for {} materials", radii.len(), materials.len()),
            ));
        }
        let n = (extent / cell_size).round().max(1.0) as usize;
        let origin = [
            center[0] - n as f64 * cell_size / 2.0,
            center[1] - n as f64 * cell_size / 2.0,
        ];
        let mut grid = vec![0u16; n * n];
        for r in 0..n {
            for c in 0..n {
                let x = origin[0] + (c as f64 + 0.5) * cell_size - center[0];
                let y = origin[1] + (r as f64 + 0.5) * cell_size - center[1];
                let rho = x.hypot(y);
                let m = radii.iter().position(|&rad| rho < rad).unwrap_or(radii.len());
                grid[r * n + c] = m as u16;
            }
        }
        Self::new("concentric", n, n, grid, cell_size, origin, materials)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn materials(&self) -> &[MaterialSpec] {
        &self.materials
    }

    pub fn grid(&self) -> &[u16] {
        &self.grid
    }

    /// Stage-frame centre of cell `(col, row)`.
    pub fn cell_center(&self, col: usize, row: usize) -> [f64; 2] {
        [
            self.origin[0] + (col as f64 + 0.5) * self.cell_size,
            self.origin[1] + (row as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Flat cell index under stage point `(x, y)`, if any.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<usize> {
        let fx = (x - self.origin[0]) / self.cell_size;
        let fy = (y - self.origin[1]) / self.cell_size;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (c, r) = (fx.floor() as usize, fy.floor() as usize);
        (c < self.nx && r < self.ny).then_some(r * self.nx + c)
    }

    pub fn material_index_at(&self, x: f64, y: f64) -> Option<usize> {
        self.cell_at(x, y).map(|i| self.grid[i] as usize)
    }

    pub fn material_at(&self, x: f64, y: f64) -> Option<&MaterialSpec> {
        self.material_index_at(x, y).map(|i| &self.materials[i])
    }

    /// Renders the phantom back into its document form.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format: 1");
        let _ = writeln!(out, "name: {}", self.name);
        let _ = writeln!(out, "cell_size: {}", self.cell_size);
        let _ = writeln!(out, "origin: {} {}", self.origin[0], self.origin[1]);
        for m in &self.materials {
            let _ = writeln!(out, "\nmaterial {}", m.name);
            let _ = writeln!(out, "  stiffness_mean: {}", m.stiffness_mean);
            let _ = writeln!(out, "  stiffness_sd: {}", m.stiffness_sd);
            let _ = writeln!(out, "  contact_offset: {}", m.contact_offset);
            let _ = writeln!(out, "  surface_height: {}", m.surface_height);
            let _ = writeln!(out, "  color: {} {} {}", m.color[0], m.color[1], m.color[2]);
            for mode in &m.resonance_modes {
                let _ = writeln!(
                    out,
                    "  mode: {} {} {}",
                    mode.frequency_hz, mode.damping, mode.amplitude
                );
            }
            let _ = writeln!(out, "end");
        }
        let _ = writeln!(out, "\ngrid {} {}", self.nx, self.ny);
        for row in self.grid.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        let _ = writeln!(out, "end");
        out
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> PhantomError {
    PhantomError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(line: usize, field: &str, s: &str) -> Result<f64, PhantomError> {
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(line, format!("{field}: expected a number, found {s:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{field}: {s:?} is not finite")));
    }
    Ok(v)
}

fn parse_numbers<const N: usize>(line: usize, field: &str, s: &str) -> Result<[f64; N], PhantomError> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    if parts.len() != N {
        return Err(parse_err(
            line,
            format!("{field}: expected {N} values, found {}", parts.len()),
        ));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse_f64(line, field, p)?;
    }
    Ok(out)
}

#[derive(Default)]
struct MaterialDraft {
    name: String,
    line: usize,
    stiffness_mean: Option<f64>,
    stiffness_sd: Option<f64>,
    contact_offset: Option<f64>,
    surface_height: Option<f64>,
    color: Option<[u8; 3]>,
    modes: Vec<ResonanceMode>,
}

impl MaterialDraft {
    fn finish(self) -> Result<MaterialSpec, PhantomError> {
        let need = |v: Option<f64>, f: &str| {
            v.ok_or_else(|| parse_err(self.line, format!("material {}: missing {f}", self.name)))
        };
        Ok(MaterialSpec {
            stiffness_mean: need(self.stiffness_mean, "stiffness_mean")?,
            stiffness_sd: need(self.stiffness_sd, "stiffness_sd")?,
            contact_offset: self.contact_offset.unwrap_or(0.0),
            surface_height: need(self.surface_height, "surface_height")?,
            color: self.color.unwrap_or([200, 200, 200]),
            resonance_modes: self.modes,
            name: self.name,
        })
    }
}

/// Parses and validates a phantom document.
pub fn load_phantom(document: &str) -> Result<Phantom, PhantomError> {
    enum Block {
        Top,
        Material(MaterialDraft),
        Grid { nx: usize, ny: usize, line: usize },
    }

    let mut format = None;
    let mut name = String::from("phantom");
    let mut cell_size = None;
    let mut origin = None;
    let mut materials = Vec::new();
    let mut grid: Vec<u16> = Vec::new();
    let mut dims = None;
    let mut block = Block::Top;

    for (i, raw) in document.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        block = match block {
            Block::Top => {
                if let Some(rest) = line.strip_prefix("material") {
                    let mname = rest.trim();
                    if mname.is_empty() || mname.contains(char::is_whitespace) {
                        return Err(parse_err(ln, "material needs a single-token name"));
                    }
                    Block::Material(MaterialDraft {
                        name: mname.to_string(),
                        line: ln,
                        ..Default::default()
                    })
                } else if let Some(rest) = line.strip_prefix("grid") {
                    let [nx, ny] = parse_numbers::<2>(ln, "grid", rest)?;
                    if nx < 1.0 || ny < 1.0 || nx.fract() != 0.0 || ny.fract() != 0.0 {
                        return Err(parse_err(ln, "grid dimensions must be positive integers"));
                    }
                    if dims.is_some() {
                        return Err(parse_err(ln, "duplicate grid block"));
                    }
                    Block::Grid {
                        nx: nx as usize,
                        ny: ny as usize,
                        line: ln,
                    }
                } else {
                    let (key, value) = line
                        .split_once(':')
                        .ok_or_else(|| parse_err(ln, format!("expected `key: value`, found {line:?}")))?;
                    let value = value.trim();
                    match key.trim() {
                        "format" => format = Some(parse_f64(ln, "format", value)?),
                        "name" => name = value.to_string(),
                        "cell_size" => cell_size = Some(parse_f64(ln, "cell_size", value)?),
                        "origin" => origin = Some(parse_numbers::<2>(ln, "origin", value)?),
                        other => return Err(parse_err(ln, format!("unknown field {other:?}"))),
                    }
                    Block::Top
                }
            }
            Block::Material(mut draft) => {
                if line == "end" {
                    materials.push(draft.finish()?);
                    Block::Top
                } else {
                    let (key, value) = line
                        .split_once(':')
                        .ok_or_else(|| parse_err(ln, format!("expected `key: value`, found {line:?}")))?;
                    let (key, value) = (key.trim(), value.trim());
                    match key {
                        "stiffness_mean" => draft.stiffness_mean = Some(parse_f64(ln, key, value)?),
                        "stiffness_sd" => draft.stiffness_sd = Some(parse_f64(ln, key, value)?),
                        "contact_offset" => draft.contact_offset = Some(parse_f64(ln, key, value)?),
                        "surface_height" => draft.surface_height = Some(parse_f64(ln, key, value)?),
                        "color" => {
                            let c = parse_numbers::<3>(ln, key, value)?;
                            if c.iter().any(|v| !(0.0..=255.0).contains(v) || v.fract() != 0.0) {
                                return Err(parse_err(ln, "color components must be integers 0-255"));
                            }
                            draft.color = Some([c[0] as u8, c[1] as u8, c[2] as u8]);
                        }
                        "mode" => {
                            let [f, d, a] = parse_numbers::<3>(ln, key, value)?;
                            draft.modes.push(ResonanceMode::new(f, d, a));
                        }
                        other => return Err(parse_err(ln, format!("unknown material field {other:?}"))),
                    }
                    Block::Material(draft)
                }
            }
            Block::Grid { nx, ny, line: gl } => {
                if line == "end" {
                    if grid.len() != nx * ny {
                        return Err(parse_err(
                            ln,
                            format!("grid declared {ny} rows, found {}", grid.len() / nx),
                        ));
                    }
                    dims = Some((nx, ny));
                    Block::Top
                } else {
                    let row = grid.len() / nx;
                    if row >= ny {
                        return Err(parse_err(ln, format!("grid declared {ny} rows (block at line {gl})")));
                    }
                    let cells: Vec<&str> = line.split_whitespace().collect();
                    if cells.len() != nx {
                        return Err(parse_err(
                            ln,
                            format!("grid row {row}: expected {nx} cells, found {}", cells.len()),
                        ));
                    }
                    for c in cells {
                        let v: u16 = c
                            .parse()
                            .map_err(|_| parse_err(ln, format!("grid row {row}: bad material index {c:?}")))?;
                        grid.push(v);
                    }
                    Block::Grid { nx, ny, line: gl }
                }
            }
        };
    }

    match block {
        Block::Top => {}
        Block::Material(d) => return Err(parse_err(d.line, format!("material {} missing `end`", d.name))),
        Block::Grid { line, .. } => return Err(parse_err(line, "grid block missing `end`")),
    }

    match format {
        Some(1.0) => {}
        Some(f) => return Err(invariant("format", format!("unsupported version {f}"))),
        None => return Err(invariant("format", "missing `format: 1` header")),
    }
    let cell_size = cell_size.ok_or_else(|| invariant("cell_size", "missing"))?;
    let origin = origin.unwrap_or([0.0, 0.0]);
    let (nx, ny) = dims.ok_or_else(|| invariant("grid", "missing grid block"))?;
    Phantom::new(name, nx, ny, grid, cell_size, origin, materials)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_doc() -> String {
        Phantom::concentric(presets::reference_materials(), &[3.0, 6.0, 9.0], 0.5, [100.0, 100.0], 24.0)
            .unwrap()
            .to_document()
    }

    #[test]
    fn concentric_reference_round_trips() {
        let doc = reference_doc();
        let p = load_phantom(&doc).unwrap();
        assert_eq!(p.materials().len(), 4);
        let k: Vec<f64> = p.materials().iter().map(|m| m.stiffness_mean).collect();
        assert_eq!(k, vec![30.3875, 23.7667, 7.8982, 0.3286]);
        assert_eq!(p.material_at(100.2, 100.2).unwrap().name, "PLA15");
        assert_eq!(p.material_at(100.0 + 7.5, 100.2).unwrap().name, "TPU");
        assert_eq!(p.to_document(), doc);
    }

    #[test]
    fn single_cell_phantom() {
        let doc = "format: 1\ncell_size: 2\nmaterial A\n stiffness_mean: 1\n stiffness_sd: 0\n surface_height: 5\n mode: 1000 10 1\nend\ngrid 1 1\n0\nend\n";
        let p = load_phantom(doc).unwrap();
        assert_eq!((p.nx(), p.ny()), (1, 1));
        assert!(p.material_at(1.0, 1.0).is_some());
        assert!(p.material_at(2.5, 1.0).is_none());
    }

    #[test]
    fn unknown_material_names_the_cell() {
        let doc = "format: 1\ncell_size: 1\nmaterial A\n stiffness_mean: 1\n stiffness_sd: 0\n surface_height: 5\n mode: 1000 10 1\nend\nmaterial B\n stiffness_mean: 2\n stiffness_sd: 0\n surface_height: 5\n mode: 900 10 1\nend\ngrid 2 2\n0 1\n5 0\nend\n";
        let err = load_phantom(doc).unwrap_err();
        assert_eq!(
            err,
            PhantomError::UnknownMaterial {
                row: 1,
                col: 0,
                index: 5,
                defined: 2
            }
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let doc = "format: 1\ncell_size: abc\n";
        match load_phantom(doc).unwrap_err() {
            PhantomError::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("cell_size"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let doc = "format: 1\ncell_size: 1\ngrid 2 1\n0\nend\n";
        assert!(matches!(load_phantom(doc), Err(PhantomError::Parse { line: 4, .. })));
    }

    #[test]
    fn invariant_violations_name_the_field() {
        let mut m = presets::tpu();
        m.stiffness_mean = -1.0;
        let err = Phantom::uniform(m, 1, 1, 1.0, [0.0, 0.0]).unwrap_err();
        assert!(matches!(err, PhantomError::Invariant { ref field, .. } if field == "TPU.stiffness_mean"));

        let mut m = presets::tpu();
        m.resonance_modes[0].frequency_hz = 30_000.0;
        let err = Phantom::uniform(m, 1, 1, 1.0, [0.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("mode[0].frequency"));

        let mut m = presets::tpu();
        m.resonance_modes.clear();
        assert!(Phantom::uniform(m, 1, 1, 1.0, [0.0, 0.0]).is_err());
        assert!(Phantom::uniform(presets::tpu(), 1, 1, 0.0, [0.0, 0.0]).is_err());
    }

    #[test]
    fn missing_or_wrong_format_header() {
        let body = "cell_size: 1\nmaterial A\n stiffness_mean: 1\n stiffness_sd: 0\n surface_height: 5\n mode: 1000 10 1\nend\ngrid 1 1\n0\nend\n";
        assert!(load_phantom(body).is_err());
        assert!(load_phantom(&format!("format: 2\n{body}")).is_err());
    }

    #[test]
    fn blocks_layout() {
        let p = Phantom::blocks(presets::reference_materials(), 10, 1.0, [50.0, 50.0]).unwrap();
        assert_eq!((p.nx(), p.ny()), (20, 20));
        assert_eq!(p.material_at(55.0, 55.0).unwrap().name, "PLA15");
        assert_eq!(p.material_at(65.0, 55.0).unwrap().name, "PLA5");
        assert_eq!(p.material_at(55.0, 65.0).unwrap().name, "TPU");
        assert_eq!(p.material_at(65.0, 65.0).unwrap().name, "Porcine");
    }
}
