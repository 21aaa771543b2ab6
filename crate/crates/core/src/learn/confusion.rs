use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::LearnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    /// Rows are ground truth, columns predictions.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[usize], pred: &[usize], class_names: Vec<String>) -> Result<Self, LearnError> {
        if truth.is_empty() {
            return Err(LearnError::Empty);
        }
        if truth.len() != pred.len() {
            return Err(LearnError::DimensionMismatch {
                expected: truth.len(),
                got: pred.len(),
            });
        }
        let c = class_names.len();
        let mut counts = vec![vec![0; c]; c];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= c || p >= c {
                return Err(LearnError::BadLabel {
                    label: t.max(p),
                    classes: c,
                });
            }
            counts[t][p] += 1;
        }
        Ok(Self { class_names, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: usize = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total() as f64
    }

    /// Per-class recall; NaN for classes absent from the evaluation set.
    pub fn recall(&self) -> Vec<f64> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| row[i] as f64 / row.iter().sum::<usize>() as f64)
            .collect()
    }

    /// Fraction of all samples of classes `a` and `b` predicted as the other one.
    pub fn pair_confusion(&self, a: usize, b: usize) -> f64 {
        let off = self.counts[a][b] + self.counts[b][a];
        let tot: usize = self.counts[a].iter().sum::<usize>() + self.counts[b].iter().sum::<usize>();
        off as f64 / tot as f64
    }

    pub fn write_csv(&self, w: impl Write) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["truth\\predicted".to_string()];
        header.extend(self.class_names.iter().cloned());
        out.write_record(&header)?;
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|c| c.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()
    }

    /// Heatmap of row-normalized counts with the raw count drawn in each cell.
    pub fn render(&self) -> RgbImage {
        const CELL: u32 = 48;
        let c = self.counts.len() as u32;
        let mut img = RgbImage::from_pixel(c * CELL, c * CELL, Rgb([255, 255, 255]));
        for (i, row) in self.counts.iter().enumerate() {
            let sum = row.iter().sum::<usize>().max(1) as f64;
            for (j, &n) in row.iter().enumerate() {
                let f = n as f64 / sum;
                let shade = [
                    (255.0 - 225.0 * f) as u8,
                    (255.0 - 160.0 * f) as u8,
                    (255.0 - 60.0 * f) as u8,
                ];
                let (x0, y0) = (j as u32 * CELL, i as u32 * CELL);
                for y in y0..y0 + CELL {
                    for x in x0..x0 + CELL {
                        let edge = x == x0 || y == y0;
                        img.put_pixel(x, y, Rgb(if edge { [120, 120, 120] } else { shade }));
                    }
                }
                let ink = if f > 0.5 { [255, 255, 255] } else { [0, 0, 0] };
                draw_number(&mut img, &n.to_string(), x0 + CELL / 2, y0 + CELL / 2, 3, ink);
            }
        }
        img
    }

    pub fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        self.render().save(path)
    }
}

/// 3×5 digit glyphs, one row per u8 (low 3 bits, MSB left).
const GLYPHS: [[u8; 5]; 10] = [
    [7, 5, 5, 5, 7],
    [2, 6, 2, 2, 7],
    [7, 1, 7, 4, 7],
    [7, 1, 7, 1, 7],
    [5, 5, 7, 1, 1],
    [7, 4, 7, 1, 7],
    [7, 4, 7, 5, 7],
    [7, 1, 1, 1, 1],
    [7, 5, 7, 5, 7],
    [7, 5, 7, 1, 7],
];

/// Draw decimal digits centred on `(cx, cy)`.
pub fn draw_number(img: &mut RgbImage, text: &str, cx: u32, cy: u32, scale: u32, color: [u8; 3]) {
    let n = text.chars().filter(char::is_ascii_digit).count() as u32;
    let width = n * 4 * scale - scale;
    let x_start = cx.saturating_sub(width / 2);
    let y_start = cy.saturating_sub(5 * scale / 2);
    for (k, ch) in text.chars().filter(char::is_ascii_digit).enumerate() {
        let glyph = GLYPHS[ch as usize - '0' as usize];
        for (r, bits) in glyph.iter().enumerate() {
            for col in 0..3u32 {
                if bits >> (2 - col) & 1 == 1 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let x = x_start + (k as u32 * 4 + col) * scale + dx;
                            let y = y_start + r as u32 * scale + dy;
                            if x < img.width() && y < img.height() {
                                img.put_pixel(x, y, Rgb(color));
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let truth: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let m = ConfusionMatrix::from_predictions(&truth, &truth, names(4)).unwrap();
        assert_eq!(m.accuracy(), 1.0);
        assert!((0..4).all(|i| (0..4).all(|j| (m.counts[i][j] > 0) == (i == j))));
        let m = ConfusionMatrix::from_predictions(&truth, &[2; 40], names(4)).unwrap();
        assert_eq!(m.accuracy(), 0.25);
        assert_eq!(m.total(), 40);
        assert_eq!(m.recall(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn csv_and_png() {
        let m = ConfusionMatrix::from_predictions(&[0, 1, 1], &[0, 0, 1], names(2)).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "truth\\predicted,c0,c1\nc0,1,0\nc1,1,1\n");
        let img = m.render();
        assert_eq!(img.dimensions(), (96, 96));
        assert!(ConfusionMatrix::from_predictions(&[], &[], names(2)).is_err());
    }
}
