//! Minimal raster drawing: filled rectangles, lines, 8x8 bitmap text and
//! two chart kinds built from them.

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{Rgb, RgbImage};

use super::ConfusionMatrix;

pub(super) const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
pub(super) const TRAIN: Rgb<u8> = Rgb([31, 119, 180]);
pub(super) const VAL: Rgb<u8> = Rgb([255, 127, 14]);

pub(super) struct Canvas {
    pub img: RgbImage,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        Canvas {
            img: RgbImage::from_pixel(width, height, WHITE),
        }
    }

    fn put(&mut self, x: i64, y: i64, color: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, color);
        }
    }

    pub fn rect(&mut self, x: i64, y: i64, w: i64, h: i64, color: Rgb<u8>) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, color);
            }
        }
    }

    /// A line `thickness` pixels wide.
    pub fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), thickness: i64, color: Rgb<u8>) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        let half = thickness / 2;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = (x0 + t * (x1 - x0)).round() as i64;
            let y = (y0 + t * (y1 - y0)).round() as i64;
            self.rect(x - half, y - half, thickness, thickness, color);
        }
    }

    pub fn text(&mut self, x: i64, y: i64, s: &str, scale: i64, color: Rgb<u8>) {
        for (k, ch) in s.chars().enumerate() {
            let glyph = BASIC_FONTS.get(ch).or_else(|| BASIC_FONTS.get('?')).unwrap_or([0; 8]);
            let ox = x + k as i64 * 8 * scale;
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..8 {
                    if bits & (1 << col) != 0 {
                        self.rect(ox + col * scale, y + row as i64 * scale, scale, scale, color);
                    }
                }
            }
        }
    }

    pub fn text_centered(&mut self, cx: i64, y: i64, s: &str, scale: i64, color: Rgb<u8>) {
        self.text(cx - text_width(s, scale) / 2, y, s, scale, color);
    }
}

pub(super) fn text_width(s: &str, scale: i64) -> i64 {
    s.chars().count() as i64 * 8 * scale
}

pub(super) struct Series<'a> {
    pub label: &'a str,
    pub values: Vec<f64>,
    pub color: Rgb<u8>,
}

/// One line chart of per-epoch values inside the box `(x, y, w, h)`.
pub(super) fn line_chart(c: &mut Canvas, (x, y, w, h): (i64, i64, i64, i64), title: &str, series: &[Series], unit_range: bool) {
    let (left, right, top, bottom) = (x + 60, x + w - 10, y + 30, y + h - 30);
    c.text_centered((left + right) / 2, y + 8, title, 1, BLACK);

    let finite = series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = if unit_range {
        (0.0, 1.0)
    } else {
        finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
    };
    if !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let epochs = series.iter().map(|s| s.values.len()).max().unwrap_or(0).max(1);
    let px = |i: usize| left as f64 + if epochs == 1 { 0.0 } else { i as f64 / (epochs - 1) as f64 * (right - left) as f64 };
    let py = |v: f64| bottom as f64 - (v - lo) / (hi - lo) * (bottom - top) as f64;

    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let yy = py(v).round() as i64;
        c.rect(left, yy, right - left, 1, GRID);
        let label = format!("{v:.2}");
        c.text(left - 6 - text_width(&label, 1), yy - 4, &label, 1, BLACK);
    }
    let tick_every = epochs.div_ceil(10).max(1);
    for i in (0..epochs).step_by(tick_every) {
        let xx = px(i).round() as i64;
        c.rect(xx, bottom, 1, 4, BLACK);
        c.text_centered(xx, bottom + 8, &(i + 1).to_string(), 1, BLACK);
    }
    c.rect(left, top, 1, bottom - top + 1, BLACK);
    c.rect(left, bottom, right - left + 1, 1, BLACK);
    c.text_centered((left + right) / 2, bottom + 20, "epoch", 1, BLACK);

    for s in series {
        let pts: Vec<(f64, f64)> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| (px(i), py(v.clamp(lo, hi))))
            .collect();
        for pair in pts.windows(2) {
            c.line(pair[0], pair[1], 2, s.color);
        }
        if let [only] = pts.as_slice() {
            c.rect(only.0 as i64 - 2, only.1 as i64 - 2, 5, 5, s.color);
        }
    }
    for (k, s) in series.iter().enumerate() {
        let ly = top + 6 + 14 * k as i64;
        c.rect(right - 90, ly + 3, 16, 3, s.color);
        c.text(right - 68, ly, s.label, 1, BLACK);
    }
}

fn blues(t: f64) -> Rgb<u8> {
    let (a, b) = ([247.0, 251.0, 255.0], [8.0, 48.0, 107.0]);
    let t = t.clamp(0.0, 1.0);
    Rgb(std::array::from_fn(|k| (a[k] + t * (b[k] - a[k])).round() as u8))
}

/// Annotated heat map of a confusion matrix with class names on both axes.
pub(super) fn confusion_image(title: &str, cm: &ConfusionMatrix, classes: &[String]) -> Canvas {
    let n = cm.len().max(1) as i64;
    let cell = 80;
    let label_w = classes.iter().map(|s| text_width(s, 1)).max().unwrap_or(0).max(40) + 30;
    let (left, top) = (label_w, 50);
    let width = left + n * cell + 30;
    let height = top + n * cell + 60;
    let mut c = Canvas::new(width as u32, height as u32);
    c.text_centered(left + n * cell / 2, 14, title, 1, BLACK);
    let max = cm.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    for (i, row) in cm.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            let t = count as f64 / max;
            let (x, y) = (left + j as i64 * cell, top + i as i64 * cell);
            c.rect(x, y, cell, cell, blues(t));
            let ink = if t > 0.5 { WHITE } else { BLACK };
            c.text_centered(x + cell / 2, y + cell / 2 - 8, &count.to_string(), 2, ink);
        }
    }
    for (k, name) in classes.iter().enumerate() {
        let mid = k as i64 * cell + cell / 2;
        c.text(left - 10 - text_width(name, 1), top + mid - 4, name, 1, BLACK);
        c.text_centered(left + mid, top + n * cell + 10, name, 1, BLACK);
    }
    c.text_centered(left + n * cell / 2, top + n * cell + 32, "predicted", 1, BLACK);
    c.text(4, top - 16, "true", 1, BLACK);
    c
}
