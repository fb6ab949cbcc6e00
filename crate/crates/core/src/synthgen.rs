//! Seeded synthetic dataset in which classes differ only in how a disc
//! changes size over time.
//!
//! Every (class, box) pair gets a random base radius. At date index `t` the
//! disc radius is `base + rate * (t - (dates - 1) / 2) + jitter`, so the
//! radius distribution of single frames is almost the same for every class
//! while the frame-to-frame change is set by the class rate. Disc centres
//! move by whole multiples of `offset_step` pixels.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: usize,
    pub boxes_per_class: usize,
    pub dates: usize,
    pub image_side: usize,
    pub seed: u64,
    /// Radius change per date index, one entry per class (pixels). Empty
    /// means evenly spaced rates in `[-0.6, 0.6]`.
    pub rates: Vec<f64>,
    pub base_radius: (f64, f64),
    pub radius_jitter: f64,
    pub offset_step: usize,
    pub start_date: NaiveDate,
    pub date_step_days: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 3,
            boxes_per_class: 9,
            dates: 14,
            image_side: 80,
            seed: 42,
            rates: Vec::new(),
            base_radius: (8.0, 24.0),
            radius_jitter: 0.05,
            offset_step: 8,
            start_date: NaiveDate::from_ymd_opt(2016, 4, 15).expect("valid date"),
            date_step_days: 7,
        }
    }
}

impl SynthConfig {
    pub fn class_names(&self) -> Vec<String> {
        if self.classes == 3 {
            ["low", "medium", "high"].iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.classes).map(|i| format!("class{i}")).collect()
        }
    }

    pub fn resolved_rates(&self) -> Vec<f64> {
        if !self.rates.is_empty() {
            return self.rates.clone();
        }
        match self.classes {
            0 => Vec::new(),
            1 => vec![0.0],
            n => (0..n)
                .map(|i| -0.6 + 1.2 * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.boxes_per_class == 0 || self.dates == 0 {
            return Err(Error::Config(
                "classes, boxes_per_class and dates must all be positive".into(),
            ));
        }
        if self.boxes_per_class * self.classes > 99 {
            return Err(Error::Config("at most 99 boxes fit the boxNN naming".into()));
        }
        if self.image_side < 8 {
            return Err(Error::Config("image_side must be at least 8".into()));
        }
        let rates = self.resolved_rates();
        if rates.len() != self.classes {
            return Err(Error::Config(format!(
                "{} rates given for {} classes",
                rates.len(),
                self.classes
            )));
        }
        for (i, a) in rates.iter().enumerate() {
            if !a.is_finite() || rates[..i].contains(a) {
                return Err(Error::Config(format!("rates must be finite and distinct: {rates:?}")));
            }
        }
        let (lo, hi) = self.base_radius;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config("base_radius must satisfy 0 < lo <= hi".into()));
        }
        Ok(())
    }

    fn max_offset(&self) -> i64 {
        let half_span = (self.dates as f64 - 1.0) / 2.0;
        let max_rate = self.resolved_rates().iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let r_max = self.base_radius.1 + max_rate * half_span + self.radius_jitter;
        let room = self.image_side as f64 / 2.0 - r_max;
        if self.offset_step == 0 || room < self.offset_step as f64 {
            0
        } else {
            self.offset_step as i64
        }
    }
}

/// Geometry of one synthetic image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFrame {
    pub class_index: usize,
    pub label: String,
    pub box_id: u32,
    pub date_index: usize,
    pub date: NaiveDate,
    pub radius: f64,
    pub offset: (i64, i64),
}

impl SynthFrame {
    pub fn file_name(&self) -> String {
        format!("box{:02}_{}_syn.png", self.box_id, self.date.format("%Y%m%d"))
    }
}

/// Draw the geometry of every image in class, box, date order.
pub fn plan(config: &SynthConfig) -> Result<Vec<SynthFrame>> {
    config.validate()?;
    let names = config.class_names();
    let rates = config.resolved_rates();
    let centre = (config.dates as f64 - 1.0) / 2.0;
    let max_offset = config.max_offset();
    let step = config.offset_step.max(1) as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut frames = Vec::with_capacity(config.classes * config.boxes_per_class * config.dates);
    for (ci, (name, rate)) in names.iter().zip(&rates).enumerate() {
        for b in 0..config.boxes_per_class {
            let box_id = (ci * config.boxes_per_class + b + 1) as u32;
            // One base radius per stratum keeps every class's size
            // distribution alike even with few boxes.
            let (lo, hi) = config.base_radius;
            let base = lo + (b as f64 + rng.random::<f64>()) / config.boxes_per_class as f64 * (hi - lo);
            for t in 0..config.dates {
                let jitter = if config.radius_jitter > 0.0 {
                    rng.random_range(-config.radius_jitter..=config.radius_jitter)
                } else {
                    0.0
                };
                let offset = if max_offset > 0 {
                    let n = max_offset / step;
                    (
                        rng.random_range(-n..=n) * step,
                        rng.random_range(-n..=n) * step,
                    )
                } else {
                    (0, 0)
                };
                let date = config.start_date
                    + chrono::Duration::days(t as i64 * config.date_step_days as i64);
                frames.push(SynthFrame {
                    class_index: ci,
                    label: name.clone(),
                    box_id,
                    date_index: t,
                    date,
                    radius: (base + rate * (t as f64 - centre) + jitter).max(0.0),
                    offset,
                });
            }
        }
    }
    Ok(frames)
}

/// Antialiased white disc on black, 8-bit grayscale.
pub fn render(frame: &SynthFrame, side: usize) -> GrayImage {
    let cx = side as f64 / 2.0 + frame.offset.0 as f64;
    let cy = side as f64 / 2.0 + frame.offset.1 as f64;
    GrayImage::from_fn(side as u32, side as u32, |x, y| {
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        let d = (dx * dx + dy * dy).sqrt();
        let coverage = (frame.radius - d + 0.5).clamp(0.0, 1.0);
        Luma([(coverage * 255.0).round() as u8])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub seed: u64,
    pub classes: Vec<String>,
    pub rates: Vec<f64>,
    pub boxes_per_class: usize,
    pub dates: usize,
    pub image_side: usize,
    pub images_per_class: usize,
    pub total_images: usize,
    /// Image paths relative to the output directory.
    pub files: Vec<PathBuf>,
}

/// Write the dataset under `out/<class>/boxNN_YYYYMMDD_syn.png` plus
/// `out/summary.json`.
pub fn generate(config: &SynthConfig, out: &Path) -> Result<SynthSummary> {
    let frames = plan(config)?;
    let names = config.class_names();
    for name in &names {
        let dir = out.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut files = Vec::with_capacity(frames.len());
    for frame in &frames {
        let path = out.join(&frame.label).join(frame.file_name());
        render(frame, config.image_side)
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(&path, io),
                other => Error::Image {
                    path: path.clone(),
                    message: other.to_string(),
                },
            })?;
        files.push(Path::new(&frame.label).join(frame.file_name()));
    }
    let summary = SynthSummary {
        seed: config.seed,
        classes: names,
        rates: config.resolved_rates(),
        boxes_per_class: config.boxes_per_class,
        dates: config.dates,
        image_side: config.image_side,
        images_per_class: config.boxes_per_class * config.dates,
        total_images: frames.len(),
        files,
    };
    let summary_path = out.join("summary.json");
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(&summary_path, json).map_err(|e| Error::io(&summary_path, e))?;
    Ok(summary)
}

/// Least-squares slope of radius against date index.
pub fn radius_slope(radii: &[f64]) -> f64 {
    let n = radii.len() as f64;
    let mean_t = (n - 1.0) / 2.0;
    let mean_r = radii.iter().sum::<f64>() / n;
    let (num, den) = radii.iter().enumerate().fold((0.0, 0.0), |(num, den), (t, r)| {
        let dt = t as f64 - mean_t;
        (num + dt * (r - mean_r), den + dt * dt)
    });
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}
