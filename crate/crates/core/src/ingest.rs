//! Discovery of class-labelled, date-stamped images and the manifest CSV.
//!
//! Expected layout: `root/<class>/<file>`, where the class is the name of the
//! directory holding the file and the file name carries an 8-digit
//! `YYYYMMDD` stamp. Optional `boxNN` and modality (`rgb`, `ir1`, `ir2`,
//! `ms`) tokens are picked up when present.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::NaiveDate;
use ndarray::Array3;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Ir1,
    Ir2,
    Ms,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Ir1 => "ir1",
            Modality::Ir2 => "ir2",
            Modality::Ms => "ms",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(Modality::Rgb),
            "ir1" => Ok(Modality::Ir1),
            "ir2" => Ok(Modality::Ir2),
            "ms" => Ok(Modality::Ms),
            other => Err(Error::Data(format!("unknown modality {other:?}"))),
        }
    }
}

/// One ingested image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub path: PathBuf,
    pub label: String,
    pub date: NaiveDate,
    pub box_id: Option<u32>,
    pub modality: Option<Modality>,
}

impl ImageRecord {
    pub fn file_name(&self) -> &str {
        self.path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ScanOutcome {
    pub records: Vec<ImageRecord>,
    pub skipped: Vec<SkippedFile>,
    pub warnings: Vec<String>,
}

impl ScanOutcome {
    pub fn files_scanned(&self) -> usize {
        self.records.len() + self.skipped.len()
    }
}

/// Scan `root` for one sub-directory per class.
///
/// When `classes` is given every listed class directory must exist; otherwise
/// every sub-directory of `root` is taken as a class. Records come back sorted
/// by class, then date, then file name.
pub fn scan_dataset(root: &Path, classes: Option<&[&str]>) -> Result<ScanOutcome> {
    if !root.is_dir() {
        return Err(Error::MissingClassDir(root.to_path_buf()));
    }
    let class_names: Vec<String> = match classes {
        Some(names) => {
            for name in names {
                let dir = root.join(name);
                if !dir.is_dir() {
                    return Err(Error::MissingClassDir(dir));
                }
            }
            names.iter().map(|s| s.to_string()).collect()
        }
        None => {
            let mut names = Vec::new();
            for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
                let entry = entry.map_err(|e| Error::io(root, e))?;
                if entry.path().is_dir() {
                    if let Some(name) = entry.file_name().to_str() {
                        names.push(name.to_string());
                    }
                }
            }
            if names.is_empty() {
                return Err(Error::MissingClassDir(root.join("<class>")));
            }
            names
        }
    };

    let mut outcome = ScanOutcome::default();
    for class in &class_names {
        let dir = root.join(class);
        let mut files = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let path = entry.path();
            if path.is_file() {
                files.push(path);
            }
        }
        if files.is_empty() {
            let msg = format!("class directory {} is empty", dir.display());
            log::warn!("{msg}");
            outcome.warnings.push(msg);
            continue;
        }
        for path in files {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let date = match parse_date(&name) {
                Ok(d) => d,
                Err(e) => {
                    outcome.skipped.push(SkippedFile {
                        path,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            if let Err(e) = image::open(&path) {
                outcome.skipped.push(SkippedFile {
                    path,
                    reason: format!("undecodable image: {e}"),
                });
                continue;
            }
            let (box_id, modality) = parse_tokens(&name);
            outcome.records.push(ImageRecord {
                path,
                label: class.clone(),
                date,
                box_id,
                modality,
            });
        }
    }
    sort_records(&mut outcome.records);
    outcome.skipped.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(outcome)
}

/// Canonical record order: class, date, file name.
pub fn sort_records(records: &mut [ImageRecord]) {
    records.sort_by(|a, b| {
        a.label
            .cmp(&b.label)
            .then(a.date.cmp(&b.date))
            .then_with(|| a.file_name().cmp(b.file_name()))
            .then_with(|| a.path.cmp(&b.path))
    });
}

/// Date from the first 8-digit window of `filename` that is a real calendar
/// date, scanning left to right.
pub fn parse_date(filename: &str) -> Result<NaiveDate> {
    let bytes = filename.as_bytes();
    if bytes.len() >= 8 {
        for start in 0..=bytes.len() - 8 {
            let window = &bytes[start..start + 8];
            if !window.iter().all(u8::is_ascii_digit) {
                continue;
            }
            let digits = std::str::from_utf8(window).expect("ascii digits");
            let year: i32 = digits[0..4].parse().expect("digits");
            let month: u32 = digits[4..6].parse().expect("digits");
            let day: u32 = digits[6..8].parse().expect("digits");
            if let Some(date) = NaiveDate::from_ymd_opt(year, month, day) {
                return Ok(date);
            }
        }
    }
    Err(Error::DateParse(filename.to_string()))
}

fn token_regexes() -> &'static (Regex, Regex) {
    static RE: OnceLock<(Regex, Regex)> = OnceLock::new();
    RE.get_or_init(|| {
        (
            Regex::new(r"(?i)(?:^|[^a-z])box[_-]?(\d+)").expect("valid regex"),
            Regex::new(r"(?i)(?:^|[_\-. ])(rgb|ir1|ir2|ms)(?:$|[_\-. ])").expect("valid regex"),
        )
    })
}

/// Optional `boxNN` and modality tokens of a file name.
pub fn parse_tokens(filename: &str) -> (Option<u32>, Option<Modality>) {
    let (box_re, mod_re) = token_regexes();
    let box_id = box_re
        .captures(filename)
        .and_then(|c| c.get(1))
        .and_then(|m| m.as_str().parse().ok());
    let modality = mod_re
        .captures(filename)
        .and_then(|c| c.get(1))
        .and_then(|m| m.as_str().parse().ok());
    (box_id, modality)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NitrogenLevel {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaterLevel {
    Sufficient,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeedPressure {
    None,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentEntry {
    pub box_id: u32,
    pub nitrogen: NitrogenLevel,
    pub water: WaterLevel,
    pub weed: WeedPressure,
}

/// The combined-stress treatment matrix: (boxes, nitrogen, water, weeds).
const TREATMENTS: &[(&[u32], NitrogenLevel, WaterLevel, WeedPressure)] = {
    use NitrogenLevel as N;
    use WaterLevel as Wa;
    use WeedPressure as We;
    &[
        (&[22, 23, 24], N::Low, Wa::Sufficient, We::None),
        (&[4, 5, 6], N::Medium, Wa::Sufficient, We::None),
        (&[7, 8, 9], N::High, Wa::Sufficient, We::Medium),
        (&[10, 11, 12], N::High, Wa::Sufficient, We::High),
        (&[13, 14, 15], N::Medium, Wa::Low, We::None),
        (&[16], N::High, Wa::Sufficient, We::High),
        (&[17], N::High, Wa::Sufficient, We::High),
        (&[18], N::High, Wa::Sufficient, We::High),
        (&[25, 26, 27], N::Low, Wa::Sufficient, We::Medium),
        (&[19, 20, 21], N::Medium, Wa::Low, We::High),
        (&[28, 29, 30], N::Low, Wa::Low, We::None),
    ]
};

pub fn treatment_lookup(box_id: u32) -> Result<TreatmentEntry> {
    TREATMENTS
        .iter()
        .find(|(boxes, ..)| boxes.contains(&box_id))
        .map(|&(_, nitrogen, water, weed)| TreatmentEntry {
            box_id,
            nitrogen,
            water,
            weed,
        })
        .ok_or(Error::UnknownBox(box_id))
}

/// Every box of the treatment matrix, ascending.
pub fn treatment_boxes() -> Vec<u32> {
    let mut boxes: Vec<u32> = TREATMENTS
        .iter()
        .flat_map(|(b, ..)| b.iter().copied())
        .collect();
    boxes.sort_unstable();
    boxes
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    path: String,
    label: String,
    date: String,
    #[serde(rename = "box")]
    box_id: Option<u32>,
    modality: Option<Modality>,
}

/// Write the manifest CSV (`path,label,date,box,modality`). Absent box or
/// modality values are empty cells.
pub fn write_manifest(records: &[ImageRecord], out: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Data("refusing to write an empty manifest".into()));
    }
    let file = fs::File::create(out).map_err(|e| Error::io(out, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for r in records {
        writer.serialize(ManifestRow {
            path: r.path.to_string_lossy().into_owned(),
            label: r.label.clone(),
            date: r.date.format("%Y-%m-%d").to_string(),
            box_id: r.box_id,
            modality: r.modality,
        })?;
    }
    writer.flush().map_err(|e| Error::io(out, e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ImageRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut records = Vec::new();
    for row in reader.deserialize() {
        let row: ManifestRow = row?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| Error::Data(format!("bad manifest date {:?}: {e}", row.date)))?;
        records.push(ImageRecord {
            path: PathBuf::from(row.path),
            label: row.label,
            date,
            box_id: row.box_id,
            modality: row.modality,
        });
    }
    Ok(records)
}

/// Sibling skip-list path: `<manifest>.skipped.txt`.
pub fn skip_list_path(manifest: &Path) -> PathBuf {
    let mut name = manifest.as_os_str().to_owned();
    name.push(".skipped.txt");
    PathBuf::from(name)
}

pub fn write_skip_list(skipped: &[SkippedFile], manifest: &Path) -> Result<PathBuf> {
    let path = skip_list_path(manifest);
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for s in skipped {
        writeln!(file, "{}\t{}", s.path.display(), s.reason).map_err(|e| Error::io(&path, e))?;
    }
    Ok(path)
}

/// Decode an image as a 3-channel `(height, width, 3)` array in `[0, 1]`.
///
/// Single-band images are replicated over the three channels; images with
/// more than three bands keep the first three.
pub fn load_rgb(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw();
    let mut arr = Array3::from_shape_vec((h as usize, w as usize, 3), data)
        .map_err(|e| Error::Shape(e.to_string()))?;
    arr.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(arr)
}
