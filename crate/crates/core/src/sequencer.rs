//! Sliding-window sequences, label encoding, stratified folds and batch
//! loading.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{s, Array3, Array4, Array5};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{load_rgb, ImageRecord, Modality};

/// How records are grouped before windowing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One group per class, mixing boxes and modalities.
    #[default]
    ClassOnly,
    /// One group per (class, box, modality).
    ClassBoxModality,
}

impl std::str::FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_only" => Ok(Grouping::ClassOnly),
            "class_box_modality" => Ok(Grouping::ClassBoxModality),
            other => Err(Error::Config(format!("unknown grouping {other:?}"))),
        }
    }
}

/// Class name to index mapping, ascending lexicographic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEncoder {
    classes: Vec<String>,
}

impl LabelEncoder {
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.as_str().cmp(class)).ok()
    }

    pub fn one_hot(&self, index: usize) -> Vec<f32> {
        let mut v = vec![0.0; self.classes.len()];
        v[index] = 1.0;
        v
    }
}

pub fn encode_labels<S: AsRef<str>>(class_names: &[S]) -> Result<LabelEncoder> {
    if class_names.is_empty() {
        return Err(Error::Data("no class names to encode".into()));
    }
    let mut classes: Vec<String> = class_names.iter().map(|s| s.as_ref().to_string()).collect();
    classes.sort();
    if let Some(w) = classes.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Data(format!("duplicate class name {:?}", w[0])));
    }
    Ok(LabelEncoder { classes })
}

/// `L` record indices sharing one class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub frames: Vec<usize>,
    pub label: String,
    pub label_index: usize,
    pub label_onehot: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct SequenceSet {
    pub samples: Vec<SequenceSample>,
    pub encoder: LabelEncoder,
    pub warnings: Vec<String>,
}

impl SequenceSet {
    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label_index).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    label: String,
    box_id: Option<u32>,
    modality: Option<Modality>,
}

/// Emit every window of `length` consecutive records (step `stride`) within
/// each group, groups sorted by date then file name.
///
/// Groups shorter than `length` produce no windows and a warning.
pub fn build_sequences(
    records: &[ImageRecord],
    length: usize,
    grouping: Grouping,
    stride: usize,
) -> Result<SequenceSet> {
    if length == 0 {
        return Err(Error::Config("sequence length must be at least 1".into()));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    if records.is_empty() {
        return Err(Error::Data("no records to sequence".into()));
    }
    let classes: BTreeSet<&str> = records.iter().map(|r| r.label.as_str()).collect();
    let classes: Vec<&str> = classes.into_iter().collect();
    let encoder = encode_labels(&classes)?;

    let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = match grouping {
            Grouping::ClassOnly => GroupKey {
                label: r.label.clone(),
                box_id: None,
                modality: None,
            },
            Grouping::ClassBoxModality => GroupKey {
                label: r.label.clone(),
                box_id: r.box_id,
                modality: r.modality,
            },
        };
        groups.entry(key).or_default().push(i);
    }

    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    for (key, mut members) in groups {
        members.sort_by(|&a, &b| {
            let (ra, rb) = (&records[a], &records[b]);
            ra.date
                .cmp(&rb.date)
                .then_with(|| ra.file_name().cmp(rb.file_name()))
                .then(a.cmp(&b))
        });
        if members.len() < length {
            let msg = format!(
                "group {:?}/box {:?}/{:?} has {} images, fewer than sequence length {}",
                key.label,
                key.box_id,
                key.modality,
                members.len(),
                length
            );
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let label_index = encoder.index_of(&key.label).expect("label was encoded");
        let onehot = encoder.one_hot(label_index);
        for start in (0..=members.len() - length).step_by(stride) {
            samples.push(SequenceSample {
                frames: members[start..start + length].to_vec(),
                label: key.label.clone(),
                label_index,
                label_onehot: onehot.clone(),
            });
        }
    }
    Ok(SequenceSet {
        samples,
        encoder,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
}

/// Stratified k-fold assignment.
///
/// Each class's indices are shuffled with a ChaCha8 stream seeded by `seed`
/// and dealt round-robin over the folds. The dealing offset of each class
/// continues where the previous class stopped, so fold sizes stay balanced
/// overall as well as per class.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((class, members)) = by_class.iter().find(|(_, m)| m.len() < k) {
        return Err(Error::Data(format!(
            "class {class} has {} samples, fewer than {k} folds",
            members.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; labels.len()];
    let mut offset = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for (pos, &idx) in members.iter().enumerate() {
            fold_of[idx] = (pos + offset) % k;
        }
        offset = (offset + members.len()) % k;
    }

    Ok((0..k)
        .map(|fold| {
            let (val_ids, train_ids) = (0..labels.len()).partition(|&i| fold_of[i] == fold);
            FoldSplit {
                fold_index: fold,
                train_ids,
                val_ids,
            }
        })
        .collect())
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(img: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (in_h, in_w, c) = img.dim();
    if in_h == out_h && in_w == out_w {
        return img.clone();
    }
    let sy = in_h as f32 / out_h as f32;
    let sx = in_w as f32 / out_w as f32;
    let coord = |o: usize, scale: f32, len: usize| -> (usize, usize, f32) {
        let pos = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
        let lo = (pos.floor() as usize).min(len - 1);
        let hi = (lo + 1).min(len - 1);
        (lo, hi, pos - lo as f32)
    };
    let mut out = Array3::zeros((out_h, out_w, c));
    for y in 0..out_h {
        let (y0, y1, ty) = coord(y, sy, in_h);
        for x in 0..out_w {
            let (x0, x1, tx) = coord(x, sx, in_w);
            for ch in 0..c {
                let a = img[[y0, x0, ch]];
                let b = img[[y0, x1, ch]];
                let top = a + (b - a) * tx;
                let a = img[[y1, x0, ch]];
                let b = img[[y1, x1, ch]];
                let bottom = a + (b - a) * tx;
                out[[y, x, ch]] = (top + (bottom - top) * ty).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Load one frame as `(side, side, 3)` in `[0, 1]`.
pub fn load_frame(path: &Path, side: usize) -> Result<Array3<f32>> {
    let img = load_rgb(path)?;
    Ok(resize_bilinear(&img, side, side))
}

/// Load single images as `(n, side, side, 3)`.
pub fn load_image_batch(records: &[ImageRecord], ids: &[usize], side: usize) -> Result<Array4<f32>> {
    let mut out = Array4::zeros((ids.len(), side, side, 3));
    for (b, &id) in ids.iter().enumerate() {
        let frame = load_frame(&records[id].path, side)?;
        out.slice_mut(s![b, .., .., ..]).assign(&frame);
    }
    Ok(out)
}

/// Load sequences as `(batch, L, side, side, 3)`, frames in sample order.
pub fn load_sequence_batch(
    samples: &[SequenceSample],
    records: &[ImageRecord],
    side: usize,
) -> Result<Array5<f32>> {
    let length = samples.first().map_or(0, |s| s.frames.len());
    if samples.iter().any(|s| s.frames.len() != length) {
        return Err(Error::Shape("sequences of unequal length in one batch".into()));
    }
    let mut out = Array5::zeros((samples.len(), length, side, side, 3));
    for (b, sample) in samples.iter().enumerate() {
        for (t, &id) in sample.frames.iter().enumerate() {
            let record = records
                .get(id)
                .ok_or_else(|| Error::Data(format!("frame index {id} out of range")))?;
            let frame = load_frame(&record.path, side)?;
            out.slice_mut(s![b, t, .., .., ..]).assign(&frame);
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SequenceAudit {
    pub frames: Vec<String>,
    pub label: String,
}

/// Sequence list as JSON: frame paths plus label.
pub fn sequences_to_json(samples: &[SequenceSample], records: &[ImageRecord]) -> Result<String> {
    let audit: Vec<SequenceAudit> = samples
        .iter()
        .map(|s| SequenceAudit {
            frames: s
                .frames
                .iter()
                .map(|&i| records[i].path.to_string_lossy().into_owned())
                .collect(),
            label: s.label.clone(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&audit)?)
}

/// Fold splits as JSON keyed by fold index.
pub fn folds_to_json(folds: &[FoldSplit]) -> Result<String> {
    let map: BTreeMap<String, &FoldSplit> =
        folds.iter().map(|f| (f.fold_index.to_string(), f)).collect();
    Ok(serde_json::to_string_pretty(&map)?)
}
